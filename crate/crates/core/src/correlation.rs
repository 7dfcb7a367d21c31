//! Dense feature dissimilarity over the displacement space.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::features::FeatureVolume;
use crate::geometry::{
    axis_weights, stencil_from_axes, AxisWeights, ControlGrid, DisplacementSpace,
};
use crate::pipeline::{RowExecutor, Sequential};

/// Per-control-point cost over every displacement, shaped
/// `(K₁, K₂, K₃, S, S, S)` row-major: one contiguous row of `S³` values per
/// control point. Lower is better.
#[derive(Clone, Debug, PartialEq)]
pub struct CostTensor {
    grid: ControlGrid,
    space: DisplacementSpace,
    data: Vec<f32>,
}

impl CostTensor {
    pub fn new(grid: ControlGrid, space: DisplacementSpace, data: Vec<f32>) -> Result<Self> {
        let expected = grid.len() * space.len();
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost tensor"));
        }
        Ok(Self { grid, space, data })
    }

    pub fn filled(grid: ControlGrid, space: DisplacementSpace, value: f32) -> Self {
        Self {
            grid,
            space,
            data: vec![value; grid.len() * space.len()],
        }
    }

    pub fn grid(&self) -> ControlGrid {
        self.grid
    }

    pub fn space(&self) -> DisplacementSpace {
        self.space
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn row_len(&self) -> usize {
        self.space.len()
    }

    pub fn row(&self, point: usize) -> &[f32] {
        let n = self.row_len();
        &self.data[point * n..(point + 1) * n]
    }

    pub fn row_mut(&mut self, point: usize) -> &mut [f32] {
        let n = self.row_len();
        &mut self.data[point * n..(point + 1) * n]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.row_len())
    }

    /// Displacement index of the smallest cost per control point (first one
    /// on ties).
    pub fn argmin(&self) -> Vec<usize> {
        self.rows()
            .map(|row| {
                let mut best = 0;
                for (i, &v) in row.iter().enumerate() {
                    if v < row[best] {
                        best = i;
                    }
                }
                best
            })
            .collect()
    }

    pub fn check_finite(&self) -> Result<()> {
        if self.data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("cost tensor"));
        }
        Ok(())
    }
}

/// Feature dissimilarity measure.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
#[non_exhaustive]
pub enum Metric {
    /// Mean squared difference across channels.
    #[default]
    Mse,
}

/// Sequential [`dissimilarity_tensor_with`].
pub fn dissimilarity_tensor(
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    grid: ControlGrid,
    space: DisplacementSpace,
    metric: Metric,
) -> Result<CostTensor> {
    dissimilarity_tensor_with(&Sequential, fixed, moving, grid, space, metric)
}

/// `cost(k, d) = 1/|c| Σ_c (fixed_c(k) - moving_c(k + d))²`, both feature
/// volumes sampled trilinearly with border clamping. Rows are independent,
/// so the executor may process them in any order.
pub fn dissimilarity_tensor_with<E: RowExecutor>(
    exec: &E,
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    grid: ControlGrid,
    space: DisplacementSpace,
    metric: Metric,
) -> Result<CostTensor> {
    if fixed.channels() != moving.channels() {
        return Err(Error::ChannelMismatch {
            fixed: fixed.channels(),
            moving: moving.channels(),
        });
    }
    let mut data = vec![0.0f32; grid.len() * space.len()];
    exec.for_each_row(&mut data, space.len(), |point, row| {
        cost_row(fixed, moving, grid, space, metric, point, row);
    });
    CostTensor::new(grid, space, data)
}

fn cost_row(
    fixed: &FeatureVolume,
    moving: &FeatureVolume,
    grid: ControlGrid,
    space: DisplacementSpace,
    metric: Metric,
    point: usize,
    row: &mut [f32],
) {
    let channels = fixed.channels();
    let p = grid.point(point);
    let mut reference = vec![0.0f32; channels];
    fixed.sample_into(p, &mut reference);
    let steps = space.steps();
    let dims = moving.dims();
    let per_axis: [Vec<AxisWeights>; 3] = core::array::from_fn(|a| {
        (0..steps)
            .map(|s| axis_weights(p[a] + space.offset_1d(s), dims[a]))
            .collect()
    });
    let mut buf = vec![0.0f32; channels];
    let data = moving.data();
    let inv = 1.0 / channels as f32;
    let mut at = 0;
    for w0 in &per_axis[0] {
        for w1 in &per_axis[1] {
            for w2 in &per_axis[2] {
                let st = stencil_from_axes(dims, *w0, *w1, *w2);
                buf.fill(0.0);
                for (&i, &w) in st.index.iter().zip(st.weight.iter()) {
                    if w == 0.0 {
                        continue;
                    }
                    let w = w as f32;
                    for (b, x) in buf.iter_mut().zip(&data[i * channels..(i + 1) * channels]) {
                        *b += w * x;
                    }
                }
                row[at] = match metric {
                    Metric::Mse => {
                        reference
                            .iter()
                            .zip(&buf)
                            .map(|(a, b)| (a - b) * (a - b))
                            .sum::<f32>()
                            * inv
                    }
                };
                at += 1;
            }
        }
    }
}

/// Floating-point operations of the dense correlation: one subtraction, one
/// multiplication and one accumulation per channel, control point and
/// displacement.
pub fn flop_estimate(grid: &ControlGrid, space: &DisplacementSpace, channels: usize) -> u64 {
    flop_estimate_points(grid.len(), space.len(), channels)
}

pub fn flop_estimate_points(points: usize, displacements: usize, channels: usize) -> u64 {
    3 * points as u64 * displacements as u64 * channels as u64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::voxel_centers;

    fn ramp_features(dims: [usize; 3]) -> FeatureVolume {
        let mut data = Vec::new();
        for p in voxel_centers(dims) {
            data.push((3.0 * p[0]).sin() as f32);
            data.push((2.0 * p[1] + p[2]).cos() as f32);
        }
        FeatureVolume::new(2, dims, data).unwrap()
    }

    #[test]
    fn self_match_has_zero_cost_at_zero_offset() {
        let f = ramp_features([9, 9, 9]);
        let grid = ControlGrid::cubic(4).unwrap();
        let space = DisplacementSpace::new(0.3, 5).unwrap();
        let cost = dissimilarity_tensor(&f, &f, grid, space, Metric::Mse).unwrap();
        let zero = space.zero_index();
        for row in cost.rows() {
            assert_eq!(row[zero], 0.0);
            assert!(row.iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn channel_mismatch_is_an_error() {
        let a = ramp_features([4, 4, 4]);
        let b = FeatureVolume::new(1, [4, 4, 4], vec![0.0; 64]).unwrap();
        let err = dissimilarity_tensor(
            &a,
            &b,
            ControlGrid::cubic(2).unwrap(),
            DisplacementSpace::new(0.2, 3).unwrap(),
            Metric::Mse,
        )
        .unwrap_err();
        assert_eq!(
            err,
            Error::ChannelMismatch {
                fixed: 2,
                moving: 1
            }
        );
    }

    #[test]
    fn flop_examples() {
        let l = DisplacementSpace::new(0.4, 15).unwrap();
        assert_eq!(
            flop_estimate(&ControlGrid::cubic(1).unwrap(), &l, 16),
            3 * 3375 * 16
        );
        let e = flop_estimate_points(4096, 3375, 16);
        assert_eq!(e, 663_552_000);
        assert!(e < 2_000_000_000);
        let small = DisplacementSpace::new(0.4, 9).unwrap();
        assert_eq!(
            flop_estimate(&ControlGrid::cubic(16).unwrap(), &small, 4),
            35_831_808
        );
    }
}
