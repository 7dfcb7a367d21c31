//! Volumes, normalized coordinates, control grids, displacement spaces and
//! displacement fields.
//!
//! Every volume is stored row-major with dimensions `[d, h, w]`, the last axis
//! varying fastest. Points are given in normalized coordinates, one component
//! per axis in the same order, where voxel `i` of an axis with `n` voxels sits
//! at `2 (i + 0.5) / n - 1`. Voxel centers therefore never touch `±1`, and the
//! same point addresses the same physical location at any resolution.

use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Volume extent `[d, h, w]`.
pub type Dims = [usize; 3];

/// A point in normalized coordinates, one component per axis.
pub type Point3 = [f64; 3];

#[inline]
pub fn voxel_to_normalized(index: f64, n: usize) -> f64 {
    2.0 * (index + 0.5) / n as f64 - 1.0
}

#[inline]
pub fn normalized_to_voxel(p: f64, n: usize) -> f64 {
    (p + 1.0) * n as f64 * 0.5 - 0.5
}

#[inline]
pub(crate) fn voxel_count(dims: Dims) -> usize {
    dims[0] * dims[1] * dims[2]
}

#[inline]
pub(crate) fn linear_index(dims: Dims, idx: [usize; 3]) -> usize {
    (idx[0] * dims[1] + idx[1]) * dims[2] + idx[2]
}

#[inline]
pub(crate) fn unravel(dims: Dims, lin: usize) -> [usize; 3] {
    let k = lin % dims[2];
    let rest = lin / dims[2];
    [rest / dims[1], rest % dims[1], k]
}

/// Normalized coordinate of every voxel center of `dims`, in storage order.
pub fn voxel_centers(dims: Dims) -> impl Iterator<Item = Point3> {
    (0..voxel_count(dims)).map(move |lin| {
        let idx = unravel(dims, lin);
        [
            voxel_to_normalized(idx[0] as f64, dims[0]),
            voxel_to_normalized(idx[1] as f64, dims[1]),
            voxel_to_normalized(idx[2] as f64, dims[2]),
        ]
    })
}

/// Linear interpolation coordinates along one axis: lower index, upper index
/// and the weight of the upper one. Out-of-range positions clamp to the
/// border voxel.
#[derive(Clone, Copy, Debug)]
pub(crate) struct AxisWeights {
    pub lo: usize,
    pub hi: usize,
    pub frac: f64,
}

#[inline]
pub(crate) fn axis_weights(p: f64, n: usize) -> AxisWeights {
    let last = (n - 1) as f64;
    let v = normalized_to_voxel(p, n);
    let v = if v.is_nan() { 0.0 } else { v.clamp(0.0, last) };
    let lo = libm::floor(v) as usize;
    let lo = lo.min(n - 1);
    let hi = (lo + 1).min(n - 1);
    AxisWeights {
        lo,
        hi,
        frac: v - lo as f64,
    }
}

/// Corner offsets into a row-major buffer and their trilinear weights.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Stencil {
    pub index: [usize; 8],
    pub weight: [f64; 8],
}

#[inline]
pub(crate) fn stencil_from_axes(
    dims: Dims,
    a: AxisWeights,
    b: AxisWeights,
    c: AxisWeights,
) -> Stencil {
    let mut index = [0usize; 8];
    let mut weight = [0f64; 8];
    let mut n = 0;
    for (i, wi) in [(a.lo, 1.0 - a.frac), (a.hi, a.frac)] {
        for (j, wj) in [(b.lo, 1.0 - b.frac), (b.hi, b.frac)] {
            for (k, wk) in [(c.lo, 1.0 - c.frac), (c.hi, c.frac)] {
                index[n] = linear_index(dims, [i, j, k]);
                weight[n] = wi * wj * wk;
                n += 1;
            }
        }
    }
    Stencil { index, weight }
}

#[inline]
pub(crate) fn trilinear_stencil(dims: Dims, p: Point3) -> Stencil {
    stencil_from_axes(
        dims,
        axis_weights(p[0], dims[0]),
        axis_weights(p[1], dims[1]),
        axis_weights(p[2], dims[2]),
    )
}

/// Index of the voxel nearest to `p`, clamped into the volume.
#[inline]
pub(crate) fn nearest_index(dims: Dims, p: Point3) -> [usize; 3] {
    let mut out = [0usize; 3];
    for a in 0..3 {
        let v = libm::round(normalized_to_voxel(p[a], dims[a]));
        let v = if v.is_nan() {
            0.0
        } else {
            v.clamp(0.0, (dims[a] - 1) as f64)
        };
        out[a] = v as usize;
    }
    out
}

fn check_dims(dims: Dims) -> Result<()> {
    if dims.contains(&0) {
        return Err(Error::InvalidDimensions(dims));
    }
    Ok(())
}

fn check_spacing(spacing: [f64; 3]) -> Result<()> {
    if spacing.iter().any(|s| !s.is_finite() || *s <= 0.0) {
        return Err(Error::InvalidSpacing(spacing));
    }
    Ok(())
}

/// A scalar 3D grid with voxel spacing in mm.
#[derive(Clone, Debug, PartialEq)]
pub struct Volume<T> {
    dims: Dims,
    spacing: [f64; 3],
    data: Vec<T>,
}

/// Real-valued image.
pub type IntensityVolume = Volume<f32>;
/// Integer segmentation, 0 is background.
pub type LabelVolume = Volume<u16>;

impl<T: Copy> Volume<T> {
    pub fn new(dims: Dims, spacing: [f64; 3], data: Vec<T>) -> Result<Self> {
        check_dims(dims)?;
        check_spacing(spacing)?;
        let expected = voxel_count(dims);
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: data.len(),
            });
        }
        Ok(Self {
            dims,
            spacing,
            data,
        })
    }

    pub fn filled(dims: Dims, value: T) -> Result<Self> {
        check_dims(dims)?;
        Self::new(dims, [1.0; 3], alloc::vec![value; voxel_count(dims)])
    }

    /// Builds a unit-spacing volume by evaluating `f` at every voxel index.
    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 3]) -> T) -> Result<Self> {
        check_dims(dims)?;
        let data = (0..voxel_count(dims))
            .map(|lin| f(unravel(dims, lin)))
            .collect();
        Self::new(dims, [1.0; 3], data)
    }

    pub fn with_spacing(mut self, spacing: [f64; 3]) -> Result<Self> {
        check_spacing(spacing)?;
        self.spacing = spacing;
        Ok(self)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn spacing(&self) -> [f64; 3] {
        self.spacing
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn get(&self, idx: [usize; 3]) -> T {
        self.data[linear_index(self.dims, idx)]
    }

    pub fn map<U: Copy>(&self, f: impl FnMut(T) -> U) -> Volume<U> {
        Volume {
            dims: self.dims,
            spacing: self.spacing,
            data: self.data.iter().copied().map(f).collect(),
        }
    }

    /// Value of the voxel nearest to `p` (clamped at the border).
    pub fn sample_nearest(&self, p: Point3) -> T {
        self.get(nearest_index(self.dims, p))
    }
}

impl Volume<f32> {
    /// Trilinear interpolation at `p`. Coordinates outside the volume clamp
    /// to the border value.
    pub fn sample(&self, p: Point3) -> f64 {
        let s = trilinear_stencil(self.dims, p);
        s.index
            .iter()
            .zip(s.weight.iter())
            .map(|(&i, &w)| w * self.data[i] as f64)
            .sum()
    }
}

impl Volume<u16> {
    pub fn max_label(&self) -> u16 {
        self.data.iter().copied().max().unwrap_or(0)
    }

    /// Converts an intensity volume holding non-negative integers to labels.
    pub fn from_intensity(vol: &Volume<f32>) -> Result<Self> {
        let mut data = Vec::with_capacity(vol.len());
        for &v in vol.data() {
            if !(v >= 0.0 && v <= u16::MAX as f32 && v == libm::roundf(v)) {
                return Err(Error::param(alloc::format!(
                    "label volumes need non-negative integers, found {v}"
                )));
            }
            data.push(v as u16);
        }
        Self::new(vol.dims(), vol.spacing(), data)
    }
}

/// The coarse grid of control points. Point `i` along an axis with `K`
/// points sits at `2 (i + 0.5) / K - 1`, so the grid is uniform inside
/// `(-1, 1)` and uses the same convention as voxel centers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ControlGrid {
    counts: Dims,
}

impl ControlGrid {
    pub fn new(counts: Dims) -> Result<Self> {
        check_dims(counts)?;
        Ok(Self { counts })
    }

    pub fn cubic(n: usize) -> Result<Self> {
        Self::new([n; 3])
    }

    pub fn counts(&self) -> Dims {
        self.counts
    }

    pub fn len(&self) -> usize {
        voxel_count(self.counts)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn point(&self, index: usize) -> Point3 {
        let idx = unravel(self.counts, index);
        [
            voxel_to_normalized(idx[0] as f64, self.counts[0]),
            voxel_to_normalized(idx[1] as f64, self.counts[1]),
            voxel_to_normalized(idx[2] as f64, self.counts[2]),
        ]
    }

    pub fn points(&self) -> impl Iterator<Item = Point3> + '_ {
        (0..self.len()).map(move |i| self.point(i))
    }

    pub fn unravel(&self, index: usize) -> [usize; 3] {
        unravel(self.counts, index)
    }
}

/// The quantised offset set: `steps` evenly spaced values in `[-q, q]` per
/// axis, combined row-major into `steps³` 3-vectors.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DisplacementSpace {
    q: f64,
    steps: usize,
}

impl DisplacementSpace {
    pub fn new(q: f64, steps: usize) -> Result<Self> {
        if !(q.is_finite() && q > 0.0) {
            return Err(Error::param(alloc::format!(
                "capture range q must be positive, got {q}"
            )));
        }
        if steps == 0 || steps.is_multiple_of(2) {
            return Err(Error::param(alloc::format!(
                "displacement steps must be odd and positive, got {steps}"
            )));
        }
        Ok(Self { q, steps })
    }

    pub fn q(&self) -> f64 {
        self.q
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn len(&self) -> usize {
        self.steps * self.steps * self.steps
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Distance between neighbouring offsets along one axis.
    pub fn spacing(&self) -> f64 {
        if self.steps == 1 {
            0.0
        } else {
            2.0 * self.q / (self.steps - 1) as f64
        }
    }

    /// Offset value of step `j` along one axis.
    #[inline]
    pub fn offset_1d(&self, j: usize) -> f64 {
        if self.steps == 1 {
            return 0.0;
        }
        let half = (self.steps - 1) / 2;
        self.q * (j as f64 - half as f64) / half as f64
    }

    pub fn offset(&self, index: usize) -> Point3 {
        let idx = unravel([self.steps; 3], index);
        [
            self.offset_1d(idx[0]),
            self.offset_1d(idx[1]),
            self.offset_1d(idx[2]),
        ]
    }

    pub fn offsets(&self) -> Vec<Point3> {
        (0..self.len()).map(|i| self.offset(i)).collect()
    }

    pub fn zero_index(&self) -> usize {
        let h = (self.steps - 1) / 2;
        linear_index([self.steps; 3], [h, h, h])
    }

    /// Continuous step index of an offset value along one axis.
    #[inline]
    pub fn step_coordinate(&self, value: f64) -> f64 {
        if self.steps == 1 {
            return 0.0;
        }
        let half = ((self.steps - 1) / 2) as f64;
        (value / self.q + 1.0) * half
    }
}

/// A 3-vector per grid point, in normalized units. Used both at control-grid
/// and at full image resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct DisplacementField {
    dims: Dims,
    vectors: Vec<[f64; 3]>,
}

impl DisplacementField {
    pub fn new(dims: Dims, vectors: Vec<[f64; 3]>) -> Result<Self> {
        check_dims(dims)?;
        let expected = voxel_count(dims);
        if vectors.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: vectors.len(),
            });
        }
        if vectors.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("displacement field"));
        }
        Ok(Self { dims, vectors })
    }

    pub fn zeros(dims: Dims) -> Result<Self> {
        check_dims(dims)?;
        Ok(Self {
            dims,
            vectors: alloc::vec![[0.0; 3]; voxel_count(dims)],
        })
    }

    pub fn constant(dims: Dims, v: [f64; 3]) -> Result<Self> {
        Self::new(dims, alloc::vec![v; voxel_count(dims)])
    }

    pub fn from_fn(dims: Dims, mut f: impl FnMut([usize; 3]) -> [f64; 3]) -> Result<Self> {
        check_dims(dims)?;
        let vectors = (0..voxel_count(dims))
            .map(|lin| f(unravel(dims, lin)))
            .collect();
        Self::new(dims, vectors)
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn vectors(&self) -> &[[f64; 3]] {
        &self.vectors
    }

    pub(crate) fn vectors_mut(&mut self) -> &mut [[f64; 3]] {
        &mut self.vectors
    }

    pub fn into_vectors(self) -> Vec<[f64; 3]> {
        self.vectors
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }

    pub fn get(&self, idx: [usize; 3]) -> [f64; 3] {
        self.vectors[linear_index(self.dims, idx)]
    }

    /// Trilinear interpolation of the field at `p`, treating the field's grid
    /// points as voxel centers. Clamps outside the grid.
    pub fn sample(&self, p: Point3) -> [f64; 3] {
        let s = trilinear_stencil(self.dims, p);
        let mut out = [0.0; 3];
        for (&i, &w) in s.index.iter().zip(s.weight.iter()) {
            let v = self.vectors[i];
            out[0] += w * v[0];
            out[1] += w * v[1];
            out[2] += w * v[2];
        }
        out
    }

    pub fn mean_norm(&self) -> f64 {
        let total: f64 = self
            .vectors
            .iter()
            .map(|v| libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]))
            .sum();
        total / self.vectors.len() as f64
    }
}

/// Two-point finite-difference stencil for the derivative along an axis at
/// position `i` of `n`: central in the interior, one-sided at the borders,
/// zero on a single-point axis. Units are per grid step.
#[inline]
pub(crate) fn derivative_stencil(i: usize, n: usize) -> [(usize, f64); 2] {
    if n < 2 {
        [(i, 0.0), (i, 0.0)]
    } else if i == 0 {
        [(1, 1.0), (0, -1.0)]
    } else if i == n - 1 {
        [(n - 1, 1.0), (n - 2, -1.0)]
    } else {
        [(i + 1, 0.5), (i - 1, -0.5)]
    }
}

/// Derivatives of every component along every axis, `grad[axis][point]`.
pub(crate) fn gradient_unchecked(field: &DisplacementField) -> [Vec<[f64; 3]>; 3] {
    let dims = field.dims;
    let mut out: [Vec<[f64; 3]>; 3] = [
        alloc::vec![[0.0; 3]; field.len()],
        alloc::vec![[0.0; 3]; field.len()],
        alloc::vec![[0.0; 3]; field.len()],
    ];
    for (lin, _) in field.vectors.iter().enumerate() {
        let idx = unravel(dims, lin);
        for axis in 0..3 {
            let mut g = [0.0; 3];
            for (pos, w) in derivative_stencil(idx[axis], dims[axis]) {
                let mut j = idx;
                j[axis] = pos;
                let v = field.vectors[linear_index(dims, j)];
                for c in 0..3 {
                    g[c] += w * v[c];
                }
            }
            out[axis][lin] = g;
        }
    }
    out
}

/// Spatial derivatives of a displacement field per grid step: central
/// differences inside, one-sided at the borders. Returns `grad[axis][point]`,
/// each entry holding the derivative of the three components along `axis`.
pub fn spatial_gradient(field: &DisplacementField) -> Result<[Vec<[f64; 3]>; 3]> {
    for (axis, &len) in field.dims.iter().enumerate() {
        if len < 2 {
            return Err(Error::DegenerateAxis {
                axis,
                len,
                required: 2,
            });
        }
    }
    Ok(gradient_unchecked(field))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn voxel_center_round_trip() {
        for n in [1usize, 2, 7, 64, 233] {
            for i in 0..n {
                let p = voxel_to_normalized(i as f64, n);
                assert!(p > -1.0 && p < 1.0);
                assert!((normalized_to_voxel(p, n) - i as f64).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sampling_at_voxel_center_is_identity() {
        let vol = Volume::from_fn([3, 4, 5], |[i, j, k]| (i * 100 + j * 10 + k) as f32).unwrap();
        for (lin, p) in voxel_centers(vol.dims()).enumerate() {
            assert_eq!(vol.sample(p), vol.data()[lin] as f64);
        }
    }

    #[test]
    fn constant_volume_samples_constant() {
        let vol = Volume::filled([4, 5, 6], 7.0f32).unwrap();
        for p in [[0.0, 0.0, 0.0], [0.3, -0.91, 0.5], [5.0, -3.0, 1.0]] {
            assert!((vol.sample(p) - 7.0).abs() < 1e-12);
        }
    }

    #[test]
    fn midpoint_between_two_voxels() {
        let vol = Volume::new([1, 1, 2], [1.0; 3], alloc::vec![2.0f32, 4.0]).unwrap();
        let p0 = voxel_to_normalized(0.0, 2);
        let p1 = voxel_to_normalized(1.0, 2);
        assert!((vol.sample([0.0, 0.0, 0.5 * (p0 + p1)]) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sampling_clamps_outside() {
        let vol = Volume::new([1, 1, 2], [1.0; 3], alloc::vec![2.0f32, 4.0]).unwrap();
        assert_eq!(vol.sample([0.0, 0.0, -5.0]), 2.0);
        assert_eq!(vol.sample([0.0, 0.0, 0.999]), 4.0);
        assert_eq!(vol.sample([0.0, 0.0, f64::NAN]), 2.0);
    }

    #[test]
    fn volume_rejects_bad_construction() {
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0; 3], alloc::vec![0.0f32; 7]),
            Err(Error::DataLength {
                expected: 8,
                actual: 7
            })
        ));
        assert!(matches!(
            Volume::new([2, 2, 2], [1.0, 0.0, 1.0], alloc::vec![0.0f32; 8]),
            Err(Error::InvalidSpacing(_))
        ));
        assert!(Volume::<f32>::filled([0, 2, 2], 0.0).is_err());
    }

    #[test]
    fn control_grid_is_uniform_row_major() {
        let g = ControlGrid::new([2, 3, 4]).unwrap();
        let pts: Vec<_> = g.points().collect();
        assert_eq!(pts.len(), 24);
        for (a, e) in pts[0].iter().zip([-0.5, -2.0 / 3.0, -0.75]) {
            assert!((a - e).abs() < 1e-15);
        }
        assert_eq!(pts[1][2] - pts[0][2], 0.5);
        assert!((pts[4][1] - pts[0][1] - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(pts[12][0] - pts[0][0], 1.0);
    }

    #[test]
    fn displacement_space_layout() {
        let s = DisplacementSpace::new(0.4, 15).unwrap();
        assert_eq!(s.len(), 3375);
        assert_eq!(s.offset_1d(0), -0.4);
        assert_eq!(s.offset_1d(14), 0.4);
        assert_eq!(s.offset_1d(7), 0.0);
        assert_eq!(s.offset(s.zero_index()), [0.0; 3]);
        let offsets = s.offsets();
        for d in &offsets {
            let neg = [-d[0], -d[1], -d[2]];
            assert!(offsets.iter().any(|e| e == &neg));
        }
        assert!((s.spacing() - 0.8 / 14.0).abs() < 1e-15);
        assert!((s.step_coordinate(0.4) - 14.0).abs() < 1e-12);
        assert!(DisplacementSpace::new(0.4, 4).is_err());
        assert!(DisplacementSpace::new(0.0, 5).is_err());
    }

    #[test]
    fn gradient_of_zero_field_is_zero() {
        let f = DisplacementField::zeros([3, 4, 5]).unwrap();
        let g = spatial_gradient(&f).unwrap();
        assert!(g.iter().flatten().flatten().all(|&v| v == 0.0));
    }

    #[test]
    fn gradient_of_linear_field_is_constant() {
        let a = 0.37;
        let f =
            DisplacementField::from_fn([4, 5, 6], |[i, j, _]| [a * i as f64, 0.0, -a * j as f64])
                .unwrap();
        let g = spatial_gradient(&f).unwrap();
        for v in &g[0] {
            assert!((v[0] - a).abs() < 1e-6 && v[1].abs() < 1e-12 && v[2].abs() < 1e-12);
        }
        for v in &g[1] {
            assert!((v[2] + a).abs() < 1e-6 && v[0].abs() < 1e-12);
        }
        assert!(g[2].iter().flatten().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn gradient_needs_two_points_per_axis() {
        let f = DisplacementField::zeros([3, 1, 5]).unwrap();
        assert!(matches!(
            spatial_gradient(&f),
            Err(Error::DegenerateAxis {
                axis: 1,
                len: 1,
                required: 2
            })
        ));
    }

    #[test]
    fn nonfinite_field_rejected() {
        assert!(DisplacementField::new([1, 1, 1], alloc::vec![[f64::NAN, 0.0, 0.0]]).is_err());
    }
}
