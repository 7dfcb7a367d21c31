//! From regularised costs to displacement probabilities, fields, warps and
//! the loss terms evaluated on them.

use alloc::vec;
use alloc::vec::Vec;

use crate::correlation::{CostTensor, Metric};
use crate::error::{Error, Result};
use crate::features::FeatureKind;
use crate::geometry::{
    axis_weights, gradient_unchecked, spatial_gradient, stencil_from_axes, trilinear_stencil,
    voxel_centers, AxisWeights, ControlGrid, Dims, DisplacementField, DisplacementSpace,
    IntensityVolume, LabelVolume, Point3, Volume,
};
use crate::instance_opt::InstanceOptConfig;
use crate::regularizer::RegularizerParams;

/// Probability of every displacement per control point; rows sum to one.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbTensor {
    grid: ControlGrid,
    space: DisplacementSpace,
    data: Vec<f32>,
}

impl ProbTensor {
    /// Wraps externally computed probabilities after checking range and
    /// row normalization (tolerance `1e-5`).
    pub fn new(grid: ControlGrid, space: DisplacementSpace, data: Vec<f32>) -> Result<Self> {
        let expected = grid.len() * space.len();
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: data.len(),
            });
        }
        let t = Self { grid, space, data };
        if t.data.iter().any(|v| !(0.0..=1.0).contains(v)) || t.max_normalization_error() > 1e-5 {
            return Err(Error::param(
                "probability rows must lie in [0, 1] and sum to 1",
            ));
        }
        Ok(t)
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

    pub fn row(&self, point: usize) -> &[f32] {
        let n = self.space.len();
        &self.data[point * n..(point + 1) * n]
    }

    pub fn rows(&self) -> core::slice::ChunksExact<'_, f32> {
        self.data.chunks_exact(self.space.len())
    }

    /// Largest `|Σ_d p(k, d) - 1|` over control points.
    pub fn max_normalization_error(&self) -> f64 {
        self.rows()
            .map(|r| (r.iter().map(|&v| v as f64).sum::<f64>() - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Shannon entropy (nats) of each control point's distribution.
    pub fn entropy(&self) -> Vec<f64> {
        self.rows()
            .map(|r| {
                -r.iter()
                    .filter(|&&p| p > 0.0)
                    .map(|&p| p as f64 * libm::log(p as f64))
                    .sum::<f64>()
            })
            .collect()
    }
}

/// `p_i = exp(-t c_i - m) / Σ_j exp(-t c_j - m)` with `m` the row maximum of
/// `-t c`, written to `out`.
pub fn softmax_row(costs: &[f32], temperature: f32, out: &mut [f32]) {
    let t = temperature as f64;
    let min = costs.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let mut total = 0.0f64;
    let mut tmp = vec![0.0f64; costs.len()];
    for (e, &c) in tmp.iter_mut().zip(costs) {
        *e = libm::exp(-t * (c as f64 - min));
        total += *e;
    }
    for (o, e) in out.iter_mut().zip(tmp) {
        *o = (e / total) as f32;
    }
}

/// Softmax over the displacement dimensions of the negated, temperature
/// scaled costs.
pub fn softmax_probabilities(cost: &CostTensor, temperature: f32) -> Result<ProbTensor> {
    if !(temperature.is_finite() && temperature > 0.0) {
        return Err(Error::param("softmax temperature must be positive"));
    }
    let mut data = vec![0.0f32; cost.data().len()];
    for (row, out) in cost.rows().zip(data.chunks_exact_mut(cost.row_len())) {
        softmax_row(row, temperature, out);
    }
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("softmax"));
    }
    Ok(ProbTensor {
        grid: cost.grid(),
        space: cost.space(),
        data,
    })
}

/// Probability-weighted mean offset per control point, clamped to `[-q, q]`.
pub fn expected_displacement(prob: &ProbTensor) -> DisplacementField {
    let space = prob.space;
    let q = space.q();
    let offsets = space.offsets();
    let vectors = prob
        .rows()
        .map(|row| {
            let mut acc = [0.0f64; 3];
            for (&p, d) in row.iter().zip(&offsets) {
                let p = p as f64;
                acc[0] += p * d[0];
                acc[1] += p * d[1];
                acc[2] += p * d[2];
            }
            acc.map(|v| v.clamp(-q, q))
        })
        .collect();
    DisplacementField::new(prob.grid.counts(), vectors)
        .expect("expectation of finite offsets is finite")
}

/// Trilinear interpolation of a control-grid field at every voxel center of
/// `target`, clamped beyond the outermost control points.
pub fn upsample_field(ctrl: &DisplacementField, target: Dims) -> Result<DisplacementField> {
    for (axis, &len) in ctrl.dims().iter().enumerate() {
        if len < 2 {
            return Err(Error::DegenerateAxis {
                axis,
                len,
                required: 2,
            });
        }
    }
    if target.contains(&0) {
        return Err(Error::InvalidDimensions(target));
    }
    let vectors = voxel_centers(target).map(|p| ctrl.sample(p)).collect();
    DisplacementField::new(target, vectors)
}

/// Interpolation used by [`warp`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WarpMode {
    Intensity,
    Label,
}

fn check_same_dims(expected: Dims, actual: Dims) -> Result<()> {
    if expected != actual {
        return Err(Error::DimensionMismatch { expected, actual });
    }
    Ok(())
}

fn displaced(p: Point3, u: [f64; 3]) -> Point3 {
    [p[0] + u[0], p[1] + u[1], p[2] + u[2]]
}

/// `out(x) = vol(x + φ(x))`, trilinear for intensities and nearest-neighbour
/// for label mode, clamped at the border.
pub fn warp(
    vol: &IntensityVolume,
    field: &DisplacementField,
    mode: WarpMode,
) -> Result<IntensityVolume> {
    check_same_dims(vol.dims(), field.dims())?;
    let data = voxel_centers(vol.dims())
        .zip(field.vectors())
        .map(|(p, u)| {
            let q = displaced(p, *u);
            match mode {
                WarpMode::Intensity => vol.sample(q) as f32,
                WarpMode::Label => vol.sample_nearest(q),
            }
        })
        .collect();
    Volume::new(vol.dims(), vol.spacing(), data)
}

pub fn warp_intensity(vol: &IntensityVolume, field: &DisplacementField) -> Result<IntensityVolume> {
    warp(vol, field, WarpMode::Intensity)
}

/// Nearest-neighbour warp of a segmentation.
pub fn warp_labels(labels: &LabelVolume, field: &DisplacementField) -> Result<LabelVolume> {
    check_same_dims(labels.dims(), field.dims())?;
    let data = voxel_centers(labels.dims())
        .zip(field.vectors())
        .map(|(p, u)| labels.sample_nearest(displaced(p, *u)))
        .collect();
    Volume::new(labels.dims(), labels.spacing(), data)
}

/// Exponent on the gradient norm of the third displacement component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum ThirdComponentPenalty {
    #[default]
    Squared,
    Cubed,
}

/// `λ Σ_x Σ_c |∇φ_c(x)|²` with per-grid-step derivatives.
pub fn diffusion_penalty(field: &DisplacementField, lambda: f64) -> Result<f64> {
    diffusion_penalty_with(field, lambda, ThirdComponentPenalty::Squared)
}

pub fn diffusion_penalty_with(
    field: &DisplacementField,
    lambda: f64,
    third: ThirdComponentPenalty,
) -> Result<f64> {
    let grad = spatial_gradient(field)?;
    Ok(lambda * gradient_energy(&grad, third))
}

/// Unscaled diffusion energy that treats single-point axes as having no
/// neighbours instead of failing.
pub(crate) fn diffusion_energy_lenient(field: &DisplacementField) -> f64 {
    gradient_energy(&gradient_unchecked(field), ThirdComponentPenalty::Squared)
}

fn gradient_energy(grad: &[Vec<[f64; 3]>; 3], third: ThirdComponentPenalty) -> f64 {
    let n = grad[0].len();
    let mut total = 0.0;
    for i in 0..n {
        let mut per_component = [0.0f64; 3];
        for axis_grad in grad {
            for c in 0..3 {
                per_component[c] += axis_grad[i][c] * axis_grad[i][c];
            }
        }
        total += per_component[0] + per_component[1];
        total += match third {
            ThirdComponentPenalty::Squared => per_component[2],
            ThirdComponentPenalty::Cubed => libm::pow(per_component[2], 1.5),
        };
    }
    total
}

fn check_classes(labels: &LabelVolume, classes: usize) -> Result<()> {
    let max = labels.max_label();
    if max as usize >= classes {
        return Err(Error::ClassMismatch {
            label: max as u32,
            classes,
        });
    }
    Ok(())
}

/// Adds `weight ×` the trilinearly interpolated one-hot encoding of `labels`
/// at the stencil into `acc`.
#[inline]
fn accumulate_onehot(
    labels: &LabelVolume,
    st: &crate::geometry::Stencil,
    weight: f64,
    acc: &mut [f64],
) {
    let data = labels.data();
    for (&i, &w) in st.index.iter().zip(st.weight.iter()) {
        acc[data[i] as usize] += weight * w;
    }
}

fn onehot_mse(predicted: &[f64], target: &[f64]) -> f64 {
    predicted
        .iter()
        .zip(target)
        .map(|(y, t)| (y - t) * (y - t))
        .sum()
}

fn onehot_at(labels: &LabelVolume, p: Point3, out: &mut [f64]) {
    out.fill(0.0);
    accumulate_onehot(labels, &trilinear_stencil(labels.dims(), p), 1.0, out);
}

/// Non-local label loss: the one-hot moving labels, sampled trilinearly at
/// every displaced location `k + d` and weighted by `p(k, d)`, compared with
/// the one-hot fixed labels sampled the same way at `k`, by mean squared
/// error over control points and classes.
pub fn nonlocal_label_loss(
    prob: &ProbTensor,
    moving: &LabelVolume,
    fixed: &LabelVolume,
    classes: usize,
) -> Result<f64> {
    check_classes(moving, classes)?;
    check_classes(fixed, classes)?;
    let grid = prob.grid;
    let space = prob.space;
    let steps = space.steps();
    let dims = moving.dims();
    let mut predicted = vec![0.0f64; classes];
    let mut target = vec![0.0f64; classes];
    let mut total = 0.0;
    for (k, row) in prob.rows().enumerate() {
        let p = grid.point(k);
        let per_axis: [Vec<AxisWeights>; 3] = core::array::from_fn(|a| {
            (0..steps)
                .map(|s| axis_weights(p[a] + space.offset_1d(s), dims[a]))
                .collect()
        });
        predicted.fill(0.0);
        let mut d = 0;
        for w0 in &per_axis[0] {
            for w1 in &per_axis[1] {
                for w2 in &per_axis[2] {
                    let prob = row[d] as f64;
                    d += 1;
                    if prob == 0.0 {
                        continue;
                    }
                    let st = stencil_from_axes(dims, *w0, *w1, *w2);
                    accumulate_onehot(moving, &st, prob, &mut predicted);
                }
            }
        }
        onehot_at(fixed, p, &mut target);
        total += onehot_mse(&predicted, &target);
    }
    Ok(total / (grid.len() * classes) as f64)
}

/// Spatial-transformer style label loss: moving one-hot labels sampled at
/// `k + φ(k)` only, compared like [`nonlocal_label_loss`].
pub fn warped_label_loss(
    field: &DisplacementField,
    moving: &LabelVolume,
    fixed: &LabelVolume,
    classes: usize,
) -> Result<f64> {
    check_classes(moving, classes)?;
    check_classes(fixed, classes)?;
    let grid = ControlGrid::new(field.dims())?;
    let mut predicted = vec![0.0f64; classes];
    let mut target = vec![0.0f64; classes];
    let mut total = 0.0;
    for (k, u) in field.vectors().iter().enumerate() {
        let p = grid.point(k);
        onehot_at(moving, displaced(p, *u), &mut predicted);
        onehot_at(fixed, p, &mut target);
        total += onehot_mse(&predicted, &target);
    }
    Ok(total / (grid.len() * classes) as f64)
}

/// Everything needed to run one registration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegistrationConfig {
    /// Diffusion weight, shared by the penalty and instance refinement.
    pub lambda: f64,
    /// Capture range in normalized units.
    pub q: f64,
    /// Offsets per axis (odd).
    pub steps: usize,
    pub grid: Dims,
    pub features: FeatureKind,
    pub feature_stride: usize,
    pub metric: Metric,
    pub regularizer: RegularizerParams,
    pub refine: bool,
    pub refine_steps: usize,
    pub refine_step_size: f64,
    /// Report the non-local label loss (otherwise the plain warped one).
    pub nonlocal_loss: bool,
    pub third_component: ThirdComponentPenalty,
}

impl Default for RegistrationConfig {
    fn default() -> Self {
        let instance = InstanceOptConfig::default();
        Self {
            lambda: 1.5,
            q: 0.4,
            steps: 15,
            grid: [32; 3],
            features: FeatureKind::default(),
            feature_stride: 3,
            metric: Metric::Mse,
            regularizer: RegularizerParams::default(),
            refine: false,
            refine_steps: instance.steps,
            refine_step_size: instance.step_size,
            nonlocal_loss: true,
            third_component: ThirdComponentPenalty::Squared,
        }
    }
}

impl RegistrationConfig {
    pub fn grid(&self) -> Result<ControlGrid> {
        ControlGrid::new(self.grid)
    }

    pub fn space(&self) -> Result<DisplacementSpace> {
        DisplacementSpace::new(self.q, self.steps)
    }

    pub fn instance(&self) -> InstanceOptConfig {
        InstanceOptConfig {
            steps: self.refine_steps,
            step_size: self.refine_step_size,
            lambda: self.lambda,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda must be finite and non-negative"));
        }
        if !(self.q > 0.0 && self.q < 1.0) {
            return Err(Error::param("capture range q must lie in (0, 1)"));
        }
        if self.feature_stride == 0 {
            return Err(Error::param("feature stride must be at least 1"));
        }
        self.grid()?;
        self.space()?;
        self.regularizer.validate()?;
        self.instance().validate()
    }
}
