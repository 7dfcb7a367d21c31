//! Stage sequencing for a full registration.

use alloc::vec::Vec;

use crate::correlation::{dissimilarity_tensor_with, CostTensor};
use crate::error::{Error, Result};
use crate::features::FeatureVolume;
use crate::geometry::{DisplacementField, IntensityVolume, LabelVolume};
use crate::instance_opt::{refine_with_history, RefineOutcome};
use crate::metrics::{dice, jacobian_stats, mean_dice, RegistrationReport};
use crate::regularizer::regularize_with;
use crate::transform::{
    expected_displacement, nonlocal_label_loss, softmax_probabilities, upsample_field,
    warp_intensity, warp_labels, warped_label_loss, ProbTensor, RegistrationConfig,
};

/// Runs a closure over the fixed-size rows of a buffer. Rows must be
/// independent; implementations may visit them in any order or in parallel.
pub trait RowExecutor {
    fn for_each_row<F>(&self, data: &mut [f32], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Sync + Send;
}

/// Visits rows in index order on the calling thread.
#[derive(Clone, Copy, Debug, Default)]
pub struct Sequential;

impl RowExecutor for Sequential {
    fn for_each_row<F>(&self, data: &mut [f32], row_len: usize, f: F)
    where
        F: Fn(usize, &mut [f32]) + Sync + Send,
    {
        for (i, row) in data.chunks_exact_mut(row_len).enumerate() {
            f(i, row);
        }
    }
}

/// Every intermediate product of one registration.
#[derive(Clone, Debug)]
pub struct RegistrationOutput {
    pub raw_cost: CostTensor,
    pub cost: CostTensor,
    pub probabilities: ProbTensor,
    /// Expected displacement per control point, before refinement.
    pub initial_field: DisplacementField,
    /// Control-point field after optional refinement.
    pub control_field: DisplacementField,
    /// Full-resolution field on the fixed image grid.
    pub field: DisplacementField,
    pub warped: IntensityVolume,
    pub refinement: Option<RefineOutcome>,
}

pub fn extract_features(vol: &IntensityVolume, cfg: &RegistrationConfig) -> Result<FeatureVolume> {
    cfg.features.extract(vol, cfg.feature_stride)
}

/// Features, correlation, regularisation, softmax, expectation, optional
/// refinement, upsampling and warping, all on the calling thread. Both
/// volumes must share dimensions.
pub fn register(
    fixed: &IntensityVolume,
    moving: &IntensityVolume,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutput> {
    register_with(&Sequential, fixed, moving, cfg)
}

pub fn register_with<E: RowExecutor>(
    exec: &E,
    fixed: &IntensityVolume,
    moving: &IntensityVolume,
    cfg: &RegistrationConfig,
) -> Result<RegistrationOutput> {
    register_observed(exec, fixed, moving, cfg, &mut |_| {})
}

/// [`register_with`], calling `on_stage` with the stage name as each stage
/// finishes (`features`, `correlation`, `regularize`, `softmax`,
/// `expectation`, `refine` when enabled, `upsample`, `warp`).
pub fn register_observed<E: RowExecutor>(
    exec: &E,
    fixed: &IntensityVolume,
    moving: &IntensityVolume,
    cfg: &RegistrationConfig,
    on_stage: &mut dyn FnMut(&'static str),
) -> Result<RegistrationOutput> {
    cfg.validate()?;
    if fixed.dims() != moving.dims() {
        return Err(Error::DimensionMismatch {
            expected: fixed.dims(),
            actual: moving.dims(),
        });
    }
    let ff = extract_features(fixed, cfg)?;
    let fm = extract_features(moving, cfg)?;
    on_stage("features");
    let grid = cfg.grid()?;
    let space = cfg.space()?;
    let raw_cost = dissimilarity_tensor_with(exec, &ff, &fm, grid, space, cfg.metric)?;
    on_stage("correlation");
    let cost = regularize_with(exec, &raw_cost, &cfg.regularizer)?;
    on_stage("regularize");
    let probabilities = softmax_probabilities(&cost, cfg.regularizer.temperature())?;
    on_stage("softmax");
    let initial_field = expected_displacement(&probabilities);
    on_stage("expectation");
    let (control_field, refinement) = if cfg.refine {
        let outcome = refine_with_history(&cost, &initial_field, &cfg.instance())?;
        on_stage("refine");
        (outcome.field.clone(), Some(outcome))
    } else {
        (initial_field.clone(), None)
    };
    let field = upsample_field(&control_field, fixed.dims())?;
    on_stage("upsample");
    let warped = warp_intensity(moving, &field)?;
    on_stage("warp");
    Ok(RegistrationOutput {
        raw_cost,
        cost,
        probabilities,
        initial_field,
        control_field,
        field,
        warped,
        refinement,
    })
}

/// Label loss reported after registration: the non-local loss on the
/// probabilities, or the plain loss of labels warped by the control field.
pub fn label_loss(
    out: &RegistrationOutput,
    moving_labels: &LabelVolume,
    fixed_labels: &LabelVolume,
    nonlocal: bool,
) -> Result<f64> {
    let classes = moving_labels.max_label().max(fixed_labels.max_label()) as usize + 1;
    if nonlocal {
        nonlocal_label_loss(&out.probabilities, moving_labels, fixed_labels, classes)
    } else {
        warped_label_loss(&out.control_field, moving_labels, fixed_labels, classes)
    }
}

/// Labels of the moving image carried onto the fixed grid.
pub fn warp_moving_labels(
    out: &RegistrationOutput,
    moving_labels: &LabelVolume,
) -> Result<LabelVolume> {
    warp_labels(moving_labels, &out.field)
}

/// Sorted foreground labels present in either volume.
pub fn foreground_labels(a: &LabelVolume, b: &LabelVolume) -> Vec<u16> {
    let mut seen = alloc::vec![false; 1 << 16];
    for &v in a.data().iter().chain(b.data()) {
        seen[v as usize] = true;
    }
    (1..=u16::MAX).filter(|&l| seen[l as usize]).collect()
}

/// Fixed and moving segmentations of a pair.
#[derive(Clone, Copy, Debug)]
pub struct LabelPair<'a> {
    pub fixed: &'a LabelVolume,
    pub moving: &'a LabelVolume,
}

/// Report for a full-resolution field: Dice before and after warping the
/// moving labels (when given), Jacobian statistics (when every axis has at
/// least three voxels) and the mean displacement. Runtimes are left empty.
pub fn evaluate_field(
    field: &DisplacementField,
    labels: Option<LabelPair<'_>>,
) -> Result<RegistrationReport> {
    let dims = field.dims();
    let mut report = RegistrationReport {
        mean_displacement: field.mean_norm(),
        voxels_per_unit: dims.map(|n| n as f64 * 0.5),
        jacobian: if dims.iter().all(|&n| n >= 3) {
            Some(jacobian_stats(field)?)
        } else {
            None
        },
        ..Default::default()
    };
    if let Some(pair) = labels {
        let ids = foreground_labels(pair.fixed, pair.moving);
        report.initial_mean_dice = mean_dice(&dice(pair.fixed, pair.moving, &ids)?);
        let warped = warp_labels(pair.moving, field)?;
        let per_label = dice(pair.fixed, &warped, &ids)?;
        report.mean_dice = mean_dice(&per_label);
        report.dice = ids.into_iter().zip(per_label).collect();
    }
    Ok(report)
}

/// [`evaluate_field`] on the registration result plus the configured label
/// loss.
pub fn build_report(
    out: &RegistrationOutput,
    cfg: &RegistrationConfig,
    labels: Option<LabelPair<'_>>,
) -> Result<RegistrationReport> {
    let mut report = evaluate_field(&out.field, labels)?;
    if let Some(pair) = labels {
        report.label_loss = Some(label_loss(out, pair.moving, pair.fixed, cfg.nonlocal_loss)?);
    }
    Ok(report)
}
