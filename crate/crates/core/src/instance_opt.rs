//! Per-pair refinement of a displacement estimate on the precomputed cost
//! tensor.
//!
//! The objective is
//!
//! ```text
//! E(φ) = Σ_k C_k(φ(k)) + λ Σ_k Σ_axis Σ_c (∂_axis φ_c(k))²
//! ```
//!
//! where `C_k` interpolates row `k` of the cost tensor trilinearly over the
//! continuous displacement coordinate and the derivatives are the per-step
//! finite differences used by the diffusion penalty. Both gradients are
//! analytic. Descent is plain gradient descent; a step that would increase
//! `E` is rejected and halves the step size, so accepted energies never
//! increase.

use alloc::vec;
use alloc::vec::Vec;

use crate::correlation::CostTensor;
use crate::error::{Error, Result};
use crate::geometry::{
    derivative_stencil, linear_index, unravel, DisplacementField, DisplacementSpace,
};
use crate::transform::diffusion_energy_lenient;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct InstanceOptConfig {
    pub steps: usize,
    /// Normalized units per unit gradient.
    pub step_size: f64,
    pub lambda: f64,
}

impl Default for InstanceOptConfig {
    fn default() -> Self {
        Self {
            steps: 50,
            step_size: 0.05,
            lambda: 1.5,
        }
    }
}

impl InstanceOptConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.step_size.is_finite() && self.step_size > 0.0) {
            return Err(Error::param("refinement step size must be positive"));
        }
        if !(self.lambda.is_finite() && self.lambda >= 0.0) {
            return Err(Error::param("lambda must be finite and non-negative"));
        }
        Ok(())
    }
}

/// Result of a refinement run.
#[derive(Clone, Debug, PartialEq)]
pub struct RefineOutcome {
    pub field: DisplacementField,
    /// Energy of the initial field followed by every accepted step.
    pub energies: Vec<f64>,
    pub accepted: usize,
    pub rejected: usize,
}

/// Cell of the trilinear interpolant along one displacement axis.
#[inline]
fn cell(value: f64, space: &DisplacementSpace) -> (usize, f64) {
    let steps = space.steps();
    if steps == 1 {
        return (0, 0.0);
    }
    let s = space.step_coordinate(value).clamp(0.0, (steps - 1) as f64);
    let lo = (libm::floor(s) as usize).min(steps - 2);
    (lo, s - lo as f64)
}

/// Interpolated cost of one row at displacement `u`, and its gradient with
/// respect to `u` (normalized units).
pub fn interpolated_cost(row: &[f32], space: &DisplacementSpace, u: [f64; 3]) -> (f64, [f64; 3]) {
    let steps = space.steps();
    if steps == 1 {
        return (row[0] as f64, [0.0; 3]);
    }
    let cells = [cell(u[0], space), cell(u[1], space), cell(u[2], space)];
    let dims = [steps; 3];
    let mut value = 0.0;
    let mut grad = [0.0; 3];
    for a in 0..2 {
        for b in 0..2 {
            for c in 0..2 {
                let corner = row
                    [linear_index(dims, [cells[0].0 + a, cells[1].0 + b, cells[2].0 + c])]
                    as f64;
                let w = [
                    if a == 1 { cells[0].1 } else { 1.0 - cells[0].1 },
                    if b == 1 { cells[1].1 } else { 1.0 - cells[1].1 },
                    if c == 1 { cells[2].1 } else { 1.0 - cells[2].1 },
                ];
                let sign = [
                    if a == 1 { 1.0 } else { -1.0 },
                    if b == 1 { 1.0 } else { -1.0 },
                    if c == 1 { 1.0 } else { -1.0 },
                ];
                value += corner * w[0] * w[1] * w[2];
                grad[0] += corner * sign[0] * w[1] * w[2];
                grad[1] += corner * w[0] * sign[1] * w[2];
                grad[2] += corner * w[0] * w[1] * sign[2];
            }
        }
    }
    let per_unit = ((steps - 1) / 2) as f64 / space.q();
    (value, grad.map(|g| g * per_unit))
}

/// `E(φ)` for a control-grid field.
pub fn energy(cost: &CostTensor, field: &DisplacementField, lambda: f64) -> f64 {
    let space = cost.space();
    let data: f64 = field
        .vectors()
        .iter()
        .enumerate()
        .map(|(k, u)| interpolated_cost(cost.row(k), &space, *u).0)
        .sum();
    data + lambda * diffusion_energy_lenient(field)
}

/// Analytic gradient of [`energy`] with respect to every control vector.
pub fn energy_gradient(cost: &CostTensor, field: &DisplacementField, lambda: f64) -> Vec<[f64; 3]> {
    let space = cost.space();
    let dims = field.dims();
    let vectors = field.vectors();
    let mut grad: Vec<[f64; 3]> = vectors
        .iter()
        .enumerate()
        .map(|(k, u)| interpolated_cost(cost.row(k), &space, *u).1)
        .collect();
    if lambda == 0.0 {
        return grad;
    }
    for lin in 0..vectors.len() {
        let idx = unravel(dims, lin);
        for axis in 0..3 {
            let stencil = derivative_stencil(idx[axis], dims[axis]);
            let mut nodes = [0usize; 2];
            let mut g = [0.0f64; 3];
            for (n, (pos, w)) in stencil.iter().enumerate() {
                let mut j = idx;
                j[axis] = *pos;
                nodes[n] = linear_index(dims, j);
                for c in 0..3 {
                    g[c] += w * vectors[nodes[n]][c];
                }
            }
            for (n, (_, w)) in stencil.iter().enumerate() {
                for c in 0..3 {
                    grad[nodes[n]][c] += 2.0 * lambda * g[c] * w;
                }
            }
        }
    }
    grad
}

fn check_shapes(cost: &CostTensor, init: &DisplacementField) -> Result<()> {
    let counts = cost.grid().counts();
    if init.dims() != counts {
        return Err(Error::DimensionMismatch {
            expected: counts,
            actual: init.dims(),
        });
    }
    cost.check_finite()
}

/// Refines `init` and returns the final field.
pub fn refine(
    cost: &CostTensor,
    init: &DisplacementField,
    cfg: &InstanceOptConfig,
) -> Result<DisplacementField> {
    Ok(refine_with_history(cost, init, cfg)?.field)
}

/// Like [`refine`], also reporting the energy after every accepted step.
pub fn refine_with_history(
    cost: &CostTensor,
    init: &DisplacementField,
    cfg: &InstanceOptConfig,
) -> Result<RefineOutcome> {
    cfg.validate()?;
    check_shapes(cost, init)?;
    let q = cost.space().q();
    let mut field = init.clone();
    for v in field.vectors_mut() {
        *v = v.map(|x| x.clamp(-q, q));
    }
    let mut current = energy(cost, &field, cfg.lambda);
    let mut energies = vec![current];
    let mut eta = cfg.step_size;
    let (mut accepted, mut rejected) = (0, 0);
    let mut candidate = field.clone();
    for _ in 0..cfg.steps {
        let grad = energy_gradient(cost, &field, cfg.lambda);
        for ((c, v), g) in candidate
            .vectors_mut()
            .iter_mut()
            .zip(field.vectors())
            .zip(&grad)
        {
            for a in 0..3 {
                c[a] = (v[a] - eta * g[a]).clamp(-q, q);
            }
        }
        let next = energy(cost, &candidate, cfg.lambda);
        if next <= current {
            core::mem::swap(&mut field, &mut candidate);
            current = next;
            energies.push(current);
            accepted += 1;
        } else {
            eta *= 0.5;
            rejected += 1;
        }
    }
    if !current.is_finite() {
        return Err(Error::NonFinite("instance refinement"));
    }
    Ok(RefineOutcome {
        field,
        energies,
        accepted,
        rejected,
    })
}
