//! Displacement regularisation on the cost tensor.
//!
//! A diffusion prior `‖d_i - d_j‖²` between neighbouring control points is
//! handled in two alternating parts. Over the three displacement dimensions
//! of each control point, a min-pool followed by two average pools
//! approximates the min-convolution with a parabola (the exact version is
//! [`exact_lower_envelope`]). Over the three spatial dimensions, an average
//! pool per displacement bin passes messages between neighbouring control
//! points, as one mean-field update. Each pass is preceded by a learnable
//! scale and bias; see [`RegularizerParams`] for the order.
//!
//! All pools use stride 1, odd windows and replicate padding.

use alloc::vec;
use alloc::vec::Vec;

use crate::correlation::CostTensor;
use crate::error::{Error, Result};
use crate::pipeline::{RowExecutor, Sequential};

/// `x ↦ scale · x + bias`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Affine {
    pub scale: f32,
    pub bias: f32,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        scale: 1.0,
        bias: 0.0,
    };

    pub fn new(scale: f32, bias: f32) -> Self {
        Self { scale, bias }
    }

    #[inline]
    pub fn apply(&self, x: f32) -> f32 {
        self.scale * x + self.bias
    }

    pub fn is_identity(&self) -> bool {
        self.scale == 1.0 && self.bias == 0.0
    }
}

/// Scale/bias pairs and pooling windows.
///
/// The six pairs are consumed as follows: `alphas[0]` before the first
/// min-convolution, `alphas[1]` before the first mean-field step,
/// `alphas[2]`/`alphas[3]` for the second and every later iteration,
/// `alphas[4]` on the final output, and `alphas[5].scale` as the softmax
/// temperature (its bias is unused).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RegularizerParams {
    pub alphas: [Affine; 6],
    pub iterations: usize,
    pub minpool_kernel: usize,
    pub avgpool_kernel: usize,
    pub spatial_kernel: usize,
}

impl Default for RegularizerParams {
    fn default() -> Self {
        let mut alphas = [Affine::IDENTITY; 6];
        alphas[5].scale = DEFAULT_TEMPERATURE;
        Self {
            alphas,
            iterations: 2,
            minpool_kernel: 3,
            avgpool_kernel: 3,
            spatial_kernel: 3,
        }
    }
}

/// Softmax temperature used when no other value is configured. SSC costs
/// are mean squared differences of values in `[0, 1]` and regularized rows
/// typically span ~1e-2, so the scale has to be large for the softmax to
/// be selective; the value comes from a grid search on the phantom suites
/// (`examples/tune.rs`).
pub const DEFAULT_TEMPERATURE: f32 = 10_000.0;

impl RegularizerParams {
    /// Identity scale/bias everywhere except the temperature.
    pub fn identity(iterations: usize) -> Self {
        Self {
            alphas: [Affine::IDENTITY; 6],
            iterations,
            ..Self::default()
        }
    }

    pub fn temperature(&self) -> f32 {
        self.alphas[5].scale
    }

    pub fn validate(&self) -> Result<()> {
        for (name, k) in [
            ("minpool_kernel", self.minpool_kernel),
            ("avgpool_kernel", self.avgpool_kernel),
            ("spatial_kernel", self.spatial_kernel),
        ] {
            if k == 0 || k % 2 == 0 {
                return Err(Error::param(alloc::format!(
                    "{name} must be odd and positive, got {k}"
                )));
            }
        }
        if self
            .alphas
            .iter()
            .any(|a| !a.scale.is_finite() || !a.bias.is_finite())
        {
            return Err(Error::param("regulariser scales and biases must be finite"));
        }
        if self.alphas[5].scale <= 0.0 {
            return Err(Error::param("softmax temperature must be positive"));
        }
        Ok(())
    }

    fn iteration_alphas(&self, it: usize) -> (Affine, Affine) {
        if it == 0 {
            (self.alphas[0], self.alphas[1])
        } else {
            (self.alphas[2], self.alphas[3])
        }
    }
}

/// Sliding-window minimum with replicate padding. `kernel` must be odd.
pub fn min_pool_1d(input: &[f32], kernel: usize) -> Vec<f32> {
    let mut out = vec![0.0; input.len()];
    pool_strided(input, &mut out, input.len(), 1, kernel, Pool::Min);
    out
}

/// Sliding-window mean with replicate padding. `kernel` must be odd.
pub fn avg_pool_1d(input: &[f32], kernel: usize) -> Vec<f32> {
    let mut out = vec![0.0; input.len()];
    pool_strided(input, &mut out, input.len(), 1, kernel, Pool::Avg);
    out
}

#[derive(Clone, Copy)]
enum Pool {
    Min,
    Avg,
}

/// Pools one line of `n` elements spaced `stride` apart.
#[inline]
fn pool_strided(
    input: &[f32],
    out: &mut [f32],
    n: usize,
    stride: usize,
    kernel: usize,
    pool: Pool,
) {
    let r = (kernel / 2) as isize;
    let last = n as isize - 1;
    let inv = 1.0 / kernel as f32;
    for i in 0..n as isize {
        let mut acc = match pool {
            Pool::Min => f32::INFINITY,
            Pool::Avg => 0.0,
        };
        for off in -r..=r {
            let v = input[(i + off).clamp(0, last) as usize * stride];
            match pool {
                Pool::Min => acc = acc.min(v),
                Pool::Avg => acc += v,
            }
        }
        if let Pool::Avg = pool {
            acc *= inv;
        }
        out[i as usize * stride] = acc;
    }
}

/// Pools an `S³` block along all three axes with the same window.
fn pool_block(block: &mut [f32], scratch: &mut [f32], steps: usize, kernel: usize, pool: Pool) {
    if kernel == 1 {
        return;
    }
    let s = steps;
    // axis 2 (contiguous)
    for line in 0..s * s {
        let base = line * s;
        pool_strided(
            &block[base..base + s],
            &mut scratch[base..base + s],
            s,
            1,
            kernel,
            pool,
        );
    }
    // axis 1
    for i in 0..s {
        for k in 0..s {
            let base = i * s * s + k;
            pool_strided(&scratch[base..], &mut block[base..], s, s, kernel, pool);
        }
    }
    // axis 0
    for j in 0..s {
        for k in 0..s {
            let base = j * s + k;
            pool_strided(&block[base..], &mut scratch[base..], s, s * s, kernel, pool);
        }
    }
    block.copy_from_slice(scratch);
}

/// Min-pool then two average pools over one row's `S³` displacement block.
pub fn min_convolution_row(row: &mut [f32], steps: usize, params: &RegularizerParams) {
    let mut scratch = vec![0.0f32; row.len()];
    pool_block(row, &mut scratch, steps, params.minpool_kernel, Pool::Min);
    pool_block(row, &mut scratch, steps, params.avgpool_kernel, Pool::Avg);
    pool_block(row, &mut scratch, steps, params.avgpool_kernel, Pool::Avg);
}

fn check_displacement_kernels(steps: usize, params: &RegularizerParams) -> Result<()> {
    params.validate()?;
    for kernel in [params.minpool_kernel, params.avgpool_kernel] {
        if kernel > steps {
            return Err(Error::KernelTooLarge {
                kernel,
                extent: steps,
            });
        }
    }
    Ok(())
}

/// Approximate min-convolution over the displacement dimensions only.
pub fn min_convolution(cost: &CostTensor, params: &RegularizerParams) -> Result<CostTensor> {
    let mut out = cost.clone();
    min_convolution_in_place(&Sequential, &mut out, params)?;
    Ok(out)
}

fn min_convolution_in_place<E: RowExecutor>(
    exec: &E,
    cost: &mut CostTensor,
    params: &RegularizerParams,
) -> Result<()> {
    let steps = cost.space().steps();
    check_displacement_kernels(steps, params)?;
    let len = cost.row_len();
    exec.for_each_row(cost.data_mut(), len, |_, row| {
        min_convolution_row(row, steps, params)
    });
    Ok(())
}

/// Average pool over the three control-grid dimensions, independently per
/// displacement bin.
pub fn mean_field_step(cost: &CostTensor, params: &RegularizerParams) -> Result<CostTensor> {
    params.validate()?;
    let counts = cost.grid().counts();
    let kernel = params.spatial_kernel;
    for &n in &counts {
        if kernel > n {
            return Err(Error::KernelTooLarge { kernel, extent: n });
        }
    }
    let row_len = cost.row_len();
    let mut src = cost.data().to_vec();
    let mut dst = vec![0.0f32; src.len()];
    let r = (kernel / 2) as isize;
    let inv = 1.0 / kernel as f32;
    let strides = [counts[1] * counts[2], counts[2], 1];
    for axis in 0..3 {
        if kernel == 1 {
            break;
        }
        let n = counts[axis] as isize;
        for point in 0..cost.grid().len() {
            let idx = cost.grid().unravel(point);
            let out = &mut dst[point * row_len..(point + 1) * row_len];
            out.fill(0.0);
            for off in -r..=r {
                let j = (idx[axis] as isize + off).clamp(0, n - 1) as usize;
                let neighbour = point - idx[axis] * strides[axis] + j * strides[axis];
                let inp = &src[neighbour * row_len..(neighbour + 1) * row_len];
                for (o, v) in out.iter_mut().zip(inp) {
                    *o += v;
                }
            }
            for o in out.iter_mut() {
                *o *= inv;
            }
        }
        core::mem::swap(&mut src, &mut dst);
    }
    CostTensor::new(cost.grid(), cost.space(), src)
}

fn apply_affine(cost: &mut CostTensor, a: Affine) {
    if a.is_identity() {
        return;
    }
    for v in cost.data_mut() {
        *v = a.apply(*v);
    }
}

/// Full regularisation block, sequential.
pub fn regularize(cost: &CostTensor, params: &RegularizerParams) -> Result<CostTensor> {
    regularize_with(&Sequential, cost, params)
}

/// For each iteration: scale/bias, min-convolution, scale/bias, mean-field
/// step. Then the final scale/bias. With zero iterations only the final
/// scale/bias is applied.
pub fn regularize_with<E: RowExecutor>(
    exec: &E,
    cost: &CostTensor,
    params: &RegularizerParams,
) -> Result<CostTensor> {
    params.validate()?;
    let mut current = cost.clone();
    for it in 0..params.iterations {
        let (before_min, before_mean) = params.iteration_alphas(it);
        apply_affine(&mut current, before_min);
        min_convolution_in_place(exec, &mut current, params)?;
        apply_affine(&mut current, before_mean);
        current = mean_field_step(&current, params)?;
    }
    apply_affine(&mut current, params.alphas[4]);
    current.check_finite()?;
    Ok(current)
}

/// Exact 1D min-convolution with a parabola:
/// `out[i] = min_j cost[j] + curvature · (i - j)²`, in linear time via the
/// lower envelope of parabolas. Infinite entries never enter the envelope.
pub fn exact_lower_envelope(cost: &[f64], curvature: f64) -> Vec<f64> {
    let n = cost.len();
    let mut out = vec![f64::INFINITY; n];
    if n == 0 {
        return out;
    }
    let mut roots: Vec<usize> = Vec::with_capacity(n);
    let mut bounds: Vec<f64> = Vec::with_capacity(n + 1);
    let height = |q: usize| cost[q] + curvature * (q * q) as f64;
    for (q, c) in cost.iter().enumerate() {
        if !c.is_finite() {
            continue;
        }
        if roots.is_empty() {
            roots.push(q);
            bounds.push(f64::NEG_INFINITY);
            bounds.push(f64::INFINITY);
            continue;
        }
        loop {
            let v = *roots.last().expect("envelope keeps at least one parabola");
            let s = (height(q) - height(v)) / (2.0 * curvature * (q - v) as f64);
            // bounds[0] is -inf, so the first parabola is never popped
            if roots.len() > 1 && s <= bounds[roots.len() - 1] {
                roots.pop();
                bounds.pop();
                continue;
            }
            let last = bounds.len() - 1;
            bounds[last] = s;
            roots.push(q);
            bounds.push(f64::INFINITY);
            break;
        }
    }
    if roots.is_empty() {
        return out;
    }
    let mut k = 0;
    for (i, o) in out.iter_mut().enumerate() {
        while bounds[k + 1] < i as f64 {
            k += 1;
        }
        let d = i as f64 - roots[k] as f64;
        *o = curvature * d * d + cost[roots[k]];
    }
    out
}

/// Separable 3D version of [`exact_lower_envelope`] on an `S³` block,
/// distances measured in displacement steps.
pub fn exact_lower_envelope_3d(block: &[f64], steps: usize, curvature: f64) -> Vec<f64> {
    let s = steps;
    assert_eq!(block.len(), s * s * s, "block must hold steps³ values");
    let mut cur = block.to_vec();
    let mut line = vec![0.0; s];
    for (stride, outer) in [(1usize, [s * s, s]), (s, [s * s, 1]), (s * s, [s, 1])] {
        for a in 0..s {
            for b in 0..s {
                let base = a * outer[0] + b * outer[1];
                for (t, l) in line.iter_mut().enumerate() {
                    *l = cur[base + t * stride];
                }
                let env = exact_lower_envelope(&line, curvature);
                for (t, e) in env.into_iter().enumerate() {
                    cur[base + t * stride] = e;
                }
            }
        }
    }
    cur
}
