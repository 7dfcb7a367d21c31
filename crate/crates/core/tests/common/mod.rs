//! Naive reference implementations shared by the integration tests. They
//! favour obviousness over speed and share no code with the library.
#![allow(dead_code)]

use dispreg_core::rng::XorShift64Star;
use dispreg_core::{Dims, IntensityVolume};

pub fn idx(dims: Dims, i: usize, j: usize, k: usize) -> usize {
    (i * dims[1] + j) * dims[2] + k
}

pub fn clamp(i: isize, n: usize) -> usize {
    i.clamp(0, n as isize - 1) as usize
}

/// Per-axis linear weights at normalized coordinate `p` on an axis of `n`
/// voxels: `(lo, hi, weight of hi)`.
pub fn axis(p: f64, n: usize) -> (usize, usize, f64) {
    let x = ((p + 1.0) * n as f64 / 2.0 - 0.5).clamp(0.0, (n - 1) as f64);
    let lo = x.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    (lo, hi, x - lo as f64)
}

/// Trilinear sample of channel `c` of an interleaved volume.
pub fn sample(data: &[f32], dims: Dims, channels: usize, c: usize, p: [f64; 3]) -> f64 {
    let a = [
        axis(p[0], dims[0]),
        axis(p[1], dims[1]),
        axis(p[2], dims[2]),
    ];
    let mut acc = 0.0;
    for (i, wi) in [(a[0].0, 1.0 - a[0].2), (a[0].1, a[0].2)] {
        for (j, wj) in [(a[1].0, 1.0 - a[1].2), (a[1].1, a[1].2)] {
            for (k, wk) in [(a[2].0, 1.0 - a[2].2), (a[2].1, a[2].2)] {
                acc += wi * wj * wk * data[idx(dims, i, j, k) * channels + c] as f64;
            }
        }
    }
    acc
}

pub fn center(i: usize, n: usize) -> f64 {
    2.0 * (i as f64 + 0.5) / n as f64 - 1.0
}

pub fn random_volume(dims: Dims, seed: u64) -> IntensityVolume {
    let mut rng = XorShift64Star::new(seed);
    IntensityVolume::from_fn(dims, |_| rng.range(0.0, 10.0) as f32).unwrap()
}

pub fn random_vec(rng: &mut XorShift64Star, n: usize, lo: f64, hi: f64) -> Vec<f32> {
    (0..n).map(|_| rng.range(lo, hi) as f32).collect()
}

pub fn offset(q: f64, steps: usize, j: usize) -> f64 {
    if steps == 1 {
        return 0.0;
    }
    let half = ((steps - 1) / 2) as f64;
    q * (j as f64 - half) / half
}

pub fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol
}
