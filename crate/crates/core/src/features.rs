//! Handcrafted dense features.
//!
//! Two extractors are provided: self-similarity context (SSC), which compares
//! patch pairs around every voxel and is insensitive to intensity offsets, and
//! a cheap smoothed-intensity-plus-gradient baseline. Both produce a
//! [`FeatureVolume`] at image resolution which is then box-filtered and
//! resampled to a coarser grid (`stride` voxels per feature voxel).

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    derivative_stencil, linear_index, trilinear_stencil, unravel, voxel_centers, voxel_count, Dims,
    IntensityVolume, Point3,
};

/// Multi-channel volume, channels interleaved per voxel.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVolume {
    channels: usize,
    dims: Dims,
    data: Vec<f32>,
}

impl FeatureVolume {
    pub fn new(channels: usize, dims: Dims, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::param("feature volume needs at least one channel"));
        }
        if dims.contains(&0) {
            return Err(Error::InvalidDimensions(dims));
        }
        let expected = voxel_count(dims) * channels;
        if data.len() != expected {
            return Err(Error::DataLength {
                expected,
                actual: data.len(),
            });
        }
        if data.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("feature extraction"));
        }
        Ok(Self {
            channels,
            dims,
            data,
        })
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dims(&self) -> Dims {
        self.dims
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    /// Feature vector stored at voxel `idx`.
    pub fn vector(&self, idx: [usize; 3]) -> &[f32] {
        let at = linear_index(self.dims, idx) * self.channels;
        &self.data[at..at + self.channels]
    }

    /// One channel as a scalar volume.
    pub fn channel(&self, c: usize) -> IntensityVolume {
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        IntensityVolume::new(self.dims, [1.0; 3], data).expect("channel has consistent size")
    }

    /// Trilinearly sampled feature vector at `p`, written to `out`
    /// (length `channels`). Clamps at the border like scalar sampling.
    #[inline]
    pub fn sample_into(&self, p: Point3, out: &mut [f32]) {
        let s = trilinear_stencil(self.dims, p);
        out.fill(0.0);
        for (&i, &w) in s.index.iter().zip(s.weight.iter()) {
            if w == 0.0 {
                continue;
            }
            let w = w as f32;
            let v = &self.data[i * self.channels..(i + 1) * self.channels];
            for (o, x) in out.iter_mut().zip(v) {
                *o += w * x;
            }
        }
    }

    /// Feature vectors at each point, flattened as `points.len() × channels`.
    pub fn sample_at(&self, points: &[Point3]) -> Vec<f32> {
        let mut out = vec![0.0f32; points.len() * self.channels];
        for (p, chunk) in points.iter().zip(out.chunks_exact_mut(self.channels)) {
            self.sample_into(*p, chunk);
        }
        out
    }

    /// Box-filters with a window of `stride` voxels and resamples at the
    /// voxel centers of a grid `round(n / stride)` voxels wide per axis.
    pub fn downsample(&self, stride: usize) -> Result<Self> {
        if stride == 0 {
            return Err(Error::param("feature stride must be at least 1"));
        }
        if stride == 1 {
            return Ok(self.clone());
        }
        let mut smoothed = self.data.clone();
        for axis in 0..3 {
            smoothed = box_filter_axis(&smoothed, self.dims, self.channels, axis, stride);
        }
        let blurred = FeatureVolume {
            channels: self.channels,
            dims: self.dims,
            data: smoothed,
        };
        let out_dims: Dims = self
            .dims
            .map(|n| ((n as f64 / stride as f64 + 0.5) as usize).max(1));
        let mut data = vec![0.0f32; voxel_count(out_dims) * self.channels];
        for (p, chunk) in voxel_centers(out_dims).zip(data.chunks_exact_mut(self.channels)) {
            blurred.sample_into(p, chunk);
        }
        FeatureVolume::new(self.channels, out_dims, data)
    }
}

/// Mean over a window of `size` voxels along `axis` with clamped indices.
/// Even sizes extend one voxel further towards lower indices.
fn box_filter_axis(
    data: &[f32],
    dims: Dims,
    channels: usize,
    axis: usize,
    size: usize,
) -> Vec<f32> {
    let n = dims[axis] as isize;
    let lo = -((size / 2) as isize);
    let hi = lo + size as isize - 1;
    let inv = 1.0 / size as f64;
    let mut out = vec![0.0f32; data.len()];
    for lin in 0..voxel_count(dims) {
        let idx = unravel(dims, lin);
        for c in 0..channels {
            let mut acc = 0.0f64;
            for off in lo..=hi {
                let mut j = idx;
                j[axis] = (idx[axis] as isize + off).clamp(0, n - 1) as usize;
                acc += data[linear_index(dims, j) * channels + c] as f64;
            }
            out[lin * channels + c] = (acc * inv) as f32;
        }
    }
    out
}

/// How SSC normalizes patch distances.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum SigmaPolicy {
    /// Mean of the twelve patch distances at the voxel.
    #[default]
    LocalMean,
    /// Mean of all patch distances over the whole volume.
    GlobalMean,
}

/// Feature extractor selection.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureKind {
    Ssc {
        patch_radius: usize,
        sigma: SigmaPolicy,
    },
    IntensityGradient,
}

impl Default for FeatureKind {
    fn default() -> Self {
        FeatureKind::Ssc {
            patch_radius: 1,
            sigma: SigmaPolicy::LocalMean,
        }
    }
}

impl FeatureKind {
    pub fn channels(&self) -> usize {
        match self {
            FeatureKind::Ssc { .. } => SSC_CHANNELS,
            FeatureKind::IntensityGradient => 4,
        }
    }

    /// Extracts features at image resolution, then downsamples by `stride`.
    pub fn extract(&self, vol: &IntensityVolume, stride: usize) -> Result<FeatureVolume> {
        let full = match *self {
            FeatureKind::Ssc {
                patch_radius,
                sigma,
            } => extract_ssc(vol, patch_radius, sigma)?,
            FeatureKind::IntensityGradient => extract_intensity_gradient(vol)?,
        };
        full.downsample(stride)
    }
}

pub const SSC_CHANNELS: usize = 12;

/// The six face neighbours.
pub const SIX_NEIGHBOURHOOD: [[isize; 3]; 6] = [
    [-1, 0, 0],
    [1, 0, 0],
    [0, -1, 0],
    [0, 1, 0],
    [0, 0, -1],
    [0, 0, 1],
];

/// Pairs of face neighbours at squared distance 2 (every unordered pair
/// except the three opposite ones).
pub fn ssc_pairs() -> [(usize, usize); SSC_CHANNELS] {
    let mut out = [(0, 0); SSC_CHANNELS];
    let mut n = 0;
    for a in 0..6 {
        for b in a + 1..6 {
            if a / 2 == b / 2 {
                continue;
            }
            out[n] = (a, b);
            n += 1;
        }
    }
    out
}

#[inline]
fn shifted(dims: Dims, idx: [usize; 3], off: [isize; 3]) -> usize {
    let mut j = [0usize; 3];
    for a in 0..3 {
        j[a] = (idx[a] as isize + off[a]).clamp(0, dims[a] as isize - 1) as usize;
    }
    linear_index(dims, j)
}

/// Self-similarity context descriptor with twelve channels.
///
/// For neighbour pair `(a, b)`, `s(x) = (I(x + n_a) - I(x + n_b))²` and the
/// patch distance at `v` is the mean of `s(v + p)` over the cube
/// `p ∈ [-r, r]³`. Every index is clamped into the volume at the step where it
/// is formed. Channel `j` is `exp(-D_j / σ²)`; a zero `σ²` (all patches
/// identical) yields 1.
pub fn extract_ssc(
    vol: &IntensityVolume,
    patch_radius: usize,
    sigma: SigmaPolicy,
) -> Result<FeatureVolume> {
    let dims = vol.dims();
    let min = 2 * patch_radius + 3;
    if dims.iter().any(|&n| n < min) {
        return Err(Error::VolumeTooSmall { dims, min });
    }
    let n = voxel_count(dims);
    let img = vol.data();
    let pairs = ssc_pairs();
    let size = 2 * patch_radius + 1;

    // distances[v * 12 + j]
    let mut distances = vec![0.0f32; n * SSC_CHANNELS];
    let mut sq = vec![0.0f32; n];
    for (j, &(a, b)) in pairs.iter().enumerate() {
        let na = SIX_NEIGHBOURHOOD[a];
        let nb = SIX_NEIGHBOURHOOD[b];
        for (lin, s) in sq.iter_mut().enumerate() {
            let idx = unravel(dims, lin);
            let d = img[shifted(dims, idx, na)] as f64 - img[shifted(dims, idx, nb)] as f64;
            *s = (d * d) as f32;
        }
        let mut patch = sq.clone();
        for axis in 0..3 {
            patch = centered_box_axis(&patch, dims, axis, size);
        }
        for (lin, v) in patch.iter().enumerate() {
            distances[lin * SSC_CHANNELS + j] = *v;
        }
    }

    let global = match sigma {
        SigmaPolicy::GlobalMean => {
            Some(distances.iter().map(|&d| d as f64).sum::<f64>() / distances.len() as f64)
        }
        SigmaPolicy::LocalMean => None,
    };
    let mut data = vec![0.0f32; n * SSC_CHANNELS];
    for (row, out) in distances
        .chunks_exact(SSC_CHANNELS)
        .zip(data.chunks_exact_mut(SSC_CHANNELS))
    {
        let var = global
            .unwrap_or_else(|| row.iter().map(|&d| d as f64).sum::<f64>() / SSC_CHANNELS as f64);
        for (o, &d) in out.iter_mut().zip(row) {
            *o = if var > 0.0 {
                libm::exp(-(d as f64) / var) as f32
            } else {
                1.0
            };
        }
    }
    FeatureVolume::new(SSC_CHANNELS, dims, data)
}

/// Centered mean over an odd window along one axis, indices clamped.
fn centered_box_axis(data: &[f32], dims: Dims, axis: usize, size: usize) -> Vec<f32> {
    let r = (size / 2) as isize;
    let n = dims[axis] as isize;
    let inv = 1.0 / size as f64;
    let mut out = vec![0.0f32; data.len()];
    for (lin, o) in out.iter_mut().enumerate() {
        let idx = unravel(dims, lin);
        let mut acc = 0.0f64;
        for off in -r..=r {
            let mut j = idx;
            j[axis] = (idx[axis] as isize + off).clamp(0, n - 1) as usize;
            acc += data[linear_index(dims, j)] as f64;
        }
        *o = (acc * inv) as f32;
    }
    out
}

/// Gaussian weights with `sigma = 1` voxel, radius 2, normalized to sum 1.
pub fn gaussian_kernel() -> [f64; 5] {
    let mut k = [0.0; 5];
    let mut total = 0.0;
    for (i, w) in k.iter_mut().enumerate() {
        let x = i as f64 - 2.0;
        *w = libm::exp(-0.5 * x * x);
        total += *w;
    }
    for w in k.iter_mut() {
        *w /= total;
    }
    k
}

/// Four channels: Gaussian-smoothed intensity standardized to zero mean and
/// unit variance, followed by its derivatives along axes 0, 1 and 2 (central
/// differences, one-sided at the border). A constant volume has zero
/// variance and yields all-zero channels.
pub fn extract_intensity_gradient(vol: &IntensityVolume) -> Result<FeatureVolume> {
    let dims = vol.dims();
    if dims.iter().any(|&n| n < 3) {
        return Err(Error::VolumeTooSmall { dims, min: 3 });
    }
    let n = voxel_count(dims);
    let kernel = gaussian_kernel();
    let mut smooth: Vec<f64> = vol.data().iter().map(|&v| v as f64).collect();
    for axis in 0..3 {
        let mut next = vec![0.0f64; n];
        for (lin, o) in next.iter_mut().enumerate() {
            let idx = unravel(dims, lin);
            for (t, w) in kernel.iter().enumerate() {
                *o += w * smooth[shifted(dims, idx, axis_offset(axis, t as isize - 2))];
            }
        }
        smooth = next;
    }
    let mean = smooth.iter().sum::<f64>() / n as f64;
    let var = smooth.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
    let std = libm::sqrt(var);
    let norm: Vec<f64> = if std > 1e-12 * (1.0 + mean.abs()) {
        smooth.iter().map(|v| (v - mean) / std).collect()
    } else {
        vec![0.0; n]
    };
    let mut data = vec![0.0f32; n * 4];
    for lin in 0..n {
        let idx = unravel(dims, lin);
        data[lin * 4] = norm[lin] as f32;
        for axis in 0..3 {
            let mut g = 0.0;
            for (pos, w) in derivative_stencil(idx[axis], dims[axis]) {
                let mut j = idx;
                j[axis] = pos;
                g += w * norm[linear_index(dims, j)];
            }
            data[lin * 4 + 1 + axis] = g as f32;
        }
    }
    FeatureVolume::new(4, dims, data)
}

fn axis_offset(axis: usize, by: isize) -> [isize; 3] {
    let mut off = [0isize; 3];
    off[axis] = by;
    off
}
