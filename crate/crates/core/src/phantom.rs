//! Seeded synthetic volume pairs with known correspondence.
//!
//! The fixed image holds ellipsoids ("organs") with distinct intensities on
//! top of a smooth random texture (upsampled from a 16³ grid, so structure
//! exists at a few voxels' scale everywhere), plus additive Gaussian noise. A ground-truth field `φ` is drawn
//! on the fixed grid and the moving image is the fixed one resampled through
//! the inverse of `x ↦ x + φ(x)`, so that `moving(x + φ(x)) = fixed(x)`.
//! Registering moving onto fixed should therefore recover `φ`.

use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{
    voxel_centers, Dims, DisplacementField, IntensityVolume, LabelVolume, Point3,
};
use crate::rng::XorShift64Star;
use crate::transform::{upsample_field, warp_intensity, warp_labels};

/// Largest per-component amplitude of the spatially varying part of a
/// smooth-random field, in normalized units on a cubic volume. Neighbouring
/// control points of the 4³ generator grid are 0.5 apart, so every entry of
/// `∂φ/∂x` stays below `4 · 1/16 = 0.25`; by Gershgorin all eigenvalues of
/// `I + ∂φ/∂x` then have positive real part and the map cannot fold.
pub const LOCAL_AMPLITUDE: f64 = 1.0 / 16.0;

/// Control points per axis of the smooth-random generator.
pub const GENERATOR_GRID: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Deformation {
    /// A constant shift of the given magnitude in a random direction.
    Translation,
    /// A random shared shift plus a bounded smooth variation, upsampled from
    /// a 4³ grid.
    SmoothRandom,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PhantomSpec {
    pub seed: u64,
    pub dims: Dims,
    pub organs: usize,
    pub deformation: Deformation,
    /// Largest displacement norm, normalized units.
    pub magnitude: f64,
    /// Capture range the phantom must stay inside.
    pub q: f64,
    pub noise_sigma: f64,
}

impl Default for PhantomSpec {
    fn default() -> Self {
        Self {
            seed: 1,
            dims: [64; 3],
            organs: 5,
            deformation: Deformation::SmoothRandom,
            magnitude: 0.2,
            q: 0.4,
            noise_sigma: 2.0,
        }
    }
}

impl PhantomSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.magnitude.is_finite() && self.magnitude >= 0.0 && self.magnitude < self.q) {
            return Err(Error::param(alloc::format!(
                "phantom magnitude {} must lie in [0, q = {})",
                self.magnitude,
                self.q
            )));
        }
        if self.dims.iter().any(|&n| n < 8) {
            return Err(Error::VolumeTooSmall {
                dims: self.dims,
                min: 8,
            });
        }
        if self.organs == 0 {
            return Err(Error::param("phantom needs at least one organ"));
        }
        if !(self.noise_sigma.is_finite() && self.noise_sigma >= 0.0) {
            return Err(Error::param("noise sigma must be finite and non-negative"));
        }
        Ok(())
    }
}

/// A generated pair with its ground truth on the fixed grid.
#[derive(Clone, Debug, PartialEq)]
pub struct Phantom {
    pub fixed: IntensityVolume,
    pub fixed_labels: LabelVolume,
    pub moving: IntensityVolume,
    pub moving_labels: LabelVolume,
    pub ground_truth: DisplacementField,
}

struct Ellipsoid {
    centre: Point3,
    radii: Point3,
    intensity: f64,
}

impl Ellipsoid {
    fn contains(&self, p: Point3) -> bool {
        (0..3)
            .map(|a| {
                let d = (p[a] - self.centre[a]) / self.radii[a];
                d * d
            })
            .sum::<f64>()
            <= 1.0
    }
}

fn random_direction(rng: &mut XorShift64Star) -> Point3 {
    loop {
        let v = [rng.normal(), rng.normal(), rng.normal()];
        let n = libm::sqrt(v[0] * v[0] + v[1] * v[1] + v[2] * v[2]);
        if n > 1e-9 {
            return v.map(|x| x / n);
        }
    }
}

fn random_field(rng: &mut XorShift64Star, n: usize, amplitude: f64) -> Result<DisplacementField> {
    let vectors = (0..n * n * n)
        .map(|_| core::array::from_fn(|_| rng.range(-amplitude, amplitude)))
        .collect();
    DisplacementField::new([n; 3], vectors)
}

/// Fixed-point inverse of `x ↦ x + φ(x)` expressed as a displacement:
/// `w(y) = z - y` with `z = y - φ(z)`.
fn inverse_displacement(field: &DisplacementField) -> Result<DisplacementField> {
    let vectors = voxel_centers(field.dims())
        .map(|y| {
            let mut z = y;
            for _ in 0..40 {
                let u = field.sample(z);
                z = [y[0] - u[0], y[1] - u[1], y[2] - u[2]];
            }
            [z[0] - y[0], z[1] - y[1], z[2] - y[2]]
        })
        .collect();
    DisplacementField::new(field.dims(), vectors)
}

/// Deterministic for a given spec.
pub fn generate(spec: &PhantomSpec) -> Result<Phantom> {
    spec.validate()?;
    let mut rng = XorShift64Star::new(spec.seed);
    let dims = spec.dims;

    let texture = upsample_field(&random_field(&mut rng, 16, 1.0)?, dims)?;
    let organs: Vec<Ellipsoid> = (0..spec.organs)
        .map(|i| Ellipsoid {
            centre: core::array::from_fn(|_| rng.range(-0.45, 0.45)),
            radii: core::array::from_fn(|_| rng.range(0.18, 0.32)),
            intensity: 60.0 + 40.0 * i as f64,
        })
        .collect();

    let mut labels = Vec::with_capacity(texture.len());
    let mut intensities = Vec::with_capacity(texture.len());
    for (p, tex) in voxel_centers(dims).zip(texture.vectors()) {
        let mut label = 0u16;
        let mut value = 20.0;
        for (i, organ) in organs.iter().enumerate() {
            if organ.contains(p) {
                label = i as u16 + 1;
                value = organ.intensity;
            }
        }
        value += 12.0 * tex[0] + 6.0 * tex[1];
        if spec.noise_sigma > 0.0 {
            value += spec.noise_sigma * rng.normal();
        }
        labels.push(label);
        intensities.push(value as f32);
    }
    let spacing = [1.5; 3];
    let fixed = IntensityVolume::new(dims, spacing, intensities)?;
    let fixed_labels = LabelVolume::new(dims, spacing, labels)?;

    let (ground_truth, inverse) = match spec.deformation {
        Deformation::Translation => {
            let t = random_direction(&mut rng).map(|v| v * spec.magnitude);
            (
                DisplacementField::constant(dims, t)?,
                DisplacementField::constant(dims, t.map(|v| -v))?,
            )
        }
        Deformation::SmoothRandom => {
            let min = *dims.iter().min().expect("three axes") as f64;
            let max = *dims.iter().max().expect("three axes") as f64;
            let local = (LOCAL_AMPLITUDE * min / max).min(spec.magnitude / 2.0);
            let shared_norm = (spec.magnitude - local * libm::sqrt(3.0)).max(0.0);
            let shared = random_direction(&mut rng).map(|v| v * shared_norm);
            let mut ctrl = random_field(&mut rng, GENERATOR_GRID, local)?;
            let shifted: Vec<[f64; 3]> = ctrl
                .vectors()
                .iter()
                .map(|v| [v[0] + shared[0], v[1] + shared[1], v[2] + shared[2]])
                .collect();
            ctrl = DisplacementField::new(ctrl.dims(), shifted)?;
            let gt = upsample_field(&ctrl, dims)?;
            let inv = inverse_displacement(&gt)?;
            (gt, inv)
        }
    };

    let moving = warp_intensity(&fixed, &inverse)?;
    let moving_labels = warp_labels(&fixed_labels, &inverse)?;
    Ok(Phantom {
        fixed,
        fixed_labels,
        moving,
        moving_labels,
        ground_truth,
    })
}

impl Phantom {
    pub fn generate(spec: &PhantomSpec) -> Result<Self> {
        generate(spec)
    }

    pub fn labels(&self) -> Vec<u16> {
        crate::pipeline::foreground_labels(&self.fixed_labels, &self.moving_labels)
    }
}
