//! Overlap and deformation-regularity measures.

use alloc::string::String;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::geometry::{linear_index, DisplacementField, LabelVolume};

/// Dice overlap per label; `None` when the label is absent from both
/// volumes.
pub fn dice(a: &LabelVolume, b: &LabelVolume, labels: &[u16]) -> Result<Vec<Option<f64>>> {
    if a.dims() != b.dims() {
        return Err(Error::DimensionMismatch {
            expected: a.dims(),
            actual: b.dims(),
        });
    }
    Ok(labels
        .iter()
        .map(|&l| {
            let (mut in_a, mut in_b, mut both) = (0usize, 0usize, 0usize);
            for (&x, &y) in a.data().iter().zip(b.data()) {
                let (ea, eb) = (x == l, y == l);
                in_a += ea as usize;
                in_b += eb as usize;
                both += (ea && eb) as usize;
            }
            if in_a + in_b == 0 {
                None
            } else {
                Some(2.0 * both as f64 / (in_a + in_b) as f64)
            }
        })
        .collect())
}

/// Mean of the defined entries, `None` if there are none.
pub fn mean_dice(per_label: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = per_label.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct JacobianStats {
    /// Population standard deviation of the determinant.
    pub std_det: f64,
    pub mean_det: f64,
    /// Share of evaluated voxels with a determinant `<= 0`.
    pub folding_fraction: f64,
    pub voxels: usize,
}

/// Jacobian determinant statistics of a full-resolution field over interior
/// voxels. Displacements are converted from normalized to voxel units
/// (`n / 2` voxels per unit on an axis of `n` voxels), then
/// `J = I + ∂u/∂x` by central differences.
pub fn jacobian_stats(field: &DisplacementField) -> Result<JacobianStats> {
    let dims = field.dims();
    for (axis, &len) in dims.iter().enumerate() {
        if len < 3 {
            return Err(Error::DegenerateAxis {
                axis,
                len,
                required: 3,
            });
        }
    }
    let scale = [
        dims[0] as f64 * 0.5,
        dims[1] as f64 * 0.5,
        dims[2] as f64 * 0.5,
    ];
    let v = field.vectors();
    let mut dets = Vec::with_capacity((dims[0] - 2) * (dims[1] - 2) * (dims[2] - 2));
    for i in 1..dims[0] - 1 {
        for j in 1..dims[1] - 1 {
            for k in 1..dims[2] - 1 {
                let idx = [i, j, k];
                let mut jac = [[0.0f64; 3]; 3];
                for axis in 0..3 {
                    let mut fwd = idx;
                    fwd[axis] += 1;
                    let mut back = idx;
                    back[axis] -= 1;
                    let a = v[linear_index(dims, fwd)];
                    let b = v[linear_index(dims, back)];
                    for c in 0..3 {
                        jac[c][axis] = 0.5 * (a[c] - b[c]) * scale[c];
                    }
                    jac[axis][axis] += 1.0;
                }
                dets.push(det3(&jac));
            }
        }
    }
    let n = dets.len() as f64;
    let mean = dets.iter().sum::<f64>() / n;
    let var = dets.iter().map(|d| (d - mean) * (d - mean)).sum::<f64>() / n;
    let folded = dets.iter().filter(|&&d| d <= 0.0).count();
    Ok(JacobianStats {
        std_det: libm::sqrt(var),
        mean_det: mean,
        folding_fraction: folded as f64 / n,
        voxels: dets.len(),
    })
}

fn det3(m: &[[f64; 3]; 3]) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
        - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Summary of one registration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct RegistrationReport {
    /// `(label, dice)`; `None` when the label is in neither volume.
    pub dice: Vec<(u16, Option<f64>)>,
    pub mean_dice: Option<f64>,
    /// Mean Dice before registration, when labels were available.
    pub initial_mean_dice: Option<f64>,
    pub jacobian: Option<JacobianStats>,
    pub label_loss: Option<f64>,
    pub mean_displacement: f64,
    /// Voxels per normalized unit on each axis of the fixed image.
    pub voxels_per_unit: [f64; 3],
    /// `(stage, seconds)` in execution order.
    pub runtimes: Vec<(String, f64)>,
}
