//! The quick example suite behind `dispreg selftest`: closed-form cases of
//! every stage, each reported as one pass/fail line.

use std::path::PathBuf;

use dispreg_core::correlation::flop_estimate_points;
use dispreg_core::features::{extract_intensity_gradient, extract_ssc, SigmaPolicy};
use dispreg_core::geometry::{spatial_gradient, voxel_centers};
use dispreg_core::instance_opt::refine;
use dispreg_core::metrics::{dice, jacobian_stats, mean_dice};
use dispreg_core::phantom::generate;
use dispreg_core::pipeline::{register, warp_moving_labels};
use dispreg_core::regularizer::{exact_lower_envelope, mean_field_step, regularize};
use dispreg_core::transform::{
    diffusion_penalty, expected_displacement, nonlocal_label_loss, softmax_probabilities,
    upsample_field, warp_intensity, warp_labels,
};
use dispreg_core::{
    dissimilarity_tensor, ControlGrid, CostTensor, DisplacementField, DisplacementSpace,
    FeatureKind, InstanceOptConfig, IntensityVolume, LabelVolume, Metric, PhantomSpec, ProbTensor,
    RegistrationConfig, RegularizerParams, Volume,
};

use crate::io::{read_raw, write_raw, DType};

type Check = Result<(), String>;
type CheckFn = fn() -> Check;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        if $cond {
        } else {
            return Err(format!($($msg)+));
        }
    };
}

fn core<T>(r: dispreg_core::Result<T>) -> Result<T, String> {
    r.map_err(|e| e.to_string())
}

fn ramp(dims: [usize; 3]) -> IntensityVolume {
    IntensityVolume::from_fn(dims, |[i, j, k]| (i * 7 + j * 3 + k * 5 % 11) as f32).unwrap()
}

fn sampling() -> Check {
    let v = ramp([5, 6, 7]);
    for (p, &x) in voxel_centers(v.dims()).zip(v.data()) {
        ensure!(v.sample(p) == x as f64, "center sample differs at {p:?}");
    }
    let c = core(IntensityVolume::filled([4, 5, 6], 7.0))?;
    for p in [[0.1, -0.7, 0.33], [1.5, -2.0, 0.0]] {
        ensure!(
            (c.sample(p) - 7.0).abs() < 1e-12,
            "constant volume sampled {}",
            c.sample(p)
        );
    }
    Ok(())
}

fn gradients() -> Check {
    let zero = core(DisplacementField::zeros([4, 4, 4]))?;
    ensure!(
        core(spatial_gradient(&zero))?
            .iter()
            .flatten()
            .all(|g| *g == [0.0; 3]),
        "zero field has a gradient"
    );
    let dims = [5, 6, 7];
    let linear = core(DisplacementField::from_fn(dims, |[i, _, _]| {
        [0.3 * i as f64, 0.0, 0.0]
    }))?;
    let g = core(spatial_gradient(&linear))?;
    ensure!(
        g[0].iter().all(|d| (d[0] - 0.3).abs() < 1e-6),
        "linear field gradient not constant"
    );
    Ok(())
}

fn ssc() -> Check {
    let c = core(IntensityVolume::filled([6, 6, 6], 3.0))?;
    let f = core(extract_ssc(&c, 1, SigmaPolicy::LocalMean))?;
    ensure!(
        f.data().iter().all(|&x| x == 1.0),
        "constant volume SSC is not 1"
    );
    let v = ramp([7, 7, 7]).map(|x| (x * 13.0) % 17.0);
    let shifted = v.map(|x| x + 100.0);
    let a = core(extract_ssc(&v, 1, SigmaPolicy::LocalMean))?;
    let b = core(extract_ssc(&shifted, 1, SigmaPolicy::LocalMean))?;
    let diff = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f32::max);
    ensure!(
        diff < 1e-6,
        "SSC changed by {diff} under an intensity shift"
    );
    Ok(())
}

fn intensity_gradient() -> Check {
    let c = core(IntensityVolume::filled([5, 5, 5], 2.0))?;
    let f = core(extract_intensity_gradient(&c))?;
    ensure!(
        f.data().iter().all(|&x| x == 0.0),
        "constant volume has non-zero features"
    );
    let r = core(IntensityVolume::from_fn([9, 9, 9], |[_, _, k]| k as f32))?;
    let f = core(extract_intensity_gradient(&r))?;
    let g = f.vector([4, 4, 4])[3];
    ensure!(g > 0.0, "ramp gradient {g} is not positive");
    for i in 3..6 {
        for j in 3..6 {
            for k in 3..6 {
                let v = f.vector([i, j, k]);
                ensure!(
                    (v[3] - g).abs() < 1e-5 && v[1].abs() < 1e-5 && v[2].abs() < 1e-5,
                    "ramp gradient {v:?}"
                );
            }
        }
    }
    Ok(())
}

fn feature_sampling() -> Check {
    let f = core(extract_ssc(
        &ramp([6, 6, 6]).map(|x| x % 5.0),
        1,
        SigmaPolicy::LocalMean,
    ))?;
    let points: Vec<_> = voxel_centers(f.dims()).collect();
    ensure!(
        f.sample_at(&points) == f.data(),
        "centers do not reproduce stored vectors"
    );
    ensure!(
        f.sample_at(&points) == f.sample_at(&points),
        "sampling is not pure"
    );
    Ok(())
}

fn correlation() -> Check {
    let f = core(FeatureKind::default().extract(&ramp([12, 12, 12]).map(|x| x % 9.0), 1))?;
    let grid = core(ControlGrid::cubic(4))?;
    let space = core(DisplacementSpace::new(0.3, 3))?;
    let cost = core(dissimilarity_tensor(&f, &f, grid, space, Metric::Mse))?;
    let zero = space.zero_index();
    ensure!(
        (0..grid.len()).all(|k| cost.row(k)[zero] == 0.0),
        "self-match cost is not zero"
    );
    ensure!(
        flop_estimate_points(1, 3375, 12) == 3 * 3375 * 12,
        "flop count"
    );
    Ok(())
}

fn regularizer() -> Check {
    let grid = core(ControlGrid::cubic(3))?;
    let space = core(DisplacementSpace::new(0.4, 5))?;
    let constant = CostTensor::filled(grid, space, 2.5);
    let out = core(regularize(&constant, &RegularizerParams::identity(2)))?;
    ensure!(
        out.data().iter().all(|&x| (x - 2.5).abs() < 1e-6),
        "constant tensor not preserved"
    );
    let mf = core(mean_field_step(&constant, &RegularizerParams::default()))?;
    ensure!(
        mf.data().iter().all(|&x| (x - 2.5).abs() < 1e-6),
        "mean field changed a constant"
    );
    let varied = core(CostTensor::new(
        grid,
        space,
        (0..grid.len() * space.len())
            .map(|i| (i % 7) as f32)
            .collect(),
    ))?;
    let passthrough = core(regularize(&varied, &RegularizerParams::identity(0)))?;
    ensure!(
        passthrough == varied,
        "zero iterations with identity alphas is not the identity"
    );
    let mut delta = vec![f64::INFINITY; 15];
    delta[7] = 0.0;
    let env = exact_lower_envelope(&delta, 0.5);
    ensure!(
        (0..15).all(|i| env[i] == 0.5 * (i as f64 - 7.0).powi(2)),
        "delta envelope {env:?}"
    );
    ensure!(
        exact_lower_envelope(&[3.0; 15], 0.5) == [3.0; 15],
        "constant envelope"
    );
    Ok(())
}

fn softmax_and_expectation() -> Check {
    let grid = core(ControlGrid::cubic(2))?;
    let space = core(DisplacementSpace::new(0.4, 15))?;
    let p = core(softmax_probabilities(
        &CostTensor::filled(grid, space, 0.3),
        10.0,
    ))?;
    ensure!(
        p.data().iter().all(|&x| (x - 1.0 / 3375.0).abs() < 1e-9),
        "uniform softmax"
    );
    let e = expected_displacement(&p);
    ensure!(
        e.vectors().iter().all(|v| v.iter().all(|c| c.abs() < 1e-9)),
        "uniform expectation not zero"
    );
    let mut data = vec![1e6f32; grid.len() * space.len()];
    let t = 100;
    for k in 0..grid.len() {
        data[k * space.len() + t] = 0.0;
    }
    let p = core(softmax_probabilities(
        &core(CostTensor::new(grid, space, data))?,
        1.0,
    ))?;
    ensure!(
        (0..grid.len()).all(|k| p.row(k)[t] > 1.0 - 1e-6),
        "degenerate softmax"
    );
    let mut delta = vec![0.0f32; grid.len() * space.len()];
    for k in 0..grid.len() {
        delta[k * space.len() + t] = 1.0;
    }
    let e = expected_displacement(&core(ProbTensor::new(grid, space, delta))?);
    ensure!(
        e.vectors().iter().all(|v| *v == space.offset(t)),
        "delta expectation"
    );
    Ok(())
}

fn upsampling_and_warping() -> Check {
    let c = [0.1, -0.2, 0.05];
    let up = core(upsample_field(
        &core(DisplacementField::constant([3, 3, 3], c))?,
        [7, 8, 9],
    ))?;
    ensure!(
        up.vectors()
            .iter()
            .all(|v| (0..3).all(|i| (v[i] - c[i]).abs() < 1e-12)),
        "constant upsampling"
    );
    let ctrl = core(DisplacementField::from_fn([4, 4, 4], |[i, j, k]| {
        [i as f64 * 0.01, j as f64, k as f64]
    }))?;
    let full = core(upsample_field(&ctrl, [4, 4, 4]))?;
    ensure!(
        full == ctrl,
        "upsampling onto the control grid is not the identity"
    );
    let v = ramp([6, 5, 4]);
    let zero = core(DisplacementField::zeros(v.dims()))?;
    ensure!(
        core(warp_intensity(&v, &zero))? == v,
        "zero warp changed intensities"
    );
    let labels = v.map(|x| (x as u16) % 4);
    ensure!(
        core(warp_labels(&labels, &zero))? == labels,
        "zero warp changed labels"
    );
    Ok(())
}

fn losses() -> Check {
    let constant = core(DisplacementField::constant([4, 4, 4], [0.1, 0.2, 0.3]))?;
    ensure!(
        core(diffusion_penalty(&constant, 1.5))? == 0.0,
        "constant field penalised"
    );
    let f = core(DisplacementField::from_fn([4, 5, 6], |[i, j, k]| {
        [(i * j) as f64 * 0.01, k as f64 * 0.02, 0.0]
    }))?;
    let (a, b) = (
        core(diffusion_penalty(&f, 1.5))?,
        core(diffusion_penalty(&f, 3.0))?,
    );
    ensure!(
        (b - 2.0 * a).abs() <= 1e-12 * b.abs(),
        "penalty not linear in lambda"
    );
    let grid = core(ControlGrid::cubic(3))?;
    let space = core(DisplacementSpace::new(0.4, 3))?;
    let mut delta = vec![0.0f32; grid.len() * space.len()];
    for k in 0..grid.len() {
        delta[k * space.len() + space.zero_index()] = 1.0;
    }
    let prob = core(ProbTensor::new(grid, space, delta))?;
    let labels = core(LabelVolume::from_fn([6, 6, 6], |[i, j, k]| {
        ((i + 2 * j + k) % 3) as u16
    }))?;
    ensure!(
        core(nonlocal_label_loss(&prob, &labels, &labels, 3))? == 0.0,
        "perfect alignment has loss"
    );
    Ok(())
}

fn refinement() -> Check {
    let grid = core(ControlGrid::cubic(2))?;
    let space = core(DisplacementSpace::new(0.4, 5))?;
    let cost = core(CostTensor::new(
        grid,
        space,
        (0..grid.len() * space.len())
            .map(|i| (i % 11) as f32)
            .collect(),
    ))?;
    let init = core(DisplacementField::from_fn([2, 2, 2], |[i, j, k]| {
        [0.1 * i as f64, -0.05 * j as f64, 0.02 * k as f64]
    }))?;
    let cfg = InstanceOptConfig {
        steps: 0,
        ..Default::default()
    };
    ensure!(
        core(refine(&cost, &init, &cfg))? == init,
        "zero steps changed the field"
    );
    Ok(())
}

fn metrics() -> Check {
    let a = core(LabelVolume::from_fn(
        [8, 8, 8],
        |[i, _, _]| if i < 4 { 1 } else { 2 },
    ))?;
    ensure!(
        core(dice(&a, &a, &[1, 2]))? == [Some(1.0), Some(1.0)],
        "self Dice"
    );
    let b = a.map(|l| if l == 1 { 3 } else { 0 });
    let c = a.map(|l| if l == 2 { 3 } else { 0 });
    ensure!(core(dice(&b, &c, &[3]))? == [Some(0.0)], "disjoint Dice");
    let s = core(jacobian_stats(&core(DisplacementField::zeros([5, 5, 5]))?))?;
    ensure!(
        s.mean_det == 1.0 && s.std_det == 0.0 && s.folding_fraction == 0.0,
        "zero-field Jacobian {s:?}"
    );
    Ok(())
}

fn phantoms() -> Check {
    let base = PhantomSpec {
        dims: [24; 3],
        ..Default::default()
    };
    for deformation in [
        dispreg_core::Deformation::Translation,
        dispreg_core::Deformation::SmoothRandom,
    ] {
        let p = core(generate(&PhantomSpec {
            magnitude: 0.0,
            deformation,
            ..base
        }))?;
        ensure!(
            p.moving_labels == p.fixed_labels,
            "magnitude 0 moved labels"
        );
    }
    ensure!(
        core(generate(&base))? == core(generate(&base))?,
        "phantom not deterministic"
    );
    Ok(())
}

fn volume_io() -> Check {
    let dir = std::env::temp_dir().join(format!("dispreg-selftest-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let result = (|| {
        let v = Volume::from_fn([4, 4, 4], |[i, j, k]| {
            (i as f32 - 1.5) * 0.37 + (j * k) as f32
        })
        .unwrap();
        let path: PathBuf = dir.join("v.vhdr");
        write_raw(&v, &path, DType::F32).map_err(|e| e.to_string())?;
        let (back, _) = read_raw(&path).map_err(|e| e.to_string())?;
        ensure!(back == v, "f32 round trip changed values");
        let header = "dims = 10 10 10\ndtype = f32\nbyte_order = little\ndata_file = short.raw\n";
        std::fs::write(dir.join("short.vhdr"), header).map_err(|e| e.to_string())?;
        std::fs::write(dir.join("short.raw"), vec![0u8; 999 * 4]).map_err(|e| e.to_string())?;
        ensure!(
            matches!(
                read_raw(dir.join("short.vhdr")),
                Err(crate::Error::Truncated { .. })
            ),
            "short payload not reported as truncated"
        );
        Ok(())
    })();
    let _ = std::fs::remove_dir_all(&dir);
    result
}

fn self_registration() -> Check {
    let p = core(generate(&PhantomSpec {
        dims: [32; 3],
        ..Default::default()
    }))?;
    let cfg = RegistrationConfig {
        grid: [8; 3],
        ..Default::default()
    };
    let out = core(register(&p.fixed, &p.fixed, &cfg))?;
    let spacing = core(cfg.space())?.spacing();
    let mean = out.field.mean_norm();
    ensure!(
        mean < spacing,
        "mean |phi| {mean} exceeds the grid spacing {spacing}"
    );
    let warped = core(warp_moving_labels(&out, &p.fixed_labels))?;
    let d = mean_dice(&core(dice(&p.fixed_labels, &warped, &p.labels()))?).unwrap_or(0.0);
    ensure!(d >= 0.99, "self-registration Dice {d}");
    Ok(())
}

/// Every check by name.
pub fn checks() -> Vec<(&'static str, CheckFn)> {
    vec![
        ("sampling", sampling),
        ("spatial_gradient", gradients),
        ("ssc_features", ssc),
        ("intensity_gradient_features", intensity_gradient),
        ("feature_sampling", feature_sampling),
        ("correlation", correlation),
        ("regularizer", regularizer),
        ("softmax_expectation", softmax_and_expectation),
        ("upsample_warp", upsampling_and_warping),
        ("losses", losses),
        ("instance_opt", refinement),
        ("metrics", metrics),
        ("phantom", phantoms),
        ("volume_io", volume_io),
        ("self_registration", self_registration),
    ]
}

/// Runs every check, printing `PASS name` or `FAIL name: reason`; returns
/// the number of failures.
pub fn run(out: &mut impl std::io::Write) -> std::io::Result<usize> {
    let mut failures = 0;
    for (name, check) in checks() {
        match check() {
            Ok(()) => writeln!(out, "PASS {name}")?,
            Err(reason) => {
                failures += 1;
                writeln!(out, "FAIL {name}: {reason}")?;
            }
        }
    }
    Ok(failures)
}
