//! The `dispreg` command line: `register`, `phantom`, `evaluate`,
//! `selftest`.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 I/O or file
//! format error, 3 numerical failure (non-finite values, failed selftest).

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use dispreg_core::phantom::generate;
use dispreg_core::{
    build_report, evaluate_field, register_observed, Deformation, Dims, IntensityVolume, LabelPair,
    LabelVolume, PhantomSpec,
};

use crate::config::{parse_grid, Settings};
use crate::error::{Error, Result};
use crate::exec::{with_threads, Parallel};
use crate::io::{
    read_field, read_labels, read_volume, write_field, write_labels, write_volume, DType,
};
use crate::report::{render_csv, render_key_value, render_timings};

#[derive(Debug, Parser)]
#[command(
    name = "dispreg",
    version,
    about = "Dense probabilistic displacement registration of 3D volumes"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Register a moving volume onto a fixed one.
    Register(RegisterArgs),
    /// Write a synthetic volume pair with labels and ground-truth field.
    Phantom(PhantomArgs),
    /// Score a displacement field against segmentations.
    Evaluate(EvaluateArgs),
    /// Run the built-in example suite.
    Selftest,
}

fn grid_arg(s: &str) -> std::result::Result<Dims, String> {
    parse_grid(s).map_err(|e| e.to_string())
}

#[derive(Debug, Default, Args)]
pub struct RegisterArgs {
    /// Fixed (reference) volume, .nii or .vhdr.
    #[arg(long)]
    pub fixed: Option<PathBuf>,
    /// Moving volume, deformed onto the fixed one.
    #[arg(long)]
    pub moving: Option<PathBuf>,
    #[arg(long)]
    pub fixed_labels: Option<PathBuf>,
    #[arg(long)]
    pub moving_labels: Option<PathBuf>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
    /// key = value file mirroring these flags; flags win.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Capture range, normalized units.
    #[arg(long)]
    pub q: Option<f64>,
    /// Offsets per axis (odd).
    #[arg(long)]
    pub steps: Option<usize>,
    /// Control points: N or DxHxW.
    #[arg(long, value_parser = grid_arg)]
    pub grid: Option<Dims>,
    /// Diffusion weight for refinement.
    #[arg(long)]
    pub lambda: Option<f64>,
    /// Skip mean-field regularisation (zero iterations).
    #[arg(long)]
    pub no_mean_field: bool,
    /// Report the plain warped-label MSE instead of the non-local loss.
    #[arg(long)]
    pub no_nonlocal_loss: bool,
    /// Refine the field by gradient descent on the cost tensor.
    #[arg(long, overrides_with = "no_refine")]
    pub refine: bool,
    #[arg(long, overrides_with = "refine")]
    pub no_refine: bool,
    /// Without --fixed/--moving: register the default phantom of this seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Worker threads (default: one per core).
    #[arg(long)]
    pub threads: Option<usize>,
    /// CSV report path (default: <out-dir>/report.csv).
    #[arg(long)]
    pub report: Option<PathBuf>,
}

impl RegisterArgs {
    fn settings(&self) -> Settings {
        let flag = |set: bool| set.then_some(true);
        Settings {
            fixed: self.fixed.clone(),
            moving: self.moving.clone(),
            fixed_labels: self.fixed_labels.clone(),
            moving_labels: self.moving_labels.clone(),
            out_dir: self.out_dir.clone(),
            report: self.report.clone(),
            q: self.q,
            steps: self.steps,
            grid: self.grid,
            lambda: self.lambda,
            no_mean_field: flag(self.no_mean_field),
            no_nonlocal_loss: flag(self.no_nonlocal_loss),
            refine: if self.refine {
                Some(true)
            } else if self.no_refine {
                Some(false)
            } else {
                None
            },
            seed: self.seed,
            threads: self.threads,
            ..Default::default()
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
pub enum DeformationArg {
    Translation,
    Smooth,
}

#[derive(Debug, Args)]
pub struct PhantomArgs {
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, value_enum, default_value = "smooth")]
    pub deformation: DeformationArg,
    /// Largest displacement norm, normalized units (< q).
    #[arg(long)]
    pub magnitude: Option<f64>,
    /// Volume size: N or DxHxW.
    #[arg(long, value_parser = grid_arg)]
    pub dims: Option<Dims>,
    #[arg(long)]
    pub organs: Option<usize>,
    #[arg(long)]
    pub noise: Option<f64>,
    #[arg(long)]
    pub q: Option<f64>,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    /// Displacement field (.vhdr) on the fixed grid.
    #[arg(long)]
    pub field: PathBuf,
    #[arg(long, requires = "moving_labels")]
    pub fixed_labels: Option<PathBuf>,
    #[arg(long, requires = "fixed_labels")]
    pub moving_labels: Option<PathBuf>,
    /// CSV report path.
    #[arg(long)]
    pub report: Option<PathBuf>,
}

/// Parses `args` (program name first) and runs the command. Returns the
/// process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> u8
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let text = e.render().to_string();
            return if e.use_stderr() {
                let _ = write!(err, "{text}");
                1
            } else {
                let _ = write!(out, "{text}");
                0
            };
        }
    };
    let result = match cli.command {
        Command::Register(a) => register_command(&a, out),
        Command::Phantom(a) => phantom_command(&a, out),
        Command::Evaluate(a) => evaluate_command(&a, out),
        Command::Selftest => return selftest_command(out),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit_code()
        }
    }
}

fn ensure_finite(vol: &IntensityVolume, what: &'static str) -> Result<()> {
    if vol.data().iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(dispreg_core::Error::NonFinite(what).into())
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

struct Inputs {
    fixed: IntensityVolume,
    moving: IntensityVolume,
    labels: Option<(LabelVolume, LabelVolume)>,
}

fn load_inputs(s: &Settings) -> Result<Inputs> {
    let labels = match (&s.fixed_labels, &s.moving_labels) {
        (Some(f), Some(m)) => Some((read_labels(f)?, read_labels(m)?)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "--fixed-labels and --moving-labels go together".into(),
            ))
        }
    };
    match (&s.fixed, &s.moving, s.seed) {
        (Some(f), Some(m), _) => Ok(Inputs {
            fixed: read_volume(f)?,
            moving: read_volume(m)?,
            labels,
        }),
        (None, None, Some(seed)) => {
            let p = generate(&PhantomSpec {
                seed,
                ..Default::default()
            })?;
            Ok(Inputs {
                fixed: p.fixed,
                moving: p.moving,
                labels: labels.or(Some((p.fixed_labels, p.moving_labels))),
            })
        }
        _ => Err(Error::Config(
            "register needs --fixed and --moving (or only --seed for a phantom)".into(),
        )),
    }
}

fn register_command(args: &RegisterArgs, out: &mut dyn Write) -> Result<()> {
    let flags = args.settings();
    let settings = match &args.config {
        Some(path) => Settings::from_file(path)?.overlay(flags),
        None => flags,
    };
    let cfg = settings.registration_config()?;
    let out_dir = settings
        .out_dir
        .clone()
        .ok_or_else(|| Error::Config("register needs --out-dir".into()))?;
    let inputs = load_inputs(&settings)?;
    ensure_finite(&inputs.fixed, "fixed volume")?;
    ensure_finite(&inputs.moving, "moving volume")?;
    create_dir(&out_dir)?;

    let mut runtimes = Vec::new();
    let output = with_threads(settings.threads, || {
        let mut last = Instant::now();
        let mut on_stage = |stage: &'static str| {
            let now = Instant::now();
            runtimes.push((stage.to_string(), (now - last).as_secs_f64()));
            last = now;
        };
        register_observed(
            &Parallel,
            &inputs.fixed,
            &inputs.moving,
            &cfg,
            &mut on_stage,
        )
    })??;

    let pair = inputs.labels.as_ref().map(|(f, m)| LabelPair {
        fixed: f,
        moving: m,
    });
    let mut report = build_report(&output, &cfg, pair)?;
    report.runtimes = runtimes;

    write_field(
        &output.field,
        inputs.fixed.spacing(),
        out_dir.join("field.vhdr"),
    )?;
    let warped = output.warped.clone().with_spacing(inputs.fixed.spacing())?;
    write_volume(&warped, out_dir.join("warped.nii"), DType::F32)?;
    if let Some((_, moving_labels)) = &inputs.labels {
        let warped_labels = dispreg_core::pipeline::warp_moving_labels(&output, moving_labels)?;
        write_labels(&warped_labels, out_dir.join("warped_labels.nii"))?;
    }
    let text = render_key_value(&report);
    write_text(&out_dir.join("report.txt"), &text)?;
    let csv_path = settings
        .report
        .clone()
        .unwrap_or_else(|| out_dir.join("report.csv"));
    write_text(&csv_path, &render_csv(&report))?;
    write_text(&out_dir.join("timings.csv"), &render_timings(&report))?;
    write!(out, "{text}").map_err(|e| Error::io("<stdout>", e))
}

fn phantom_command(args: &PhantomArgs, out: &mut dyn Write) -> Result<()> {
    let defaults = PhantomSpec::default();
    let spec = PhantomSpec {
        seed: args.seed,
        dims: args.dims.unwrap_or(defaults.dims),
        organs: args.organs.unwrap_or(defaults.organs),
        deformation: match args.deformation {
            DeformationArg::Translation => Deformation::Translation,
            DeformationArg::Smooth => Deformation::SmoothRandom,
        },
        magnitude: args.magnitude.unwrap_or(defaults.magnitude),
        q: args.q.unwrap_or(defaults.q),
        noise_sigma: args.noise.unwrap_or(defaults.noise_sigma),
    };
    let p = generate(&spec)?;
    let dir = &args.out_dir;
    create_dir(dir)?;
    write_volume(&p.fixed, dir.join("fixed.nii"), DType::F32)?;
    write_volume(&p.moving, dir.join("moving.nii"), DType::F32)?;
    write_labels(&p.fixed_labels, dir.join("fixed_labels.nii"))?;
    write_labels(&p.moving_labels, dir.join("moving_labels.nii"))?;
    write_field(
        &p.ground_truth,
        p.fixed.spacing(),
        dir.join("ground_truth.vhdr"),
    )?;
    writeln!(out, "wrote phantom seed {} to {}", spec.seed, dir.display())
        .map_err(|e| Error::io("<stdout>", e))
}

fn evaluate_command(args: &EvaluateArgs, out: &mut dyn Write) -> Result<()> {
    let (field, _) = read_field(&args.field)?;
    let labels = match (&args.fixed_labels, &args.moving_labels) {
        (Some(f), Some(m)) => Some((read_labels(f)?, read_labels(m)?)),
        _ => None,
    };
    let pair = labels.as_ref().map(|(f, m)| LabelPair {
        fixed: f,
        moving: m,
    });
    let report = evaluate_field(&field, pair)?;
    if let Some(path) = &args.report {
        write_text(path, &render_csv(&report))?;
    }
    write!(out, "{}", render_key_value(&report)).map_err(|e| Error::io("<stdout>", e))
}

fn selftest_command(out: &mut dyn Write) -> u8 {
    let mut buf = Vec::new();
    let failures = crate::selftest::run(&mut buf).unwrap_or(usize::MAX);
    let _ = out.write_all(&buf);
    let _ = writeln!(
        out,
        "{}",
        if failures == 0 {
            "selftest passed"
        } else {
            "selftest FAILED"
        }
    );
    if failures == 0 {
        0
    } else {
        3
    }
}
