//! Line-oriented `key = value` configuration mirroring the command-line
//! flags. `-` and `_` are interchangeable in keys, `#` starts a comment,
//! and flags given on the command line override the file.
//!
//! ```text
//! grid = 16            # or 16x16x12, 16,16,12
//! q = 0.4
//! steps = 15
//! refine = true
//! temperature = 3000
//! alpha1 = 1.0 0.0     # scale bias
//! ```

use std::path::{Path, PathBuf};

use dispreg_core::features::SigmaPolicy;
use dispreg_core::{Affine, Dims, FeatureKind, RegistrationConfig, ThirdComponentPenalty};

use crate::error::{Error, Result};

/// Every setting that may come from a file or a flag; `None` means "not
/// given here".
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Settings {
    pub fixed: Option<PathBuf>,
    pub moving: Option<PathBuf>,
    pub fixed_labels: Option<PathBuf>,
    pub moving_labels: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub report: Option<PathBuf>,
    pub q: Option<f64>,
    pub steps: Option<usize>,
    pub grid: Option<Dims>,
    pub lambda: Option<f64>,
    pub no_mean_field: Option<bool>,
    pub no_nonlocal_loss: Option<bool>,
    pub refine: Option<bool>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
    pub iterations: Option<usize>,
    pub temperature: Option<f32>,
    pub feature_stride: Option<usize>,
    pub features: Option<FeatureChoice>,
    pub patch_radius: Option<usize>,
    pub refine_steps: Option<usize>,
    pub refine_step_size: Option<f64>,
    pub third_component: Option<ThirdComponentPenalty>,
    pub alphas: [Option<Affine>; 6],
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FeatureChoice {
    Ssc,
    Gradient,
}

fn bad(key: &str, value: &str) -> Error {
    Error::Config(format!("invalid value {value:?} for {key}"))
}

fn number<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value.parse().map_err(|_| bad(key, value))
}

fn boolean(key: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

/// `16`, `16x16x12`, `16,16,12` or `16 16 12`.
pub fn parse_grid(value: &str) -> Result<Dims> {
    let parts: Vec<usize> = value
        .split(|c: char| c == 'x' || c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| number("grid", s))
        .collect::<Result<_>>()?;
    match parts[..] {
        _ if parts.contains(&0) => Err(bad("grid", value)),
        [n] => Ok([n; 3]),
        [a, b, c] => Ok([a, b, c]),
        _ => Err(bad("grid", value)),
    }
}

fn affine(key: &str, value: &str) -> Result<Affine> {
    let parts: Vec<f32> = value
        .split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| number(key, s))
        .collect::<Result<_>>()?;
    match parts[..] {
        [scale] => Ok(Affine::new(scale, 0.0)),
        [scale, bias] => Ok(Affine::new(scale, bias)),
        _ => Err(bad(key, value)),
    }
}

impl Settings {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut s = Self::default();
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or_default().trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", n + 1)))?;
            s.set(key.trim(), value.trim())
                .map_err(|e| Error::Config(format!("line {}: {e}", n + 1)))?;
        }
        Ok(s)
    }

    /// Applies one `key = value` pair.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.replace('-', "_");
        let k = key.as_str();
        match k {
            "fixed" => self.fixed = Some(value.into()),
            "moving" => self.moving = Some(value.into()),
            "fixed_labels" => self.fixed_labels = Some(value.into()),
            "moving_labels" => self.moving_labels = Some(value.into()),
            "out_dir" => self.out_dir = Some(value.into()),
            "report" => self.report = Some(value.into()),
            "q" => self.q = Some(number(k, value)?),
            "steps" => self.steps = Some(number(k, value)?),
            "grid" => self.grid = Some(parse_grid(value)?),
            "lambda" => self.lambda = Some(number(k, value)?),
            "no_mean_field" => self.no_mean_field = Some(boolean(k, value)?),
            "mean_field" => self.no_mean_field = Some(!boolean(k, value)?),
            "no_nonlocal_loss" => self.no_nonlocal_loss = Some(boolean(k, value)?),
            "nonlocal_loss" => self.no_nonlocal_loss = Some(!boolean(k, value)?),
            "refine" => self.refine = Some(boolean(k, value)?),
            "no_refine" => self.refine = Some(!boolean(k, value)?),
            "seed" => self.seed = Some(number(k, value)?),
            "threads" => self.threads = Some(number(k, value)?),
            "iterations" => self.iterations = Some(number(k, value)?),
            "temperature" => self.temperature = Some(number(k, value)?),
            "feature_stride" => self.feature_stride = Some(number(k, value)?),
            "features" => {
                self.features = Some(match value {
                    "ssc" => FeatureChoice::Ssc,
                    "gradient" => FeatureChoice::Gradient,
                    _ => return Err(bad(k, value)),
                })
            }
            "patch_radius" => self.patch_radius = Some(number(k, value)?),
            "refine_steps" => self.refine_steps = Some(number(k, value)?),
            "refine_step_size" => self.refine_step_size = Some(number(k, value)?),
            "third_component" => {
                self.third_component = Some(match value {
                    "squared" => ThirdComponentPenalty::Squared,
                    "cubed" => ThirdComponentPenalty::Cubed,
                    _ => return Err(bad(k, value)),
                })
            }
            _ => match k
                .strip_prefix("alpha")
                .and_then(|i| i.parse::<usize>().ok())
            {
                Some(i @ 1..=6) => self.alphas[i - 1] = Some(affine(k, value)?),
                _ => return Err(Error::Config(format!("unknown key {key:?}"))),
            },
        }
        Ok(())
    }

    /// `self` with every setting present in `top` replaced by it.
    pub fn overlay(self, top: Settings) -> Settings {
        fn pick<T>(base: Option<T>, top: Option<T>) -> Option<T> {
            top.or(base)
        }
        let mut alphas = self.alphas;
        for (a, t) in alphas.iter_mut().zip(top.alphas) {
            *a = t.or(*a);
        }
        Settings {
            fixed: pick(self.fixed, top.fixed),
            moving: pick(self.moving, top.moving),
            fixed_labels: pick(self.fixed_labels, top.fixed_labels),
            moving_labels: pick(self.moving_labels, top.moving_labels),
            out_dir: pick(self.out_dir, top.out_dir),
            report: pick(self.report, top.report),
            q: pick(self.q, top.q),
            steps: pick(self.steps, top.steps),
            grid: pick(self.grid, top.grid),
            lambda: pick(self.lambda, top.lambda),
            no_mean_field: pick(self.no_mean_field, top.no_mean_field),
            no_nonlocal_loss: pick(self.no_nonlocal_loss, top.no_nonlocal_loss),
            refine: pick(self.refine, top.refine),
            seed: pick(self.seed, top.seed),
            threads: pick(self.threads, top.threads),
            iterations: pick(self.iterations, top.iterations),
            temperature: pick(self.temperature, top.temperature),
            feature_stride: pick(self.feature_stride, top.feature_stride),
            features: pick(self.features, top.features),
            patch_radius: pick(self.patch_radius, top.patch_radius),
            refine_steps: pick(self.refine_steps, top.refine_steps),
            refine_step_size: pick(self.refine_step_size, top.refine_step_size),
            third_component: pick(self.third_component, top.third_component),
            alphas,
        }
    }

    /// Engine configuration: library defaults with the given settings
    /// applied. `no_mean_field` forces zero regularizer iterations; an
    /// explicit `temperature` wins over `alpha6`.
    pub fn registration_config(&self) -> Result<RegistrationConfig> {
        let mut cfg = RegistrationConfig::default();
        if let Some(v) = self.q {
            cfg.q = v;
        }
        if let Some(v) = self.steps {
            cfg.steps = v;
        }
        if let Some(v) = self.grid {
            cfg.grid = v;
        }
        if let Some(v) = self.lambda {
            cfg.lambda = v;
        }
        if let Some(v) = self.refine {
            cfg.refine = v;
        }
        if let Some(v) = self.no_nonlocal_loss {
            cfg.nonlocal_loss = !v;
        }
        if let Some(v) = self.feature_stride {
            cfg.feature_stride = v;
        }
        let radius = self.patch_radius.unwrap_or(1);
        match self.features {
            Some(FeatureChoice::Gradient) => cfg.features = FeatureKind::IntensityGradient,
            Some(FeatureChoice::Ssc) | None
                if self.patch_radius.is_some() || self.features.is_some() =>
            {
                cfg.features = FeatureKind::Ssc {
                    patch_radius: radius,
                    sigma: SigmaPolicy::LocalMean,
                }
            }
            _ => {}
        }
        if let Some(v) = self.refine_steps {
            cfg.refine_steps = v;
        }
        if let Some(v) = self.refine_step_size {
            cfg.refine_step_size = v;
        }
        if let Some(v) = self.third_component {
            cfg.third_component = v;
        }
        for (slot, a) in cfg.regularizer.alphas.iter_mut().zip(self.alphas) {
            if let Some(a) = a {
                *slot = a;
            }
        }
        if let Some(v) = self.iterations {
            cfg.regularizer.iterations = v;
        }
        if self.no_mean_field == Some(true) {
            cfg.regularizer.iterations = 0;
        }
        if let Some(t) = self.temperature {
            cfg.regularizer.alphas[5].scale = t;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
