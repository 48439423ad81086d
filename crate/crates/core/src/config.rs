//! Run configuration and the plain-text `key = value` config format.
//!
//! Every field of the run and teacher-student configuration maps to one key;
//! unknown keys are an error so typos fail fast.

use crate::bilevel::{SamplerKind, TsConfig};
use crate::error::{Error, Result};
use std::path::PathBuf;

/// Optimization arm selector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Method {
    TsboGaussian,
    TsboGev,
    VanillaBo,
    Sobol,
}

impl Method {
    pub fn as_str(&self) -> &'static str {
        match self {
            Method::TsboGaussian => "tsbo-gaussian",
            Method::TsboGev => "tsbo-gev",
            Method::VanillaBo => "vanilla-bo",
            Method::Sobol => "sobol",
        }
    }

    /// True for arms that run the teacher-student loop.
    pub fn uses_teacher_student(&self) -> bool {
        matches!(self, Method::TsboGaussian | Method::TsboGev)
    }
}

impl std::str::FromStr for Method {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsbo-gaussian" => Ok(Method::TsboGaussian),
            "tsbo-gev" => Ok(Method::TsboGev),
            "vanilla-bo" => Ok(Method::VanillaBo),
            "sobol" => Ok(Method::Sobol),
            other => Err(Error::Config(format!("unknown method '{other}'"))),
        }
    }
}

/// Query-GP fitting settings.
#[derive(Clone, Copy, Debug)]
pub struct GpSettings {
    pub fit_steps: usize,
    pub lr: f64,
}

impl Default for GpSettings {
    fn default() -> Self {
        Self {
            fit_steps: 80,
            lr: 0.05,
        }
    }
}

/// Acquisition maximization settings.
#[derive(Clone, Copy, Debug)]
pub struct AcqSettings {
    pub restarts: usize,
    pub max_iters: usize,
}

impl Default for AcqSettings {
    fn default() -> Self {
        Self {
            restarts: 32,
            max_iters: 100,
        }
    }
}

/// Full experiment configuration.
#[derive(Clone, Debug)]
pub struct RunConfig {
    pub objective: String,
    pub dim: usize,
    pub n_init: usize,
    pub n_query: usize,
    /// Seeds used by the ablation/sweep runners: `seed .. seed + n_seeds`.
    pub n_seeds: usize,
    pub seed: u64,
    pub method: Method,
    pub label_noise_std: f64,
    pub box_lo: f64,
    pub box_hi: f64,
    pub out: Option<PathBuf>,
    pub ts: TsConfig,
    pub gp: GpSettings,
    pub acq: AcqSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            objective: "ackley".into(),
            dim: 10,
            n_init: 10,
            n_query: 50,
            n_seeds: 5,
            seed: 0,
            method: Method::TsboGaussian,
            label_noise_std: 0.0,
            box_lo: -3.0,
            box_hi: 3.0,
            out: None,
            ts: TsConfig::default(),
            gp: GpSettings::default(),
            acq: AcqSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_init < 2 {
            return Err(Error::Config("n_init must be >= 2".into()));
        }
        if self.label_noise_std < 0.0 || !self.label_noise_std.is_finite() {
            return Err(Error::Config("label_noise_std must be >= 0".into()));
        }
        if self.box_lo > self.box_hi {
            return Err(Error::Config("box_lo must be <= box_hi".into()));
        }
        if self.acq.restarts == 0 {
            return Err(Error::Config("acq.restarts must be >= 1".into()));
        }
        Ok(())
    }

    /// Parses the `key = value` format; unknown keys are rejected.
    pub fn parse(text: &str) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut sampler_overridden = false;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let Some((key, value)) = line.split_once('=') else {
                return Err(Error::Config(format!(
                    "line {}: expected 'key = value', got '{line}'",
                    lineno + 1
                )));
            };
            let key = key.trim();
            let value = value.trim();
            let fail = |what: &str| {
                Error::Config(format!("line {}: bad {what} '{value}'", lineno + 1))
            };
            match key {
                "objective" => cfg.objective = value.to_string(),
                "dim" => cfg.dim = value.parse().map_err(|_| fail("count"))?,
                "n_init" => cfg.n_init = value.parse().map_err(|_| fail("count"))?,
                "n_query" => cfg.n_query = value.parse().map_err(|_| fail("count"))?,
                "n_seeds" => cfg.n_seeds = value.parse().map_err(|_| fail("count"))?,
                "seed" => cfg.seed = value.parse().map_err(|_| fail("seed"))?,
                "method" => cfg.method = value.parse()?,
                "label_noise_std" => {
                    cfg.label_noise_std = value.parse().map_err(|_| fail("real"))?
                }
                "box_lo" => cfg.box_lo = value.parse().map_err(|_| fail("real"))?,
                "box_hi" => cfg.box_hi = value.parse().map_err(|_| fail("real"))?,
                "out" => cfg.out = Some(PathBuf::from(value)),
                "ts.steps_per_iter" => {
                    cfg.ts.steps_per_iter = value.parse().map_err(|_| fail("count"))?
                }
                "ts.warmup_steps" => {
                    cfg.ts.warmup_steps = value.parse().map_err(|_| fail("count"))?
                }
                "ts.lambda" => cfg.ts.lambda = value.parse().map_err(|_| fail("real"))?,
                "ts.n_unlabeled" => {
                    cfg.ts.n_unlabeled = value.parse().map_err(|_| fail("count"))?
                }
                "ts.k_validation" => {
                    cfg.ts.k_validation = value.parse().map_err(|_| fail("count"))?
                }
                "ts.lr_teacher" => cfg.ts.lr_teacher = value.parse().map_err(|_| fail("real"))?,
                "ts.lr_student" => cfg.ts.lr_student = value.parse().map_err(|_| fail("real"))?,
                "ts.lr_sampler" => cfg.ts.lr_sampler = value.parse().map_err(|_| fail("real"))?,
                "ts.sampler" => {
                    cfg.ts.sampler_kind = value.parse()?;
                    sampler_overridden = true;
                }
                "ts.uncertainty_aware" => {
                    cfg.ts.uncertainty_aware = value.parse().map_err(|_| fail("flag"))?
                }
                "ts.feedback_enabled" => {
                    cfg.ts.feedback_enabled = value.parse().map_err(|_| fail("flag"))?
                }
                "ts.batch_size" => {
                    cfg.ts.batch_size = value.parse().map_err(|_| fail("count"))?
                }
                "ts.hidden_width" => {
                    cfg.ts.hidden_width = value.parse().map_err(|_| fail("count"))?
                }
                "ts.warmup_teacher_only" => {
                    cfg.ts.warmup_teacher_only = value.parse().map_err(|_| fail("flag"))?
                }
                "ts.mcmc_burn_in" => {
                    cfg.ts.mcmc_burn_in = value.parse().map_err(|_| fail("count"))?
                }
                "ts.mcmc_thin" => cfg.ts.mcmc_thin = value.parse().map_err(|_| fail("count"))?,
                "ts.mcmc_step_scale" => {
                    cfg.ts.mcmc_step_scale = value.parse().map_err(|_| fail("real"))?
                }
                "ts.gev_fit_steps" => {
                    cfg.ts.gev_fit_steps = value.parse().map_err(|_| fail("count"))?
                }
                "ts.gev_lr" => cfg.ts.gev_lr = value.parse().map_err(|_| fail("real"))?,
                "gp.fit_steps" => cfg.gp.fit_steps = value.parse().map_err(|_| fail("count"))?,
                "gp.lr" => cfg.gp.lr = value.parse().map_err(|_| fail("real"))?,
                "acq.restarts" => {
                    cfg.acq.restarts = value.parse().map_err(|_| fail("count"))?
                }
                "acq.max_iters" => {
                    cfg.acq.max_iters = value.parse().map_err(|_| fail("count"))?
                }
                other => {
                    return Err(Error::Config(format!(
                        "line {}: unknown key '{other}'",
                        lineno + 1
                    )))
                }
            }
        }
        if !sampler_overridden {
            cfg.ts.sampler_kind = match cfg.method {
                Method::TsboGev => SamplerKind::Gev,
                _ => SamplerKind::Gaussian,
            };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Config echo in the same `key = value` format the parser accepts.
    pub fn to_text(&self) -> String {
        let sampler = match self.ts.sampler_kind {
            SamplerKind::Gev => "gev",
            SamplerKind::Gaussian => "gaussian",
            SamplerKind::Random => "random",
        };
        let mut s = String::new();
        let mut push = |k: &str, v: String| {
            s.push_str(k);
            s.push_str(" = ");
            s.push_str(&v);
            s.push('\n');
        };
        push("objective", self.objective.clone());
        push("dim", self.dim.to_string());
        push("n_init", self.n_init.to_string());
        push("n_query", self.n_query.to_string());
        push("n_seeds", self.n_seeds.to_string());
        push("seed", self.seed.to_string());
        push("method", self.method.as_str().to_string());
        push("label_noise_std", self.label_noise_std.to_string());
        push("box_lo", self.box_lo.to_string());
        push("box_hi", self.box_hi.to_string());
        if let Some(out) = &self.out {
            push("out", out.display().to_string());
        }
        push("ts.steps_per_iter", self.ts.steps_per_iter.to_string());
        push("ts.warmup_steps", self.ts.warmup_steps.to_string());
        push("ts.lambda", self.ts.lambda.to_string());
        push("ts.n_unlabeled", self.ts.n_unlabeled.to_string());
        push("ts.k_validation", self.ts.k_validation.to_string());
        push("ts.lr_teacher", self.ts.lr_teacher.to_string());
        push("ts.lr_student", self.ts.lr_student.to_string());
        push("ts.lr_sampler", self.ts.lr_sampler.to_string());
        push("ts.sampler", sampler.to_string());
        push("ts.uncertainty_aware", self.ts.uncertainty_aware.to_string());
        push("ts.feedback_enabled", self.ts.feedback_enabled.to_string());
        push("ts.batch_size", self.ts.batch_size.to_string());
        push("ts.hidden_width", self.ts.hidden_width.to_string());
        push(
            "ts.warmup_teacher_only",
            self.ts.warmup_teacher_only.to_string(),
        );
        push("ts.mcmc_burn_in", self.ts.mcmc_burn_in.to_string());
        push("ts.mcmc_thin", self.ts.mcmc_thin.to_string());
        push("ts.mcmc_step_scale", self.ts.mcmc_step_scale.to_string());
        push("ts.gev_fit_steps", self.ts.gev_fit_steps.to_string());
        push("ts.gev_lr", self.ts.gev_lr.to_string());
        push("gp.fit_steps", self.gp.fit_steps.to_string());
        push("gp.lr", self.gp.lr.to_string());
        push("acq.restarts", self.acq.restarts.to_string());
        push("acq.max_iters", self.acq.max_iters.to_string());
        s
    }
}
