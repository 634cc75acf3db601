//! Flat run configuration.
//!
//! A run config is a TOML document of scalar keys covering the schedule, the
//! preference objective, the optimizer, the model and the evaluation cadence.
//! Unknown keys are rejected, and every value is validated before any work
//! starts.

use crate::dynamics::{PredictionKind, SampleMode};
use crate::error::{Error, Result};
use crate::nn::{Activation, OptimHyper};
use crate::objectives::{DpoConfig, LambdaMode, UtilityKind, UtilitySpec};
use crate::schedules::{Paradigm, Schedule};
use crate::training::{Method, RunSettings};
use serde::{Deserialize, Serialize};
use std::path::Path;

fn default_schedule() -> String {
    "rf".into()
}
fn default_sampling_g_scale() -> f64 {
    1.0
}
fn default_t_min() -> f64 {
    crate::schedules::DEFAULT_T_MIN
}
fn default_method() -> String {
    "linear-dpo".into()
}
fn default_utility() -> String {
    "linear".into()
}
fn default_eta() -> f64 {
    1e-2
}
fn default_beta_bar() -> f64 {
    250.0
}
fn default_lambda_mode() -> String {
    "constant".into()
}
fn default_gamma() -> f64 {
    0.995
}
fn default_t_steps() -> u32 {
    1000
}
fn default_lr() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps_opt() -> f64 {
    1e-8
}
fn default_weight_decay() -> f64 {
    1e-4
}
fn default_warmup_steps() -> u32 {
    200
}
fn default_batch_size() -> usize {
    64
}
fn default_hidden_dims() -> Vec<usize> {
    vec![32, 32]
}
fn default_activation() -> String {
    "tanh".into()
}
fn default_eval_every() -> u64 {
    100
}
fn default_eval_samples() -> usize {
    512
}
fn default_sample_steps() -> usize {
    100
}
fn default_sample_mode() -> String {
    "ode".into()
}

/// Learning rate used by the large-model recipe (`--paper-hparams`).
pub const PAPER_LR: f64 = 5e-6;

/// Flat key-value run configuration.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "default_schedule")]
    pub schedule: String,
    #[serde(default = "default_sampling_g_scale")]
    pub sampling_g_scale: f64,
    #[serde(default = "default_t_min")]
    pub t_min: f64,

    #[serde(default = "default_method")]
    pub method: String,
    #[serde(default = "default_utility")]
    pub utility: String,
    #[serde(default = "default_eta")]
    pub eta: f64,
    #[serde(default = "default_beta_bar")]
    pub beta_bar: f64,
    #[serde(default = "default_lambda_mode")]
    pub lambda_mode: String,
    #[serde(default = "default_gamma")]
    pub gamma: f64,
    #[serde(default = "default_t_steps")]
    pub t_steps: u32,
    #[serde(default)]
    pub shared_noise: bool,

    #[serde(default = "default_lr")]
    pub lr: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps_opt")]
    pub eps_opt: f64,
    #[serde(default = "default_weight_decay")]
    pub weight_decay: f64,
    #[serde(default = "default_warmup_steps")]
    pub warmup_steps: u32,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,

    #[serde(default = "default_hidden_dims")]
    pub hidden_dims: Vec<usize>,
    #[serde(default = "default_activation")]
    pub activation: String,

    #[serde(default = "default_eval_every")]
    pub eval_every: u64,
    #[serde(default = "default_eval_samples")]
    pub eval_samples: usize,
    #[serde(default = "default_sample_steps")]
    pub sample_steps: usize,
    #[serde(default = "default_sample_mode")]
    pub sample_mode: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        toml::from_str("").expect("empty config uses defaults")
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: RunConfig =
            toml::from_str(text).map_err(|e| Error::Config(format!("bad config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml(&text)
    }

    /// Switch to the large-model learning rate.
    pub fn apply_paper_hparams(&mut self) {
        self.lr = PAPER_LR;
    }

    pub fn paradigm(&self) -> Result<Paradigm> {
        self.schedule.parse()
    }

    pub fn to_schedule(&self) -> Result<Schedule> {
        if !(0.0..0.5).contains(&self.t_min) || self.t_min == 0.0 {
            return Err(Error::Config(format!(
                "t_min must lie in (0, 0.5), got {}",
                self.t_min
            )));
        }
        Ok(Schedule::from_paradigm(self.paradigm()?)
            .with_t_min(self.t_min)
            .with_sampling_g_scale(self.sampling_g_scale))
    }

    pub fn prediction_kind(&self) -> Result<PredictionKind> {
        Ok(PredictionKind::for_paradigm(self.paradigm()?))
    }

    pub fn to_dpo_config(&self) -> Result<DpoConfig> {
        let kind: UtilityKind = self.utility.parse()?;
        let utility = UtilitySpec::new(kind).with_floor(self.eta);
        let cfg = DpoConfig {
            beta_bar: self.beta_bar,
            lambda_mode: self.lambda_mode.parse::<LambdaMode>()?,
            kind: self.prediction_kind()?,
            utility,
            gamma_ema: self.gamma,
            t_steps: self.t_steps,
            shared_noise: self.shared_noise,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_optim_hyper(&self) -> OptimHyper {
        OptimHyper {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps_opt: self.eps_opt,
            weight_decay: self.weight_decay,
        }
    }

    pub fn to_run_settings(
        &self,
        method: Method,
        seed: u64,
        total_steps: u64,
    ) -> Result<RunSettings> {
        let settings = RunSettings {
            method,
            cfg: self.to_dpo_config()?,
            schedule: self.to_schedule()?,
            hyper: self.to_optim_hyper(),
            warmup_steps: self.warmup_steps,
            batch_size: self.batch_size,
            hidden_dims: self.hidden_dims.clone(),
            activation: self.activation.parse::<Activation>()?,
            seed,
            total_steps,
            eval_every: self.eval_every,
            eval_samples: self.eval_samples,
            sample_steps: self.sample_steps,
            sample_mode: self.sample_mode.parse::<SampleMode>()?,
        };
        settings.validate()?;
        Ok(settings)
    }

    /// Validate every field before any compute.
    pub fn validate(&self) -> Result<()> {
        self.to_schedule()?;
        self.to_dpo_config()?;
        self.method.parse::<Method>()?;
        self.activation.parse::<Activation>()?;
        self.sample_mode.parse::<SampleMode>()?;
        if self.lr <= 0.0 {
            return Err(Error::Config(format!(
                "lr must be positive, got {}",
                self.lr
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::Config("hidden_dims must be positive".into()));
        }
        if self.eval_every == 0 || self.sample_steps == 0 || self.eval_samples == 0 {
            return Err(Error::Config(
                "eval_every, eval_samples and sample_steps must be positive".into(),
            ));
        }
        Ok(())
    }
}
