//! Preference margins, the unified DPO objective, its gradient weight, the
//! utility family, the linear weighted loss with stop-gradient, per-paradigm
//! time weights, the SFT regression loss and the implicit-accuracy metric.
//!
//! The central quantities, per preference pair at a sampled `(t, eps)`:
//!
//! ```text
//! D(x_t)  = ||y - y_policy(x_t)||^2 - ||y - y_ref(x_t)||^2
//! delta   = D(x_t_w) - D(x_t_l)
//! ```
//!
//! The unified objective is `softplus(beta_bar * lambda(t) * delta)` per pair
//! (the stable form of `-ln sigma(-beta_bar lambda delta)`), whose gradient
//! weight is `beta_bar lambda sigma(beta_bar lambda delta)`. The linear
//! variant instead multiplies the plain winner-minus-loser policy residual
//! difference by the stop-gradient weight
//! `clip(0.2 * beta_bar lambda delta + 0.5, eta, 1)`.

use crate::dynamics::{perturb, target_value, PredictionKind};
use crate::error::{Error, Result};
use crate::math::{self, sigmoid, softplus};
use crate::nn::tape::{Tape, Var};
use crate::nn::{MlpModel, TapedMlp};
use crate::rng;
use crate::schedules::{schedule_coeffs, sde_from_schedule, Paradigm, Schedule};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

/// Utility family mapping a scaled margin to a gradient weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UtilityKind {
    /// `sigma(x)` used directly as the weight (the standard DPO gate).
    Sigmoid,
    /// Kahneman-Tversky `sigma(x)`, normalized like the other utilities.
    Kt,
    /// `ln sigma(x)`.
    LossAverse,
    /// `-ln sigma(-x)`.
    RiskSeeking,
    /// `slope * x + intercept`, clipped to `[eta, 1]`.
    Linear,
}

impl std::str::FromStr for UtilityKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" => Ok(UtilityKind::Sigmoid),
            "kt" => Ok(UtilityKind::Kt),
            "loss_averse" => Ok(UtilityKind::LossAverse),
            "risk_seeking" => Ok(UtilityKind::RiskSeeking),
            "linear" => Ok(UtilityKind::Linear),
            other => Err(Error::Config(format!(
                "unknown utility {other:?} (expected linear | sigmoid | kt | loss_averse | risk_seeking)"
            ))),
        }
    }
}

/// A utility function plus its clipping and normalization parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UtilitySpec {
    pub kind: UtilityKind,
    /// Linear only.
    pub slope: f64,
    /// Linear only.
    pub intercept: f64,
    /// Lower clip of the linear weight.
    pub floor_eta: f64,
    /// Upper clip of the weight.
    pub ceil: f64,
    /// Half-width of the normalization window `[-w, w]`.
    pub norm_window: f64,
}

impl UtilitySpec {
    pub fn new(kind: UtilityKind) -> Self {
        UtilitySpec {
            kind,
            slope: 0.2,
            intercept: 0.5,
            floor_eta: 1e-2,
            ceil: 1.0,
            norm_window: 5.0,
        }
    }

    pub fn linear() -> Self {
        UtilitySpec::new(UtilityKind::Linear)
    }

    pub fn with_floor(mut self, eta: f64) -> Self {
        self.floor_eta = eta;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.floor_eta) {
            return Err(Error::Config(format!(
                "eta must lie in [0, 1), got {}",
                self.floor_eta
            )));
        }
        if self.floor_eta >= self.ceil {
            return Err(Error::Config(format!(
                "eta {} must be below the ceiling {}",
                self.floor_eta, self.ceil
            )));
        }
        if self.kind == UtilityKind::Linear && self.slope <= 0.0 {
            return Err(Error::Config(format!(
                "linear utility slope must be positive, got {}",
                self.slope
            )));
        }
        if self.norm_window <= 0.0 {
            return Err(Error::Config(format!(
                "normalization window must be positive, got {}",
                self.norm_window
            )));
        }
        Ok(())
    }
}

/// Time-weight mode: fold everything into `beta_bar`, or evaluate the
/// paradigm formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    Constant,
    Exact,
}

impl std::str::FromStr for LambdaMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LambdaMode::Constant),
            "exact" => Ok(LambdaMode::Exact),
            other => Err(Error::Config(format!(
                "unknown lambda_mode {other:?} (expected constant | exact)"
            ))),
        }
    }
}

/// Preference-objective configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DpoConfig {
    /// Folded margin scale; multiplied by `lambda(t)` in exact mode.
    pub beta_bar: f64,
    pub lambda_mode: LambdaMode,
    pub kind: PredictionKind,
    pub utility: UtilitySpec,
    /// EMA decay of the reference model; 1 freezes it.
    pub gamma_ema: f64,
    /// Training timestep count bookkeeping (the scale is already folded
    /// into `beta_bar`).
    pub t_steps: u32,
    /// Reuse the winner's forward noise for the loser.
    pub shared_noise: bool,
}

impl Default for DpoConfig {
    fn default() -> Self {
        DpoConfig {
            beta_bar: 250.0,
            lambda_mode: LambdaMode::Constant,
            kind: PredictionKind::Velocity,
            utility: UtilitySpec::linear(),
            gamma_ema: 0.995,
            t_steps: 1000,
            shared_noise: false,
        }
    }
}

impl DpoConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta_bar <= 0.0 {
            return Err(Error::Config(format!(
                "beta_bar must be positive, got {}",
                self.beta_bar
            )));
        }
        if !(0.0..=1.0).contains(&self.gamma_ema) {
            return Err(Error::Config(format!(
                "gamma must lie in [0, 1], got {}",
                self.gamma_ema
            )));
        }
        self.utility.validate()
    }
}

/// One labeled preference pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub x0_w: Vec<f64>,
    pub x0_l: Vec<f64>,
    pub c: Vec<f64>,
}

impl PreferencePair {
    pub fn validate(&self) -> Result<()> {
        if self.x0_w.len() != self.x0_l.len() {
            return Err(Error::Shape(format!(
                "winner dim {} != loser dim {}",
                self.x0_w.len(),
                self.x0_l.len()
            )));
        }
        let finite = self
            .x0_w
            .iter()
            .chain(&self.x0_l)
            .chain(&self.c)
            .all(|v| v.is_finite());
        if !finite {
            return Err(Error::Contract(
                "preference pair contains non-finite values".into(),
            ));
        }
        Ok(())
    }
}

/// Random draws attached to one pair for a loss evaluation: a shared `t` and
/// independent forward noises (equal when `shared_noise` is set).
#[derive(Debug, Clone, PartialEq)]
pub struct PairDraws {
    pub t: f64,
    pub eps_w: Vec<f64>,
    pub eps_l: Vec<f64>,
}

impl PairDraws {
    /// Draw `t ~ U(t_min, 1 - t_min)` and per-side noise.
    pub fn sample(
        rng: &mut ChaCha8Rng,
        dim: usize,
        schedule: &Schedule,
        shared_noise: bool,
    ) -> Self {
        let t = rng::uniform(rng, schedule.t_min, 1.0 - schedule.t_min);
        let eps_w = rng::normal_vec(rng, dim);
        let eps_l = if shared_noise {
            eps_w.clone()
        } else {
            rng::normal_vec(rng, dim)
        };
        PairDraws { t, eps_w, eps_l }
    }
}

/// Per-side squared-error gaps and their difference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaD {
    /// `residual_w - residual_l`.
    pub delta: f64,
    /// `||y_w - y_policy(x_t_w)||^2 - ||y_w - y_ref(x_t_w)||^2`.
    pub residual_w: f64,
    pub residual_l: f64,
}

/// Evaluate the preference margin for one pair at fixed draws.
#[allow(clippy::too_many_arguments)]
pub fn delta_d(
    policy: &MlpModel,
    reference: &MlpModel,
    pair: &PreferencePair,
    t: f64,
    eps_w: &[f64],
    eps_l: &[f64],
    kind: PredictionKind,
    schedule: &Schedule,
) -> Result<DeltaD> {
    let side = |x0: &[f64], eps: &[f64]| -> Result<f64> {
        let x_t = perturb(x0, eps, t, schedule)?;
        let y = target_value(kind, x0, eps, t, schedule)?;
        let y_pol = policy.forward(&x_t, t, &pair.c)?;
        let y_ref = reference.forward(&x_t, t, &pair.c)?;
        Ok(math::sq_dist(&y, &y_pol) - math::sq_dist(&y, &y_ref))
    };
    let residual_w = side(&pair.x0_w, eps_w)?;
    let residual_l = side(&pair.x0_l, eps_l)?;
    Ok(DeltaD {
        delta: residual_w - residual_l,
        residual_w,
        residual_l,
    })
}

/// Per-sample unified DPO loss `softplus(beta_bar * delta)`.
pub fn dpo_sigmoid_loss(delta: f64, beta_bar: f64) -> f64 {
    softplus(beta_bar * delta)
}

/// Gradient weight of the unified objective: `beta_bar * sigma(beta_bar * delta)`.
pub fn dpo_gradient_weight(delta: f64, beta_bar: f64) -> f64 {
    beta_bar * sigmoid(beta_bar * delta)
}

/// Raw (unnormalized, unclipped) utility value.
pub fn utility(spec: &UtilitySpec, x: f64) -> f64 {
    match spec.kind {
        UtilityKind::Sigmoid | UtilityKind::Kt => sigmoid(x),
        // ln sigma(x) = -softplus(-x)
        UtilityKind::LossAverse => -softplus(-x),
        // -ln sigma(-x) = softplus(x)
        UtilityKind::RiskSeeking => softplus(x),
        UtilityKind::Linear => spec.slope * x + spec.intercept,
    }
}

/// `(U(x) - U(-w)) / (U(w) - U(-w))` clipped to `[0, 1]`.
pub fn normalize_utility(spec: &UtilitySpec, x: f64) -> Result<f64> {
    let w = spec.norm_window;
    let lo = utility(spec, -w);
    let hi = utility(spec, w);
    if hi == lo {
        return Err(Error::Domain(format!(
            "degenerate normalization window: U({w}) == U({})",
            -w
        )));
    }
    Ok(((utility(spec, x) - lo) / (hi - lo)).clamp(0.0, 1.0))
}

/// Linear gradient weight `clip(slope * beta_bar * delta + intercept, eta, 1)`.
pub fn linear_dpo_weight(delta: f64, cfg: &DpoConfig) -> f64 {
    let u = cfg.utility;
    (u.slope * cfg.beta_bar * delta + u.intercept).clamp(u.floor_eta, u.ceil)
}

/// Weight assigned to a scaled margin `x = beta_bar * lambda * delta` under
/// the configured utility.
///
/// Linear clips between `eta` and the ceiling; Sigmoid is the bare logistic
/// gate; the remaining utilities are window-normalized onto `[0, 1]`.
pub fn utility_weight(spec: &UtilitySpec, x: f64) -> Result<f64> {
    match spec.kind {
        UtilityKind::Linear => {
            Ok((spec.slope * x + spec.intercept).clamp(spec.floor_eta, spec.ceil))
        }
        UtilityKind::Sigmoid => Ok(sigmoid(x)),
        _ => normalize_utility(spec, x),
    }
}

/// Time weight `lambda(t)` per paradigm.
///
/// Constant mode returns 1 (the product is folded into `beta_bar`). Exact
/// mode evaluates `g^2/(2 sigma^2)` (VP), `g^2/2` (VE) or
/// `(1/(2 g^2)) (1 + g^2 (1-t)/(2t))^2` (RF, with the sampling `g`).
pub fn lambda_weight(
    paradigm: Paradigm,
    t: f64,
    schedule: &Schedule,
    mode: LambdaMode,
) -> Result<f64> {
    let lo = schedule.t_min;
    let hi = 1.0 - schedule.t_min;
    if !(lo..=hi).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [{lo}, {hi}]")));
    }
    if mode == LambdaMode::Constant {
        return Ok(1.0);
    }
    match paradigm {
        Paradigm::Vp => {
            let (_, g2) = sde_from_schedule(schedule, t)?;
            let sigma = schedule_coeffs(schedule, t)?.sigma;
            if sigma == 0.0 {
                return Err(Error::Singularity(format!("sigma(t) = 0 at t = {t}")));
            }
            Ok(g2 / (2.0 * sigma * sigma))
        }
        Paradigm::Ve => {
            let (_, g2) = sde_from_schedule(schedule, t)?;
            Ok(g2 / 2.0)
        }
        Paradigm::Rf => {
            let g = schedule.sampling_g(t)?;
            let g2 = g * g;
            if g2 == 0.0 {
                return Err(Error::Singularity(
                    "exact RF weight diverges at zero sampling g".into(),
                ));
            }
            let inner = 1.0 + g2 * (1.0 - t) / (2.0 * t);
            Ok(inner * inner / (2.0 * g2))
        }
    }
}

/// Effective margin scale `beta_bar * lambda(t)` for a config.
pub fn margin_scale(cfg: &DpoConfig, t: f64, schedule: &Schedule) -> Result<f64> {
    let lam = lambda_weight(schedule.paradigm, t, schedule, cfg.lambda_mode)?;
    Ok(cfg.beta_bar * lam)
}

/// Fraction of margins strictly below zero; exact ties count one half.
pub fn implicit_accuracy(deltas: &[f64]) -> Result<f64> {
    if deltas.is_empty() {
        return Err(Error::Contract(
            "implicit accuracy over an empty slice".into(),
        ));
    }
    let mut acc = 0.0;
    for &d in deltas {
        if d < 0.0 {
            acc += 1.0;
        } else if d == 0.0 {
            acc += 0.5;
        }
    }
    Ok(acc / deltas.len() as f64)
}

fn check_batch(batch: &[PreferencePair], draws: &[PairDraws]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::Contract("empty preference batch".into()));
    }
    if batch.len() != draws.len() {
        return Err(Error::Contract(format!(
            "batch has {} pairs but {} draw records",
            batch.len(),
            draws.len()
        )));
    }
    Ok(())
}

/// Mean unified DPO loss over a batch (value only).
pub fn dpo_unified_loss(
    policy: &MlpModel,
    reference: &MlpModel,
    batch: &[PreferencePair],
    cfg: &DpoConfig,
    schedule: &Schedule,
    draws: &[PairDraws],
) -> Result<f64> {
    check_batch(batch, draws)?;
    let mut acc = 0.0;
    for (pair, d) in batch.iter().zip(draws) {
        let parts = delta_d(
            policy, reference, pair, d.t, &d.eps_w, &d.eps_l, cfg.kind, schedule,
        )?;
        let scale = margin_scale(cfg, d.t, schedule)?;
        acc += softplus(scale * parts.delta);
    }
    Ok(acc / batch.len() as f64)
}

/// Mean linear weighted loss over a batch (value only); the weight is
/// evaluated at the same margin the taped path uses.
pub fn linear_dpo_loss(
    policy: &MlpModel,
    reference: &MlpModel,
    batch: &[PreferencePair],
    cfg: &DpoConfig,
    schedule: &Schedule,
    draws: &[PairDraws],
) -> Result<f64> {
    check_batch(batch, draws)?;
    let mut acc = 0.0;
    for (pair, d) in batch.iter().zip(draws) {
        let parts = delta_d(
            policy, reference, pair, d.t, &d.eps_w, &d.eps_l, cfg.kind, schedule,
        )?;
        let scale = margin_scale(cfg, d.t, schedule)?;
        let weight = utility_weight(&cfg.utility, scale * parts.delta)?;
        let policy_diff = residual_diff(policy, pair, d, cfg.kind, schedule)?;
        acc += weight * policy_diff;
    }
    Ok(acc / batch.len() as f64)
}

/// `||y_w - y_policy(x_t_w)||^2 - ||y_l - y_policy(x_t_l)||^2` for one pair.
fn residual_diff(
    policy: &MlpModel,
    pair: &PreferencePair,
    d: &PairDraws,
    kind: PredictionKind,
    schedule: &Schedule,
) -> Result<f64> {
    let side = |x0: &[f64], eps: &[f64]| -> Result<f64> {
        let x_t = perturb(x0, eps, d.t, schedule)?;
        let y = target_value(kind, x0, eps, d.t, schedule)?;
        let y_pol = policy.forward(&x_t, d.t, &pair.c)?;
        Ok(math::sq_dist(&y, &y_pol))
    };
    Ok(side(&pair.x0_w, &d.eps_w)? - side(&pair.x0_l, &d.eps_l)?)
}

/// Per-pair taped policy residuals plus the plain reference residuals needed
/// to form the margin without tracking gradients through the reference.
struct TapedPairTerms {
    /// `||y_w - y_policy(x_t_w)||^2` on the tape.
    policy_w: Var,
    policy_l: Var,
    /// Plain reference squared errors.
    ref_w: f64,
    ref_l: f64,
}

fn taped_pair_terms(
    tape: &mut Tape,
    policy: &TapedMlp,
    reference: &MlpModel,
    pair: &PreferencePair,
    d: &PairDraws,
    kind: PredictionKind,
    schedule: &Schedule,
) -> Result<TapedPairTerms> {
    let side = |x0: &[f64], eps: &[f64], tape: &mut Tape| -> Result<(Var, f64)> {
        let x_t = perturb(x0, eps, d.t, schedule)?;
        let y = target_value(kind, x0, eps, d.t, schedule)?;
        let y_pol = policy.forward(tape, &x_t, d.t, &pair.c)?;
        let pol_sq = tape.sq_dist(&y_pol, &y);
        let y_ref = reference.forward(&x_t, d.t, &pair.c)?;
        Ok((pol_sq, math::sq_dist(&y, &y_ref)))
    };
    let (policy_w, ref_w) = side(&pair.x0_w, &d.eps_w, tape)?;
    let (policy_l, ref_l) = side(&pair.x0_l, &d.eps_l, tape)?;
    Ok(TapedPairTerms {
        policy_w,
        policy_l,
        ref_w,
        ref_l,
    })
}

/// Record the unified DPO loss on a tape (for gradient computation).
#[allow(clippy::too_many_arguments)]
pub fn dpo_unified_loss_on_tape(
    tape: &mut Tape,
    policy: &TapedMlp,
    reference: &MlpModel,
    batch: &[PreferencePair],
    cfg: &DpoConfig,
    schedule: &Schedule,
    draws: &[PairDraws],
) -> Result<Var> {
    check_batch(batch, draws)?;
    let mut per_pair = Vec::with_capacity(batch.len());
    for (pair, d) in batch.iter().zip(draws) {
        let terms = taped_pair_terms(tape, policy, reference, pair, d, cfg.kind, schedule)?;
        let dw = tape.add_const(terms.policy_w, -terms.ref_w);
        let dl = tape.add_const(terms.policy_l, -terms.ref_l);
        let delta = tape.sub(dw, dl);
        let scale = margin_scale(cfg, d.t, schedule)?;
        let z = tape.scale(delta, scale);
        per_pair.push(tape.softplus(z));
    }
    tape.mean(&per_pair)
}

/// Record the linear weighted loss on a tape.
///
/// The weight is computed from values only and enters the tape as a
/// constant multiplier, realizing the stop-gradient.
#[allow(clippy::too_many_arguments)]
pub fn linear_dpo_loss_on_tape(
    tape: &mut Tape,
    policy: &TapedMlp,
    reference: &MlpModel,
    batch: &[PreferencePair],
    cfg: &DpoConfig,
    schedule: &Schedule,
    draws: &[PairDraws],
) -> Result<Var> {
    check_batch(batch, draws)?;
    let mut per_pair = Vec::with_capacity(batch.len());
    for (pair, d) in batch.iter().zip(draws) {
        let terms = taped_pair_terms(tape, policy, reference, pair, d, cfg.kind, schedule)?;
        let delta =
            (tape.value(terms.policy_w) - terms.ref_w) - (tape.value(terms.policy_l) - terms.ref_l);
        let scale = margin_scale(cfg, d.t, schedule)?;
        let weight = utility_weight(&cfg.utility, scale * delta)?;
        let diff = tape.sub(terms.policy_w, terms.policy_l);
        per_pair.push(tape.scale(diff, weight));
    }
    tape.mean(&per_pair)
}

/// One clean sample with its condition, for supervised regression.
#[derive(Debug, Clone, PartialEq)]
pub struct SftExample {
    pub x0: Vec<f64>,
    pub c: Vec<f64>,
}

/// Draws for one SFT example.
#[derive(Debug, Clone, PartialEq)]
pub struct SftDraws {
    pub t: f64,
    pub eps: Vec<f64>,
}

impl SftDraws {
    pub fn sample(rng: &mut ChaCha8Rng, dim: usize, schedule: &Schedule) -> Self {
        SftDraws {
            t: rng::uniform(rng, schedule.t_min, 1.0 - schedule.t_min),
            eps: rng::normal_vec(rng, dim),
        }
    }
}

fn check_sft_batch(samples: &[SftExample], draws: &[SftDraws]) -> Result<()> {
    if samples.is_empty() {
        return Err(Error::Contract("empty SFT batch".into()));
    }
    if samples.len() != draws.len() {
        return Err(Error::Contract(format!(
            "batch has {} samples but {} draw records",
            samples.len(),
            draws.len()
        )));
    }
    Ok(())
}

/// Mean supervised regression loss `||y - y_policy(x_t, t, c)||^2`.
pub fn sft_loss(
    policy: &MlpModel,
    samples: &[SftExample],
    kind: PredictionKind,
    schedule: &Schedule,
    draws: &[SftDraws],
) -> Result<f64> {
    check_sft_batch(samples, draws)?;
    let mut acc = 0.0;
    for (s, d) in samples.iter().zip(draws) {
        let x_t = perturb(&s.x0, &d.eps, d.t, schedule)?;
        let y = target_value(kind, &s.x0, &d.eps, d.t, schedule)?;
        let y_pol = policy.forward(&x_t, d.t, &s.c)?;
        acc += math::sq_dist(&y, &y_pol);
    }
    Ok(acc / samples.len() as f64)
}

/// Record the SFT loss on a tape.
pub fn sft_loss_on_tape(
    tape: &mut Tape,
    policy: &TapedMlp,
    samples: &[SftExample],
    kind: PredictionKind,
    schedule: &Schedule,
    draws: &[SftDraws],
) -> Result<Var> {
    check_sft_batch(samples, draws)?;
    let mut per_sample = Vec::with_capacity(samples.len());
    for (s, d) in samples.iter().zip(draws) {
        let x_t = perturb(&s.x0, &d.eps, d.t, schedule)?;
        let y = target_value(kind, &s.x0, &d.eps, d.t, schedule)?;
        let y_pol = policy.forward(tape, &x_t, d.t, &s.c)?;
        per_sample.push(tape.sq_dist(&y_pol, &y));
    }
    tape.mean(&per_sample)
}
