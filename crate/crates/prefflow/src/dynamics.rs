//! Forward perturbation, prediction targets, score/velocity conversions,
//! SDE drifts, Euler-Maruyama stepping, sampling, and the shared-covariance
//! Gaussian KL.
//!
//! Reverse-time integration runs from `t = 1 - t_min` down to `t = t_min` on
//! a uniform grid. A backward step of the reverse SDE is
//!
//! ```text
//! x_next = x - drift * dt + g * sqrt(dt) * noise
//! ```
//!
//! which conditions on `x` as a Gaussian with mean `x - drift * dt` and
//! isotropic variance `g^2 * dt`. Score-parameterized drifts follow the
//! reverse SDE `f(t) x - g^2(t) score`; velocity-parameterized drifts follow
//! the marginal-preserving form `v + (g^2/(2t)) (x + (1-t) v)` with the
//! sampling diffusion `g` a free choice.

use crate::error::{Error, Result};
use crate::nn::MlpModel;
use crate::rng::{self, Purpose};
use crate::schedules::{schedule_coeffs, sde_from_schedule, Paradigm, Schedule};
use serde::{Deserialize, Serialize};

/// What the regressor predicts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PredictionKind {
    /// The forward noise (VP pairing).
    Epsilon,
    /// The conditional score `-eps / sigma` (VE pairing).
    Score,
    /// The interpolation velocity `x1 - x0` (RF pairing).
    Velocity,
}

impl PredictionKind {
    /// Default paradigm pairing; cross-pairings are rejected.
    pub fn check_pairing(self, paradigm: Paradigm) -> Result<()> {
        let ok = matches!(
            (self, paradigm),
            (PredictionKind::Epsilon, Paradigm::Vp)
                | (PredictionKind::Score, Paradigm::Ve)
                | (PredictionKind::Velocity, Paradigm::Rf)
        );
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "prediction kind {self:?} is not valid with the {paradigm} schedule"
            )))
        }
    }

    /// The kind paired with a paradigm.
    pub fn for_paradigm(paradigm: Paradigm) -> PredictionKind {
        match paradigm {
            Paradigm::Vp => PredictionKind::Epsilon,
            Paradigm::Ve => PredictionKind::Score,
            Paradigm::Rf => PredictionKind::Velocity,
        }
    }
}

/// One-step Gaussian conditional produced by an Euler-Maruyama step.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianStep {
    pub mean: Vec<f64>,
    /// Isotropic variance `g^2 * dt`.
    pub variance_scale: f64,
}

/// Integration mode for [`sample`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SampleMode {
    Ode,
    Sde,
}

impl std::str::FromStr for SampleMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ode" => Ok(SampleMode::Ode),
            "sde" => Ok(SampleMode::Sde),
            other => Err(Error::Config(format!(
                "unknown sampling mode {other:?} (expected ode | sde)"
            ))),
        }
    }
}

/// Anything that can stand in for the regressor during sampling.
pub trait Predictor {
    fn predict(&self, x: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>>;
    fn data_dim(&self) -> usize;
}

impl Predictor for MlpModel {
    fn predict(&self, x: &[f64], t: f64, c: &[f64]) -> Result<Vec<f64>> {
        self.forward(x, t, c)
    }
    fn data_dim(&self) -> usize {
        self.out_dim()
    }
}

/// `alpha(t) x0 + sigma(t) eps`.
pub fn perturb(x0: &[f64], eps: &[f64], t: f64, schedule: &Schedule) -> Result<Vec<f64>> {
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "x0 dim {} != eps dim {}",
            x0.len(),
            eps.len()
        )));
    }
    let c = schedule_coeffs(schedule, t)?;
    Ok(x0
        .iter()
        .zip(eps)
        .map(|(x, e)| c.alpha * x + c.sigma * e)
        .collect())
}

/// Regression target for a perturbed sample.
///
/// Epsilon -> `eps`; Score -> `-eps / sigma(t)`; Velocity -> `eps - x0`.
pub fn target_value(
    kind: PredictionKind,
    x0: &[f64],
    eps: &[f64],
    t: f64,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    kind.check_pairing(schedule.paradigm)?;
    if x0.len() != eps.len() {
        return Err(Error::Shape(format!(
            "x0 dim {} != eps dim {}",
            x0.len(),
            eps.len()
        )));
    }
    match kind {
        PredictionKind::Epsilon => Ok(eps.to_vec()),
        PredictionKind::Score => {
            let sigma = schedule_coeffs(schedule, t)?.sigma;
            if sigma == 0.0 {
                return Err(Error::Singularity(format!(
                    "score target undefined at sigma(t) = 0 (t = {t})"
                )));
            }
            Ok(eps.iter().map(|e| -e / sigma).collect())
        }
        PredictionKind::Velocity => Ok(eps.iter().zip(x0).map(|(e, x)| e - x).collect()),
    }
}

/// Rectified-flow marginal score from the velocity field:
/// `score = -x/t - ((1-t)/t) v`.
pub fn score_from_velocity_rf(x: &[f64], t: f64, v: &[f64]) -> Result<Vec<f64>> {
    if x.len() != v.len() {
        return Err(Error::Shape(format!(
            "x dim {} != v dim {}",
            x.len(),
            v.len()
        )));
    }
    if t < crate::schedules::DEFAULT_T_MIN {
        return Err(Error::Singularity(format!(
            "score-from-velocity diverges as t -> 0 (t = {t})"
        )));
    }
    let k = (1.0 - t) / t;
    Ok(x.iter().zip(v).map(|(xi, vi)| -xi / t - k * vi).collect())
}

/// Velocity field from the score:
/// `v = (alpha_dot/alpha) x - sigma (sigma_dot - alpha_dot sigma / alpha) score`.
pub fn velocity_from_score(
    x: &[f64],
    t: f64,
    score: &[f64],
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    if x.len() != score.len() {
        return Err(Error::Shape(format!(
            "x dim {} != score dim {}",
            x.len(),
            score.len()
        )));
    }
    let c = schedule_coeffs(schedule, t)?;
    if c.alpha == 0.0 {
        return Err(Error::Singularity(format!("alpha(t) = 0 at t = {t}")));
    }
    let f = c.alpha_dot / c.alpha;
    let k = c.sigma * (c.sigma_dot - f * c.sigma);
    Ok(x.iter()
        .zip(score)
        .map(|(xi, si)| f * xi - k * si)
        .collect())
}

/// Drift of the sampling SDE at `(x, t)` given a model prediction.
///
/// Score -> `f(t) x - g^2(t) score` with the forward SDE's `g^2`;
/// Velocity -> `v + (g_s^2/(2t)) (x + (1-t) v)` with the sampling `g_s`;
/// Epsilon -> converted to a score via `-pred/sigma`, then the Score branch.
pub fn drift(
    x: &[f64],
    t: f64,
    prediction: &[f64],
    kind: PredictionKind,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    kind.check_pairing(schedule.paradigm)?;
    if x.len() != prediction.len() {
        return Err(Error::Shape(format!(
            "x dim {} != prediction dim {}",
            x.len(),
            prediction.len()
        )));
    }
    match kind {
        PredictionKind::Velocity => {
            let g = schedule.sampling_g(t)?;
            let k = g * g / (2.0 * t);
            Ok(x.iter()
                .zip(prediction)
                .map(|(xi, vi)| vi + k * (xi + (1.0 - t) * vi))
                .collect())
        }
        PredictionKind::Score => {
            let (f, g2) = sde_from_schedule(schedule, t)?;
            Ok(x.iter()
                .zip(prediction)
                .map(|(xi, si)| f * xi - g2 * si)
                .collect())
        }
        PredictionKind::Epsilon => {
            let sigma = schedule_coeffs(schedule, t)?.sigma;
            if sigma == 0.0 {
                return Err(Error::Singularity(format!("sigma(t) = 0 at t = {t}")));
            }
            let score: Vec<f64> = prediction.iter().map(|e| -e / sigma).collect();
            let (f, g2) = sde_from_schedule(schedule, t)?;
            Ok(x.iter()
                .zip(&score)
                .map(|(xi, si)| f * xi - g2 * si)
                .collect())
        }
    }
}

/// One backward Euler-Maruyama step.
///
/// `x_next = x - drift * dt + g * sqrt(dt) * noise`; the caller draws the
/// standard normal `noise`. Also returns the implied Gaussian conditional.
pub fn euler_maruyama_step(
    x: &[f64],
    dt: f64,
    drift: &[f64],
    g: f64,
    noise: &[f64],
) -> Result<(Vec<f64>, GaussianStep)> {
    if dt <= 0.0 {
        return Err(Error::Domain(format!("dt must be positive, got {dt}")));
    }
    if x.len() != drift.len() || x.len() != noise.len() {
        return Err(Error::Shape(format!(
            "step dims disagree: x {}, drift {}, noise {}",
            x.len(),
            drift.len(),
            noise.len()
        )));
    }
    let mean: Vec<f64> = x.iter().zip(drift).map(|(xi, di)| xi - di * dt).collect();
    let amp = g * dt.sqrt();
    let x_next = mean.iter().zip(noise).map(|(m, n)| m + amp * n).collect();
    let step = GaussianStep {
        mean,
        variance_scale: g * g * dt,
    };
    Ok((x_next, step))
}

/// Convert a model prediction into the probability-flow velocity.
///
/// For Velocity the prediction already is the velocity; Score and Epsilon go
/// through [`velocity_from_score`], which equals `f x - (g^2/2) score`.
pub fn prediction_to_velocity(
    x: &[f64],
    t: f64,
    prediction: &[f64],
    kind: PredictionKind,
    schedule: &Schedule,
) -> Result<Vec<f64>> {
    match kind {
        PredictionKind::Velocity => Ok(prediction.to_vec()),
        PredictionKind::Score => velocity_from_score(x, t, prediction, schedule),
        PredictionKind::Epsilon => {
            let sigma = schedule_coeffs(schedule, t)?.sigma;
            if sigma == 0.0 {
                return Err(Error::Singularity(format!("sigma(t) = 0 at t = {t}")));
            }
            let score: Vec<f64> = prediction.iter().map(|e| -e / sigma).collect();
            velocity_from_score(x, t, &score, schedule)
        }
    }
}

/// Generate one sample by integrating from `t = 1 - t_min` to `t = t_min`.
///
/// The chain starts at `sigma(1 - t_min) * eps` and is deterministic given
/// `(seed, mode, steps)`: the initial draw and each step's noise come from
/// counter-based streams. ODE mode integrates the probability-flow velocity
/// and ignores the sampling diffusion.
pub fn sample<P: Predictor>(
    model: &P,
    schedule: &Schedule,
    kind: PredictionKind,
    c: &[f64],
    steps: usize,
    mode: SampleMode,
    seed: u64,
) -> Result<Vec<f64>> {
    kind.check_pairing(schedule.paradigm)?;
    if steps == 0 {
        return Err(Error::Domain("steps must be at least 1".into()));
    }
    let dim = model.data_dim();
    let t_start = 1.0 - schedule.t_min;
    let t_end = schedule.t_min;
    let dt = (t_start - t_end) / steps as f64;

    let sigma_start = schedule_coeffs(schedule, t_start)?.sigma;
    let init = rng::normal_vec(&mut rng::stream(seed, Purpose::SampleInit, 0), dim);
    let mut x: Vec<f64> = init.iter().map(|e| sigma_start * e).collect();

    for k in 0..steps {
        let t = t_start - k as f64 * dt;
        let pred = model.predict(&x, t, c)?;
        match mode {
            SampleMode::Ode => {
                let v = prediction_to_velocity(&x, t, &pred, kind, schedule)?;
                for (xi, vi) in x.iter_mut().zip(&v) {
                    *xi -= vi * dt;
                }
            }
            SampleMode::Sde => {
                let d = drift(&x, t, &pred, kind, schedule)?;
                let g = schedule.sampling_g(t)?;
                let noise =
                    rng::normal_vec(&mut rng::stream(seed, Purpose::SampleStep, k as u64), dim);
                let (next, _) = euler_maruyama_step(&x, dt, &d, g, &noise)?;
                x = next;
            }
        }
    }
    Ok(x)
}

/// KL divergence between isotropic Gaussians with equal covariance:
/// `||mu_a - mu_b||^2 / (2 * variance_scale)`.
pub fn gaussian_kl_same_cov(mu_a: &[f64], mu_b: &[f64], variance_scale: f64) -> Result<f64> {
    if mu_a.len() != mu_b.len() {
        return Err(Error::Shape(format!(
            "mean dims disagree: {} vs {}",
            mu_a.len(),
            mu_b.len()
        )));
    }
    if variance_scale <= 0.0 {
        return Err(Error::Domain(format!(
            "variance_scale must be positive, got {variance_scale}"
        )));
    }
    Ok(crate::math::sq_dist(mu_a, mu_b) / (2.0 * variance_scale))
}

/// Analytic reference field for isotropic Gaussian data under the RF schedule.
///
/// With `x0 ~ N(0, s^2 I)` and `x1 ~ N(0, I)`, the marginal at `t` is
/// `N(0, v_t I)` with `v_t = (1-t)^2 s^2 + t^2`, the posterior-mean velocity
/// is `v(x, t) = ((t - (1-t) s^2) / v_t) x` and the marginal score is
/// `-x / v_t`. Ground-truth predictor for the sampling checks.
#[derive(Debug, Clone, Copy)]
pub struct GaussianRfField {
    pub data_std: f64,
    pub dim: usize,
}

impl GaussianRfField {
    pub fn new(data_std: f64, dim: usize) -> Self {
        GaussianRfField { data_std, dim }
    }

    /// Marginal variance `v_t` per coordinate.
    pub fn marginal_var(&self, t: f64) -> f64 {
        let s2 = self.data_std * self.data_std;
        (1.0 - t) * (1.0 - t) * s2 + t * t
    }

    /// Velocity coefficient `k(t)` with `v(x,t) = k(t) x`.
    pub fn velocity_coeff(&self, t: f64) -> f64 {
        let s2 = self.data_std * self.data_std;
        (t - (1.0 - t) * s2) / self.marginal_var(t)
    }

    pub fn velocity(&self, x: &[f64], t: f64) -> Vec<f64> {
        let k = self.velocity_coeff(t);
        x.iter().map(|xi| k * xi).collect()
    }

    pub fn score(&self, x: &[f64], t: f64) -> Vec<f64> {
        let v = self.marginal_var(t);
        x.iter().map(|xi| -xi / v).collect()
    }

    /// Exact probability-flow map from `t_a` to `t_b`: scaling by
    /// `sqrt(v_{t_b} / v_{t_a})`.
    pub fn flow_scale(&self, t_a: f64, t_b: f64) -> f64 {
        (self.marginal_var(t_b) / self.marginal_var(t_a)).sqrt()
    }
}

impl Predictor for GaussianRfField {
    fn predict(&self, x: &[f64], t: f64, _c: &[f64]) -> Result<Vec<f64>> {
        Ok(self.velocity(x, t))
    }
    fn data_dim(&self) -> usize {
        self.dim
    }
}
