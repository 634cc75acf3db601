//! Noise schedules and the algebra connecting interpolation coefficients to
//! SDE coefficients.
//!
//! A schedule fixes the forward perturbation `x_t = alpha(t) * x0 + sigma(t) * eps`
//! together with the coefficients of the linear forward SDE
//! `dx = f(t) x dt + g(t) dw` that produces the same conditional marginals.
//! The two views are tied by
//!
//! ```text
//! f(t) = alpha_dot / alpha
//! g^2(t) = d(sigma^2)/dt - 2 f(t) sigma^2
//! ```
//!
//! Three paradigms are supported:
//!
//! - `VP`: alpha = exp(-t), sigma^2 = 1 - exp(-2t)  (constant g^2 = 2)
//! - `VE`: alpha = 1, sigma = t^p                    (p = 1 by default)
//! - `RF`: alpha = 1 - t, sigma = t
//!
//! For rectified flow the sampling SDE's diffusion amplitude is a free design
//! choice; we default to `g(t) = a * sqrt(t)` so the `g^2/(2t)` factor in the
//! velocity drift stays bounded near `t = 0`.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Default clamp keeping times away from the schedule singularities.
pub const DEFAULT_T_MIN: f64 = 1e-3;

/// Forward-process family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Paradigm {
    /// Variance-preserving diffusion.
    Vp,
    /// Variance-exploding diffusion.
    Ve,
    /// Rectified flow.
    Rf,
}

impl std::fmt::Display for Paradigm {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Paradigm::Vp => write!(f, "vp"),
            Paradigm::Ve => write!(f, "ve"),
            Paradigm::Rf => write!(f, "rf"),
        }
    }
}

impl std::str::FromStr for Paradigm {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "vp" => Ok(Paradigm::Vp),
            "ve" => Ok(Paradigm::Ve),
            "rf" => Ok(Paradigm::Rf),
            other => Err(Error::Config(format!(
                "unknown schedule {other:?} (expected vp | ve | rf)"
            ))),
        }
    }
}

/// Interpolation coefficients and their time derivatives at a fixed `t`.
///
/// `sigma_dot` may be infinite at `t = 0` for schedules with a diffusive
/// start (VP, VE with p < 1); callers that need derivatives stay inside
/// `[t_min, 1 - t_min]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coeffs {
    pub alpha: f64,
    pub sigma: f64,
    pub alpha_dot: f64,
    pub sigma_dot: f64,
}

/// A concrete noise schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schedule {
    pub paradigm: Paradigm,
    /// Times are clamped to `[t_min, 1 - t_min]` by training and sampling.
    pub t_min: f64,
    /// Scale `a` of the RF sampling diffusion `g(t) = a * sqrt(t)`.
    /// Ignored by VP/VE, whose sampling SDE reuses the forward `g`.
    pub sampling_g_scale: f64,
    /// VE only: exponent `p` in `sigma(t) = t^p`.
    pub ve_sigma_pow: f64,
}

impl Schedule {
    pub fn vp() -> Self {
        Schedule {
            paradigm: Paradigm::Vp,
            t_min: DEFAULT_T_MIN,
            sampling_g_scale: 1.0,
            ve_sigma_pow: 1.0,
        }
    }

    /// VE with `sigma(t) = t`.
    pub fn ve() -> Self {
        Schedule {
            paradigm: Paradigm::Ve,
            ..Schedule::vp()
        }
    }

    /// VE with `sigma(t) = t^p` (e.g. `p = 0.5` gives `sigma^2 = t`, `g^2 = 1`).
    pub fn ve_with_pow(p: f64) -> Self {
        Schedule {
            ve_sigma_pow: p,
            ..Schedule::ve()
        }
    }

    pub fn rf() -> Self {
        Schedule {
            paradigm: Paradigm::Rf,
            ..Schedule::vp()
        }
    }

    pub fn with_t_min(mut self, t_min: f64) -> Self {
        self.t_min = t_min;
        self
    }

    pub fn with_sampling_g_scale(mut self, a: f64) -> Self {
        self.sampling_g_scale = a;
        self
    }

    pub fn from_paradigm(paradigm: Paradigm) -> Self {
        match paradigm {
            Paradigm::Vp => Schedule::vp(),
            Paradigm::Ve => Schedule::ve(),
            Paradigm::Rf => Schedule::rf(),
        }
    }

    /// Clamp a time into `[t_min, 1 - t_min]`.
    pub fn clamp_t(&self, t: f64) -> f64 {
        t.clamp(self.t_min, 1.0 - self.t_min)
    }

    /// Diffusion amplitude of the sampling SDE at `t`.
    ///
    /// VP/VE reuse the forward `g(t)`; RF uses the configured `a * sqrt(t)`.
    pub fn sampling_g(&self, t: f64) -> Result<f64> {
        match self.paradigm {
            Paradigm::Rf => Ok(self.sampling_g_scale * t.sqrt()),
            _ => {
                let (_, g2) = sde_from_schedule(self, t)?;
                Ok(g2.sqrt())
            }
        }
    }
}

/// Evaluate `(alpha, sigma, alpha_dot, sigma_dot)` at `t in [0, 1]`.
pub fn schedule_coeffs(schedule: &Schedule, t: f64) -> Result<Coeffs> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::Domain(format!("t = {t} outside [0, 1]")));
    }
    let c = match schedule.paradigm {
        Paradigm::Vp => {
            let alpha = (-t).exp();
            let sigma_sq = 1.0 - (-2.0 * t).exp();
            let sigma = sigma_sq.sqrt();
            // d/dt sqrt(1 - e^{-2t}) = e^{-2t} / sigma
            let sigma_dot = if sigma == 0.0 {
                f64::INFINITY
            } else {
                (-2.0 * t).exp() / sigma
            };
            Coeffs {
                alpha,
                sigma,
                alpha_dot: -alpha,
                sigma_dot,
            }
        }
        Paradigm::Ve => {
            let p = schedule.ve_sigma_pow;
            let sigma = t.powf(p);
            let sigma_dot = if t == 0.0 && p < 1.0 {
                f64::INFINITY
            } else if p == 1.0 {
                1.0
            } else {
                p * t.powf(p - 1.0)
            };
            Coeffs {
                alpha: 1.0,
                sigma,
                alpha_dot: 0.0,
                sigma_dot,
            }
        }
        Paradigm::Rf => Coeffs {
            alpha: 1.0 - t,
            sigma: t,
            alpha_dot: -1.0,
            sigma_dot: 1.0,
        },
    };
    Ok(c)
}

/// SDE coefficients `(f, g^2)` matching the schedule at `t`.
///
/// `f = alpha_dot / alpha` and `g^2 = d(sigma^2)/dt - 2 f sigma^2`. For RF
/// these are the coefficients of the forward interpolation; the sampling SDE
/// uses [`Schedule::sampling_g`] instead.
pub fn sde_from_schedule(schedule: &Schedule, t: f64) -> Result<(f64, f64)> {
    let lo = schedule.t_min;
    let hi = 1.0 - schedule.t_min;
    if !(lo..=hi).contains(&t) {
        return Err(Error::Domain(format!(
            "t = {t} outside [{lo}, {hi}] for SDE coefficients"
        )));
    }
    let c = schedule_coeffs(schedule, t)?;
    if c.alpha == 0.0 {
        return Err(Error::Singularity(format!("alpha(t) = 0 at t = {t}")));
    }
    let f = c.alpha_dot / c.alpha;
    // d(sigma^2)/dt = 2 sigma sigma_dot
    let g_squared = 2.0 * c.sigma * c.sigma_dot - 2.0 * f * c.sigma * c.sigma;
    Ok((f, g_squared))
}

/// Quadrature cross-check of [`sde_from_schedule`]: integrate the returned
/// `(f, g^2)` from `t_min` and compare against the closed forms, using
///
/// ```text
/// alpha(t) = alpha(t0) exp(int f)
/// sigma^2(t)/alpha^2(t) = sigma^2(t0)/alpha^2(t0) + int g^2/alpha^2
/// ```
///
/// with composite Simpson between `grid_n` grid points on `[t_min, t_max]`.
/// Returns the worst relative error over both coefficients.
pub fn quadrature_roundtrip_error(schedule: &Schedule, t_max: f64, grid_n: usize) -> Result<f64> {
    let t0 = schedule.t_min;
    let sub = 40usize; // Simpson panels between grid points (even)

    let c0 = schedule_coeffs(schedule, t0)?;
    let mut log_alpha = c0.alpha.ln();
    let mut ratio = c0.sigma * c0.sigma / (c0.alpha * c0.alpha);

    let f_of = |t: f64| -> Result<f64> { Ok(sde_from_schedule(schedule, t)?.0) };
    let g2_over_a2 = |t: f64| -> Result<f64> {
        let (_, g2) = sde_from_schedule(schedule, t)?;
        let a = schedule_coeffs(schedule, t)?.alpha;
        Ok(g2 / (a * a))
    };
    let simpson = |f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64| -> Result<f64> {
        let h = (b - a) / sub as f64;
        let mut acc = f(a)? + f(b)?;
        for k in 1..sub {
            let w = if k % 2 == 1 { 4.0 } else { 2.0 };
            acc += w * f(a + k as f64 * h)?;
        }
        Ok(acc * h / 3.0)
    };

    let mut worst: f64 = 0.0;
    for i in 1..=grid_n {
        let ta = t0 + (t_max - t0) * (i - 1) as f64 / grid_n as f64;
        let tb = t0 + (t_max - t0) * i as f64 / grid_n as f64;
        log_alpha += simpson(&f_of, ta, tb)?;
        ratio += simpson(&g2_over_a2, ta, tb)?;

        let c = schedule_coeffs(schedule, tb)?;
        let alpha_rec = log_alpha.exp();
        let sigma_rec = (ratio * alpha_rec * alpha_rec).sqrt();
        worst = worst.max((alpha_rec - c.alpha).abs() / c.alpha.abs().max(1e-12));
        worst = worst.max((sigma_rec - c.sigma).abs() / c.sigma.abs().max(1e-12));
    }
    Ok(worst)
}
