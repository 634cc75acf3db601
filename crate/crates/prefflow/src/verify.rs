//! Registered property checks behind `prefflow verify`.
//!
//! Each check cross-validates an implementation path against an independent
//! route: quadrature against closed forms, Monte Carlo against analytic
//! moments and KL values, finite differences against reverse-mode gradients,
//! and the hand-assembled weighted-difference gradient against autodiff of
//! the preference loss. The acceptance test suite drives the same functions.

use crate::dynamics::{
    euler_maruyama_step, gaussian_kl_same_cov, sample, score_from_velocity_rf, velocity_from_score,
    GaussianRfField, PredictionKind, SampleMode,
};
use crate::error::Result;
use crate::math::{self, sigmoid};
use crate::nn::{finite_diff_grad, grad_loss, max_rel_err, mlp_init, Activation, MlpModel};
use crate::objectives::{
    delta_d, dpo_unified_loss_on_tape, linear_dpo_loss_on_tape, linear_dpo_weight, margin_scale,
    normalize_utility, utility_weight, DpoConfig, PairDraws, PreferencePair, UtilityKind,
    UtilitySpec,
};
use crate::rng::{self, chain_seed, normal_vec, standard_normal, stream, Purpose};
use crate::schedules::{quadrature_roundtrip_error, Schedule};
use crate::training::ema_update;

/// Result of one named check.
#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl CheckOutcome {
    fn from(name: &'static str, r: std::result::Result<String, String>) -> Self {
        match r {
            Ok(detail) => CheckOutcome {
                name,
                passed: true,
                detail,
            },
            Err(detail) => CheckOutcome {
                name,
                passed: false,
                detail,
            },
        }
    }
}

type Check = std::result::Result<String, String>;

fn fail_on_err<T>(r: Result<T>) -> std::result::Result<T, String> {
    r.map_err(|e| format!("errored: {e}"))
}

/// Schedule round-trip: quadrature over the reported SDE coefficients must
/// recover the closed-form coefficients to within 1e-6 on a 100-point grid.
pub fn check_schedule_roundtrip() -> Check {
    let mut detail = String::new();
    for (schedule, t_max) in [
        (Schedule::vp(), 0.999),
        (Schedule::ve(), 0.999),
        (Schedule::ve_with_pow(0.5), 0.999),
        (Schedule::rf(), 0.9),
    ] {
        let err = fail_on_err(quadrature_roundtrip_error(&schedule, t_max, 100))?;
        detail.push_str(&format!("{} {:.2e}  ", schedule.paradigm, err));
        if err >= 1e-6 {
            return Err(format!(
                "{} roundtrip error {err:.3e} >= 1e-6",
                schedule.paradigm
            ));
        }
    }
    Ok(detail.trim_end().into())
}

/// RF score identity: the analytic Gaussian case matches to 1e-10 at
/// t in {0.2, 0.5, 0.8}, and the velocity<->score conversion round-trips to
/// 1e-12 on random inputs.
pub fn check_rf_score_identity() -> Check {
    let field = GaussianRfField::new(2.0, 1);
    let mut worst_analytic: f64 = 0.0;
    for t in [0.2, 0.5, 0.8] {
        for x in [-3.0, -1.1, 0.0, 0.7, 2.4] {
            let v = field.velocity(&[x], t);
            let got = fail_on_err(score_from_velocity_rf(&[x], t, &v))?[0];
            let want = field.score(&[x], t)[0];
            worst_analytic = worst_analytic.max((got - want).abs());
        }
    }
    if worst_analytic >= 1e-10 {
        return Err(format!("analytic-case error {worst_analytic:.3e} >= 1e-10"));
    }

    let schedule = Schedule::rf();
    let mut rng = stream(101, Purpose::Eval, 0);
    let mut worst_roundtrip: f64 = 0.0;
    for i in 0..100 {
        let t = 0.05 + 0.9 * (i as f64 / 100.0);
        let x = normal_vec(&mut rng, 3);
        let v = normal_vec(&mut rng, 3);
        let score = fail_on_err(score_from_velocity_rf(&x, t, &v))?;
        let back = fail_on_err(velocity_from_score(&x, t, &score, &schedule))?;
        for (a, b) in back.iter().zip(&v) {
            worst_roundtrip = worst_roundtrip.max((a - b).abs());
        }
    }
    if worst_roundtrip >= 1e-12 {
        return Err(format!("roundtrip error {worst_roundtrip:.3e} >= 1e-12"));
    }
    Ok(format!(
        "analytic {worst_analytic:.2e}, roundtrip {worst_roundtrip:.2e}"
    ))
}

/// Closed-form Gaussian KL against a 1e5-sample Monte-Carlo log-ratio
/// estimate, ten random mean pairs per variance scale, 2% relative.
pub fn check_kl_closed_form() -> Check {
    let n = 100_000;
    let mut rng = stream(202, Purpose::Eval, 0);
    let mut worst: f64 = 0.0;
    for &v in &[0.25, 1.0, 4.0] {
        for _ in 0..10 {
            let mu_a = [
                rng::uniform(&mut rng, -1.0, 1.0),
                rng::uniform(&mut rng, -1.0, 1.0),
            ];
            // Random direction, separation tuned so the true KL is 1.5-4 nats.
            let kl_target = rng::uniform(&mut rng, 1.5, 4.0);
            let theta = rng::uniform(&mut rng, 0.0, std::f64::consts::TAU);
            let d = (2.0 * v * kl_target).sqrt();
            let mu_b = [mu_a[0] + d * theta.cos(), mu_a[1] + d * theta.sin()];
            let closed = fail_on_err(gaussian_kl_same_cov(&mu_a, &mu_b, v))?;
            let mut acc = 0.0;
            for _ in 0..n {
                let x = [
                    mu_a[0] + v.sqrt() * standard_normal(&mut rng),
                    mu_a[1] + v.sqrt() * standard_normal(&mut rng),
                ];
                acc += (math::sq_dist(&x, &mu_b) - math::sq_dist(&x, &mu_a)) / (2.0 * v);
            }
            let mc = acc / n as f64;
            let rel = (mc - closed).abs() / closed;
            worst = worst.max(rel);
            if rel >= 0.02 {
                return Err(format!(
                    "scale {v}: closed {closed:.4} vs MC {mc:.4} (rel {rel:.3})"
                ));
            }
        }
    }
    Ok(format!("worst relative gap {worst:.4}"))
}

/// Euler-Maruyama one-step moments: 1e4 repeated draws from a fixed state
/// match the advertised Gaussian conditional within 4 standard errors.
pub fn check_em_moments() -> Check {
    let (x, d, g, dt) = ([0.5, -1.0], [1.25, 0.4], 0.8, 0.04);
    let n = 10_000;
    let mut rng = stream(303, Purpose::Eval, 0);
    let mut draws0 = Vec::with_capacity(n);
    let mut step_info = None;
    for _ in 0..n {
        let noise = [standard_normal(&mut rng), standard_normal(&mut rng)];
        let (next, step) = fail_on_err(euler_maruyama_step(&x, dt, &d, g, &noise))?;
        draws0.push(next[0]);
        step_info = Some(step);
    }
    let step = step_info.unwrap();
    let mean = math::mean(&draws0);
    let var = draws0.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64;
    let se_mean = (step.variance_scale / n as f64).sqrt();
    let se_var = step.variance_scale * (2.0 / n as f64).sqrt();
    let dm = (mean - step.mean[0]).abs();
    let dv = (var - step.variance_scale).abs();
    if dm >= 4.0 * se_mean {
        return Err(format!(
            "mean off by {dm:.3e} (4 SE = {:.3e})",
            4.0 * se_mean
        ));
    }
    if dv >= 4.0 * se_var {
        return Err(format!(
            "variance off by {dv:.3e} (4 SE = {:.3e})",
            4.0 * se_var
        ));
    }
    Ok(format!(
        "mean gap {:.2} SE, var gap {:.2} SE",
        dm / se_mean,
        dv / se_var
    ))
}

fn random_case(seed: u64) -> (MlpModel, MlpModel, PreferencePair, PairDraws, Schedule) {
    let schedule = Schedule::rf();
    let dims = [crate::nn::input_dim(2, 1), 16, 16, 2];
    let policy = mlp_init(&dims, Activation::Tanh, seed).unwrap();
    let reference = mlp_init(&dims, Activation::Tanh, seed ^ 0xffff).unwrap();
    let mut rng = stream(seed, Purpose::Eval, 1000);
    let pair = PreferencePair {
        x0_w: normal_vec(&mut rng, 2),
        x0_l: normal_vec(&mut rng, 2),
        c: vec![1.0],
    };
    let draws = PairDraws::sample(&mut rng, 2, &schedule, false);
    (policy, reference, pair, draws, schedule)
}

/// Gradient identity over 20 random draws, parameterized by the weight
/// function so a sabotaged weight is caught (see the mutation test).
fn gradient_identity_err(weight_fn: &dyn Fn(f64, f64) -> f64) -> std::result::Result<f64, String> {
    let cfg = DpoConfig {
        beta_bar: 25.0,
        ..DpoConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (policy, reference, pair, draws, schedule) = random_case(seed + 1);
        let batch = std::slice::from_ref(&pair);
        let dslice = std::slice::from_ref(&draws);

        // Autodiff route: reverse-mode through the per-pair softplus loss.
        let (_, auto_grad) = fail_on_err(grad_loss(&policy, |tape, taped| {
            dpo_unified_loss_on_tape(tape, taped, &reference, batch, &cfg, &schedule, dslice)
        }))?;

        // Hand-assembled route: weight times the difference of plain
        // squared-error gradients.
        let parts = fail_on_err(delta_d(
            &policy,
            &reference,
            &pair,
            draws.t,
            &draws.eps_w,
            &draws.eps_l,
            cfg.kind,
            &schedule,
        ))?;
        let scale = fail_on_err(margin_scale(&cfg, draws.t, &schedule))?;
        let weight = weight_fn(parts.delta, scale);
        let side_grad = |x0: &[f64], eps: &[f64]| -> std::result::Result<Vec<f64>, String> {
            let x_t = fail_on_err(crate::dynamics::perturb(x0, eps, draws.t, &schedule))?;
            let y = fail_on_err(crate::dynamics::target_value(
                cfg.kind, x0, eps, draws.t, &schedule,
            ))?;
            let (_, g) = fail_on_err(grad_loss(&policy, |tape, taped| {
                let y_pol = taped.forward(tape, &x_t, draws.t, &pair.c)?;
                Ok(tape.sq_dist(&y_pol, &y))
            }))?;
            Ok(g)
        };
        let gw = side_grad(&pair.x0_w, &draws.eps_w)?;
        let gl = side_grad(&pair.x0_l, &draws.eps_l)?;
        let manual: Vec<f64> = gw.iter().zip(&gl).map(|(a, b)| weight * (a - b)).collect();

        worst = worst.max(max_rel_err(&auto_grad, &manual));
    }
    Ok(worst)
}

/// Gradient identity: autodiff of the unified loss equals
/// `beta_bar lambda sigma(beta_bar lambda delta) (grad_w - grad_l)`.
pub fn check_gradient_identity() -> Check {
    let worst = gradient_identity_err(&|delta, scale| scale * sigmoid(scale * delta))?;
    if worst >= 1e-4 {
        return Err(format!("max relative error {worst:.3e} >= 1e-4"));
    }
    Ok(format!("max relative error {worst:.2e} over 20 draws"))
}

/// Stop-gradient contract: autodiff of the linear weighted loss equals
/// finite differences of the frozen-weight loss.
pub fn check_stop_gradient() -> Check {
    let cfg = DpoConfig {
        beta_bar: 25.0,
        ..DpoConfig::default()
    };
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (policy, reference, pair, draws, schedule) = random_case(seed + 41);
        let batch = vec![pair];
        let dslice = std::slice::from_ref(&draws);

        let (_, auto_grad) = fail_on_err(grad_loss(&policy, |tape, taped| {
            linear_dpo_loss_on_tape(tape, taped, &reference, &batch, &cfg, &schedule, dslice)
        }))?;

        // Freeze the weight at the base parameters, then finite-difference
        // the weighted residual difference.
        let parts = fail_on_err(delta_d(
            &policy,
            &reference,
            &batch[0],
            draws.t,
            &draws.eps_w,
            &draws.eps_l,
            cfg.kind,
            &schedule,
        ))?;
        let scale = fail_on_err(margin_scale(&cfg, draws.t, &schedule))?;
        let frozen_weight = fail_on_err(utility_weight(&cfg.utility, scale * parts.delta))?;

        let base = policy.flat_params();
        let frozen_loss = |params: &[f64]| -> f64 {
            let mut probe = policy.clone();
            probe.set_flat_params(params).unwrap();
            let side = |x0: &[f64], eps: &[f64]| -> f64 {
                let x_t = crate::dynamics::perturb(x0, eps, draws.t, &schedule).unwrap();
                let y =
                    crate::dynamics::target_value(cfg.kind, x0, eps, draws.t, &schedule).unwrap();
                let y_pol = probe.forward(&x_t, draws.t, &batch[0].c).unwrap();
                math::sq_dist(&y, &y_pol)
            };
            frozen_weight
                * (side(&batch[0].x0_w, &draws.eps_w) - side(&batch[0].x0_l, &draws.eps_l))
        };
        let fd = finite_diff_grad(frozen_loss, &base, 1e-5);
        worst = worst.max(max_rel_err(&auto_grad, &fd));
    }
    if worst >= 1e-4 {
        return Err(format!("max relative error {worst:.3e} >= 1e-4"));
    }
    Ok(format!("max relative error {worst:.2e} over 20 draws"))
}

/// Reverse-mode gradients of every objective match central finite
/// differences on networks up to two hidden layers.
pub fn check_finite_diff_agreement() -> Check {
    let mut worst: f64 = 0.0;
    for seed in 0..20u64 {
        let (policy, reference, pair, draws, schedule) = random_case(seed + 71);
        let cfg = DpoConfig {
            beta_bar: 10.0,
            ..DpoConfig::default()
        };
        let batch = vec![pair.clone()];
        let dslice = std::slice::from_ref(&draws);
        let base = policy.flat_params();

        // Unified loss: plain evaluation at probed parameters is the oracle.
        let (_, auto_grad) = fail_on_err(grad_loss(&policy, |tape, taped| {
            dpo_unified_loss_on_tape(tape, taped, &reference, &batch, &cfg, &schedule, dslice)
        }))?;
        let fd = finite_diff_grad(
            |params| {
                let mut probe = policy.clone();
                probe.set_flat_params(params).unwrap();
                crate::objectives::dpo_unified_loss(
                    &probe, &reference, &batch, &cfg, &schedule, dslice,
                )
                .unwrap()
            },
            &base,
            1e-5,
        );
        worst = worst.max(max_rel_err(&auto_grad, &fd));

        // SFT loss.
        let samples = vec![crate::objectives::SftExample {
            x0: pair.x0_w.clone(),
            c: pair.c.clone(),
        }];
        let sft_draws = vec![crate::objectives::SftDraws {
            t: draws.t,
            eps: draws.eps_w.clone(),
        }];
        let (_, auto_grad) = fail_on_err(grad_loss(&policy, |tape, taped| {
            crate::objectives::sft_loss_on_tape(
                tape, taped, &samples, cfg.kind, &schedule, &sft_draws,
            )
        }))?;
        let fd = finite_diff_grad(
            |params| {
                let mut probe = policy.clone();
                probe.set_flat_params(params).unwrap();
                crate::objectives::sft_loss(&probe, &samples, cfg.kind, &schedule, &sft_draws)
                    .unwrap()
            },
            &base,
            1e-5,
        );
        worst = worst.max(max_rel_err(&auto_grad, &fd));
    }
    if worst >= 1e-4 {
        return Err(format!("max relative error {worst:.3e} >= 1e-4"));
    }
    Ok(format!("max relative error {worst:.2e} over 20 seeds"))
}

/// Normalized utilities hit 0 and 1 at the window endpoints exactly, stay in
/// [0, 1] across the window, and the symmetric families pass through one
/// half at zero exactly.
pub fn check_utility_normalization() -> Check {
    for kind in [
        UtilityKind::Sigmoid,
        UtilityKind::Kt,
        UtilityKind::LossAverse,
        UtilityKind::RiskSeeking,
        UtilityKind::Linear,
    ] {
        let spec = UtilitySpec::new(kind);
        let at_lo = fail_on_err(normalize_utility(&spec, -5.0))?;
        let at_hi = fail_on_err(normalize_utility(&spec, 5.0))?;
        if at_lo != 0.0 || at_hi != 1.0 {
            return Err(format!("{kind:?}: endpoints ({at_lo}, {at_hi}) != (0, 1)"));
        }
        for i in 0..=200 {
            let x = -6.0 + 12.0 * i as f64 / 200.0;
            let u = fail_on_err(normalize_utility(&spec, x))?;
            if !(0.0..=1.0).contains(&u) {
                return Err(format!("{kind:?}: normalized value {u} at x = {x}"));
            }
        }
    }
    let kt0 = fail_on_err(normalize_utility(&UtilitySpec::new(UtilityKind::Kt), 0.0))?;
    let lin0 = fail_on_err(normalize_utility(&UtilitySpec::linear(), 0.0))?;
    if kt0 != 0.5 || lin0 != 0.5 {
        return Err(format!("midpoints KT {kt0}, Linear {lin0} != 0.5"));
    }
    Ok("all five normalized; endpoints and midpoints exact".into())
}

/// Sustained-gradient separation at beta_bar = 250, eta = 1e-2: the sigmoid
/// weight at delta = -0.05 sits strictly below the linear floor.
pub fn check_sustained_gradient() -> Check {
    let cfg = DpoConfig::default();
    let delta = -0.05;
    let sigmoid_w = sigmoid(cfg.beta_bar * delta);
    let linear_w = linear_dpo_weight(delta, &cfg);
    if linear_w != cfg.utility.floor_eta {
        return Err(format!("linear weight {linear_w} is not the floor"));
    }
    if sigmoid_w >= linear_w {
        return Err(format!(
            "sigmoid weight {sigmoid_w:.3e} >= floor {linear_w}"
        ));
    }
    Ok(format!(
        "sigma(250 * -0.05) = {sigmoid_w:.2e} < eta = {linear_w}"
    ))
}

/// EMA geometry: `||ref_k - theta|| = gamma^k ||ref_0 - theta||` to 1e-12
/// for a constant policy, and gamma = 1 leaves the reference bit-identical.
pub fn check_ema_geometry() -> Check {
    let dims = [4, 8, 2];
    let policy = mlp_init(&dims, Activation::Tanh, 11).unwrap();
    let mut reference = mlp_init(&dims, Activation::Tanh, 12).unwrap();
    let gamma = 0.995;
    let dist = |r: &MlpModel| -> f64 {
        r.flat_params()
            .iter()
            .zip(policy.flat_params())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    };
    let d0 = dist(&reference);
    let mut worst: f64 = 0.0;
    for k in 1..=100 {
        fail_on_err(ema_update(&mut reference, &policy, gamma))?;
        let want = gamma.powi(k) * d0;
        worst = worst.max((dist(&reference) - want).abs());
    }
    if worst >= 1e-12 {
        return Err(format!("geometric decay error {worst:.3e} >= 1e-12"));
    }

    let mut frozen = mlp_init(&dims, Activation::Tanh, 13).unwrap();
    let before = frozen.flat_params();
    for _ in 0..500 {
        fail_on_err(ema_update(&mut frozen, &policy, 1.0))?;
    }
    if frozen.flat_params() != before {
        return Err("gamma = 1 modified the reference".into());
    }
    Ok(format!("decay error {worst:.2e}; gamma = 1 bit-identical"))
}

/// Weight ranges and monotonicity on a margin grid.
pub fn check_weight_ranges() -> Check {
    let cfg = DpoConfig::default();
    let mut prev_sig = f64::NEG_INFINITY;
    let mut prev_lin = f64::NEG_INFINITY;
    for i in 0..=1000 {
        let delta = -0.1 + 0.2 * i as f64 / 1000.0;
        let w_sig = crate::objectives::dpo_gradient_weight(delta, cfg.beta_bar);
        let w_lin = linear_dpo_weight(delta, &cfg);
        if !(w_sig > 0.0 && w_sig < cfg.beta_bar) {
            return Err(format!("sigmoid weight {w_sig} outside (0, beta_bar)"));
        }
        if !(cfg.utility.floor_eta..=1.0).contains(&w_lin) {
            return Err(format!("linear weight {w_lin} outside [eta, 1]"));
        }
        if w_sig < prev_sig || w_lin < prev_lin {
            return Err(format!("weight not monotone at delta = {delta}"));
        }
        prev_sig = w_sig;
        prev_lin = w_lin;
    }
    Ok("both weights bounded and monotone on [-0.1, 0.1]".into())
}

/// Marginal equivalence on the analytic 1D Gaussian case (unit-scale run of
/// the acceptance criterion: N = 2000 here, the suite runs 1e4).
pub fn check_marginal_equivalence() -> Check {
    marginal_equivalence_gap(2_000, 200).map(|(gap_mean, gap_var)| {
        format!("worst mean gap {gap_mean:.2} SE, var gap {gap_var:.2} SE")
    })
}

/// Shared engine for the ODE/SDE marginal comparison; returns the worst
/// mean and variance gaps in SE units, failing beyond 4 SE.
pub fn marginal_equivalence_gap(n: usize, steps: usize) -> std::result::Result<(f64, f64), String> {
    let field = GaussianRfField::new(2.0, 1);
    let schedule = Schedule::rf();
    let want_var = field.marginal_var(schedule.t_min);
    let mut worst_mean: f64 = 0.0;
    let mut worst_var: f64 = 0.0;
    for mode in [SampleMode::Ode, SampleMode::Sde] {
        let mut xs = Vec::with_capacity(n);
        for i in 0..n {
            let x = fail_on_err(sample(
                &field,
                &schedule,
                PredictionKind::Velocity,
                &[],
                steps,
                mode,
                chain_seed(904, i as u64),
            ))?;
            xs.push(x[0]);
        }
        let mean = math::mean(&xs);
        let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1) as f64;
        let se_mean = (want_var / n as f64).sqrt();
        let se_var = want_var * (2.0 / n as f64).sqrt();
        let gm = mean.abs() / se_mean;
        let gv = (var - want_var).abs() / se_var;
        if gm >= 4.0 {
            return Err(format!("{mode:?}: mean {mean:.4} is {gm:.1} SE from 0"));
        }
        if gv >= 4.0 {
            return Err(format!(
                "{mode:?}: var {var:.4} is {gv:.1} SE from {want_var:.4}"
            ));
        }
        worst_mean = worst_mean.max(gm);
        worst_var = worst_var.max(gv);
    }
    Ok((worst_mean, worst_var))
}

/// Euler convergence order on the analytic RF trajectory: halving ratios in
/// [1.8, 2.2] over three doublings.
///
/// Integrates through the real `drift` + `euler_maruyama_step` path with the
/// sampling diffusion scaled to zero, so the stepping op itself is what gets
/// measured.
pub fn check_euler_order() -> Check {
    let field = GaussianRfField::new(2.0, 1);
    let schedule = Schedule::rf().with_sampling_g_scale(0.0);
    let t_start = 1.0 - schedule.t_min;
    let t_end = schedule.t_min;
    let x_start = 1.37;
    let exact = x_start * field.flow_scale(t_start, t_end);
    let run = |steps: usize| -> std::result::Result<f64, String> {
        let dt = (t_start - t_end) / steps as f64;
        let mut x = vec![x_start];
        for k in 0..steps {
            let t = t_start - k as f64 * dt;
            let v = field.velocity(&x, t);
            let d = fail_on_err(crate::dynamics::drift(
                &x,
                t,
                &v,
                PredictionKind::Velocity,
                &schedule,
            ))?;
            let (next, step) = fail_on_err(euler_maruyama_step(&x, dt, &d, 0.0, &[0.0]))?;
            debug_assert_eq!(step.variance_scale, 0.0);
            x = next;
        }
        Ok((x[0] - exact).abs())
    };
    let mut prev = run(25)?;
    let mut ratios = Vec::new();
    for steps in [50, 100, 200] {
        let err = run(steps)?;
        let ratio = prev / err;
        if !(1.8..=2.2).contains(&ratio) {
            return Err(format!(
                "error ratio {ratio:.3} at {steps} steps outside [1.8, 2.2]"
            ));
        }
        ratios.push(format!("{ratio:.2}"));
        prev = err;
    }
    Ok(format!("halving ratios {}", ratios.join(", ")))
}

type NamedCheck = (&'static str, fn() -> Check);

/// All registered checks, optionally filtered by substring.
pub fn run_checks(filter: Option<&str>) -> Vec<CheckOutcome> {
    let checks: Vec<NamedCheck> = vec![
        ("schedule-roundtrip", check_schedule_roundtrip),
        ("rf-score-identity", check_rf_score_identity),
        ("kl-closed-form", check_kl_closed_form),
        ("em-moments", check_em_moments),
        ("euler-order", check_euler_order),
        ("marginal-equivalence", check_marginal_equivalence),
        ("gradient-identity", check_gradient_identity),
        ("stop-gradient", check_stop_gradient),
        ("finite-diff", check_finite_diff_agreement),
        ("utility-normalization", check_utility_normalization),
        ("sustained-gradient", check_sustained_gradient),
        ("ema-geometry", check_ema_geometry),
        ("weight-ranges", check_weight_ranges),
    ];
    checks
        .into_iter()
        .filter(|(name, _)| filter.is_none_or(|f| name.contains(f)))
        .map(|(name, f)| CheckOutcome::from(name, f()))
        .collect()
}
