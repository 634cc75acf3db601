//! Acceptance suite: one test per criterion, each printing a PASS/FAIL line
//! (run with `cargo test --test acceptance -- --nocapture` to see them all).
//!
//! Every tolerance is pinned in code. Criteria 1-9 are property checks with
//! independent oracles; 10 and 11 are calibrated behavioral runs on the
//! two-mode toy task.

use prefflow::data::{all_samples, gen_dataset, ToyTaskSpec};
use prefflow::dynamics::PredictionKind;
use prefflow::math::sigmoid;
use prefflow::nn::{mlp_init, Activation, MlpModel, OptimHyper};
use prefflow::objectives::{delta_d, margin_scale, DpoConfig, PairDraws};
use prefflow::rng::{stream, Purpose};
use prefflow::schedules::Schedule;
use prefflow::training::{
    eval_implicit_acc, eval_pref_mass, select_batch, train_sft, train_step, Method, TrainState,
};
use prefflow::verify;
use std::time::{Duration, Instant};

fn report(criterion: &str, passed: bool, detail: &str) {
    let status = if passed { "PASS" } else { "FAIL" };
    println!("{status}  criterion {criterion}: {detail}");
}

fn check_to_result(
    name: &str,
    outcome: std::result::Result<String, String>,
    budget: Duration,
    start: Instant,
) {
    let elapsed = start.elapsed();
    match outcome {
        Ok(detail) => {
            let within = elapsed <= budget;
            report(name, within, &format!("{detail} ({elapsed:.2?})"));
            assert!(
                within,
                "{name} exceeded its {budget:?} runtime budget: {elapsed:?}"
            );
        }
        Err(detail) => {
            report(name, false, &detail);
            panic!("{name}: {detail}");
        }
    }
}

#[test]
fn criterion_01_gradient_identity() {
    let t0 = Instant::now();
    check_to_result(
        "01 gradient identity",
        verify::check_gradient_identity(),
        Duration::from_secs(10),
        t0,
    );
}

#[test]
fn criterion_02_stop_gradient_contract() {
    let t0 = Instant::now();
    check_to_result(
        "02 stop-gradient contract",
        verify::check_stop_gradient(),
        Duration::from_secs(10),
        t0,
    );
}

#[test]
fn criterion_03_kl_closed_form() {
    let t0 = Instant::now();
    check_to_result(
        "03 KL closed form vs Monte Carlo",
        verify::check_kl_closed_form(),
        Duration::from_secs(30),
        t0,
    );
}

#[test]
fn criterion_04_rf_score_velocity_identity() {
    let t0 = Instant::now();
    check_to_result(
        "04 RF score-velocity identity",
        verify::check_rf_score_identity(),
        Duration::from_secs(1),
        t0,
    );
}

#[test]
fn criterion_05_velocity_sde_marginal_equivalence() {
    let t0 = Instant::now();
    let outcome = verify::marginal_equivalence_gap(10_000, 200)
        .map(|(gm, gv)| format!("N=1e4, 200 steps: worst mean gap {gm:.2} SE, var gap {gv:.2} SE"));
    check_to_result(
        "05 velocity-SDE marginal equivalence",
        outcome,
        Duration::from_secs(60),
        t0,
    );
}

#[test]
fn criterion_06_euler_maruyama_convergence_order() {
    let t0 = Instant::now();
    check_to_result(
        "06 Euler-Maruyama convergence order",
        verify::check_euler_order(),
        Duration::from_secs(10),
        t0,
    );
}

#[test]
fn criterion_07_sustained_gradient_separation() {
    let t0 = Instant::now();
    check_to_result(
        "07 sustained-gradient separation",
        verify::check_sustained_gradient(),
        Duration::from_secs(1),
        t0,
    );
}

#[test]
fn criterion_08_ema_geometry() {
    let t0 = Instant::now();
    check_to_result(
        "08 EMA geometry",
        verify::check_ema_geometry(),
        Duration::from_secs(5),
        t0,
    );
}

#[test]
fn criterion_09_utility_family_normalization() {
    let t0 = Instant::now();
    check_to_result(
        "09 utility-family normalization",
        verify::check_utility_normalization(),
        Duration::from_secs(1),
        t0,
    );
}

/// Shared fixture for the behavioral runs: the two-mode task, its dataset,
/// and an SFT model pretrained on the pooled winner+loser samples.
fn pretrained_fixture() -> (
    ToyTaskSpec,
    Vec<prefflow::objectives::PreferencePair>,
    MlpModel,
) {
    let task = ToyTaskSpec::two_mode(4096, 42);
    let dataset = gen_dataset(&task).expect("dataset generation");
    let pool = all_samples(&dataset);
    let dims = [prefflow::nn::input_dim(2, 1), 32, 32, 2];
    let base = train_sft(
        &pool,
        &Schedule::rf(),
        PredictionKind::Velocity,
        OptimHyper::default(),
        200,
        64,
        &dims,
        Activation::Tanh,
        3000,
        7,
    )
    .expect("SFT pretraining");
    (task, dataset, base)
}

/// Run one preference trainer for `steps` steps and return the final state
/// plus the tail-window (last quarter) average of the logged mean weight.
fn run_preference_trainer(
    base: &MlpModel,
    dataset: &[prefflow::objectives::PreferencePair],
    method: Method,
    gamma: f64,
    steps: u64,
    seed: u64,
) -> (TrainState, f64) {
    let cfg = DpoConfig {
        gamma_ema: gamma,
        ..DpoConfig::default()
    };
    let mut state = TrainState::from_policy(base.clone(), OptimHyper::default(), cfg, method, seed)
        .expect("state init");
    let schedule = Schedule::rf();
    let tail_start = steps - steps / 4;
    let mut tail_weights = Vec::new();
    for step in 0..steps {
        let batch = select_batch(dataset, 64, state.rng_seed, state.step);
        let m = train_step(&mut state, &batch, &schedule, 200).expect("train step");
        if step >= tail_start {
            tail_weights.push(m.mean_weight);
        }
    }
    let tail_mean = tail_weights.iter().sum::<f64>() / tail_weights.len() as f64;
    (state, tail_mean)
}

/// Two-mode task, SFT-pretrained RF model, then 2000 linear-DPO steps at the
/// defaults (beta_bar 250, eta 1e-2, gamma 0.995, lr 1e-3, batch 64):
/// final-eval implicit accuracy >= 0.9 and preferred-region mass improves by
/// at least 0.20 absolute over the SFT reference sampler.
#[test]
fn criterion_10_end_to_end_toy_alignment() {
    let t0 = Instant::now();
    let (task, dataset, base) = pretrained_fixture();
    let schedule = Schedule::rf();

    let mass_base = eval_pref_mass(
        &base,
        &schedule,
        PredictionKind::Velocity,
        &task,
        2048,
        100,
        prefflow::dynamics::SampleMode::Ode,
        999,
    )
    .expect("base pref mass");

    let (state, _) = run_preference_trainer(&base, &dataset, Method::LinearDpo, 0.995, 2000, 100);

    let (acc, _) = eval_implicit_acc(
        &state.policy,
        &state.reference,
        &dataset,
        &state.cfg,
        &schedule,
        777,
    )
    .expect("implicit accuracy eval");
    let mass = eval_pref_mass(
        &state.policy,
        &schedule,
        PredictionKind::Velocity,
        &task,
        2048,
        100,
        prefflow::dynamics::SampleMode::Ode,
        999,
    )
    .expect("final pref mass");

    let improvement = mass - mass_base;
    let elapsed = t0.elapsed();
    let passed = acc >= 0.9 && improvement >= 0.20 && elapsed <= Duration::from_secs(300);
    report(
        "10 end-to-end toy alignment",
        passed,
        &format!(
            "implicit_acc {acc:.4} (>= 0.9), pref_mass {mass:.4} vs SFT {mass_base:.4} \
             (improvement {improvement:+.4} >= 0.20) ({elapsed:.1?})"
        ),
    );
    assert!(acc >= 0.9, "implicit accuracy {acc:.4} below 0.9");
    assert!(
        improvement >= 0.20,
        "pref_mass improvement {improvement:+.4} below 0.20 (base {mass_base:.4}, final {mass:.4})"
    );
    assert!(
        elapsed <= Duration::from_secs(300),
        "exceeded 5 min: {elapsed:?}"
    );
}

/// Under identical seeds and budgets the sigmoid-DPO baseline must run to
/// completion, Linear-DPO's logged mean weight must stay at or above eta,
/// and the baseline's late-training mean gradient weight must decay below
/// the eta-equivalent level.
///
/// The final clause is asserted exactly as stated and is expected to fail
/// at this scale: with fresh per-step (t, eps) draws the RF target noise at
/// high t flips each pair's margin sign on a fraction of draws no matter
/// how separated the policy is, flooring the batch-mean sigmoid weight near
/// 0.2 even while the median pair's weight collapses below 1e-8 (the
/// per-pair gradient-vanishing the check is after). The failure message
/// carries the measured distribution.
#[test]
fn criterion_11_baseline_comparability() {
    let t0 = Instant::now();
    let (_, dataset, base) = pretrained_fixture();
    let schedule = Schedule::rf();
    let eta = DpoConfig::default().utility.floor_eta;

    let (linear_state, linear_tail) =
        run_preference_trainer(&base, &dataset, Method::LinearDpo, 0.995, 2000, 100);
    let (dpo_state, dpo_tail) =
        run_preference_trainer(&base, &dataset, Method::Dpo, 1.0, 2000, 100);

    // Clause 1: the baseline ran to completion with finite parameters, and
    // its frozen (gamma = 1) reference stayed bit-identical to the
    // pretrained model across the whole run.
    assert_eq!(dpo_state.step, 2000, "baseline did not run to completion");
    assert!(
        dpo_state.policy.flat_params().iter().all(|v| v.is_finite()),
        "baseline parameters diverged"
    );
    assert_eq!(
        dpo_state.reference.flat_params(),
        base.flat_params(),
        "frozen reference drifted during the run"
    );
    drop(linear_state);

    // Clause 2: the linear weight never leaves [eta, 1], so its mean stays
    // at or above the floor.
    assert!(
        linear_tail >= eta,
        "linear-DPO tail mean weight {linear_tail:.4} fell below eta {eta}"
    );

    // Per-pair weight distribution under the trained baseline, for the
    // diagnostic in the final clause.
    let cfg = dpo_state.cfg;
    let mut weights: Vec<f64> = Vec::with_capacity(dataset.len());
    for (i, pair) in dataset.iter().enumerate() {
        let mut rng = stream(777, Purpose::Eval, i as u64);
        let d = PairDraws::sample(&mut rng, 2, &schedule, cfg.shared_noise);
        let parts = delta_d(
            &dpo_state.policy,
            &dpo_state.reference,
            pair,
            d.t,
            &d.eps_w,
            &d.eps_l,
            cfg.kind,
            &schedule,
        )
        .expect("margin eval");
        let scale = margin_scale(&cfg, d.t, &schedule).expect("margin scale");
        weights.push(sigmoid(scale * parts.delta));
    }
    weights.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let median = weights[weights.len() / 2];
    let frac_below = weights.iter().filter(|&&w| w < eta).count() as f64 / weights.len() as f64;

    let elapsed = t0.elapsed();
    let passed = dpo_tail < eta && linear_tail >= eta && elapsed <= Duration::from_secs(300);
    report(
        "11 baseline comparability",
        passed,
        &format!(
            "baseline complete; linear tail mean weight {linear_tail:.4} >= eta {eta}; \
             sigmoid tail mean weight {dpo_tail:.4} (target < {eta}; per-pair median {median:.2e}, \
             {:.0}% of pairs below eta) ({elapsed:.1?})",
            100.0 * frac_below
        ),
    );
    assert!(
        elapsed <= Duration::from_secs(300),
        "exceeded 5 min: {elapsed:?}"
    );

    // Clause 3, as stated: the baseline's late-training mean gradient weight
    // decays below the eta-equivalent level. At this scale the batch mean is
    // floored by draw noise even though the median pair's weight has
    // collapsed; the assertion documents the measured gap.
    assert!(
        dpo_tail < eta,
        "sigmoid-DPO tail mean weight {dpo_tail:.4} did not decay below eta {eta}: \
         the batch mean is floored by per-draw margin noise (median per-pair weight {median:.2e}, \
         {:.0}% of pairs below eta show the per-pair gradient collapse the check targets)",
        100.0 * frac_below
    );
}

/// Determinism of the behavioral pipeline: identical seeds give identical
/// trained parameters (supports the reproducibility contract the suite
/// relies on).
#[test]
fn acceptance_pipeline_is_deterministic() {
    let task = ToyTaskSpec::two_mode(64, 5);
    let dataset = gen_dataset(&task).unwrap();
    let dims = [prefflow::nn::input_dim(2, 1), 8, 2];
    let run = || {
        let base = mlp_init(&dims, Activation::Tanh, 3).unwrap();
        let (state, tail) = {
            let cfg = DpoConfig::default();
            let mut state =
                TrainState::from_policy(base, OptimHyper::default(), cfg, Method::LinearDpo, 11)
                    .unwrap();
            let schedule = Schedule::rf();
            let mut last = 0.0;
            for step in 0..30 {
                let batch = select_batch(&dataset, 8, state.rng_seed, step);
                last = train_step(&mut state, &batch, &schedule, 10)
                    .unwrap()
                    .mean_weight;
            }
            (state, last)
        };
        (state.policy.flat_params(), tail)
    };
    assert_eq!(run(), run());
}
