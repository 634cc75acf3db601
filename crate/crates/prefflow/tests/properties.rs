//! Property tests for the algebraic invariants: affinity of the forward
//! perturbation, conversion round-trips, weight bounds and monotonicity,
//! normalization ranges, margin antisymmetry, and lossless persistence.

use prefflow::data::{load_dataset, save_dataset};
use prefflow::dynamics::{perturb, score_from_velocity_rf, velocity_from_score};
use prefflow::objectives::{
    dpo_gradient_weight, dpo_sigmoid_loss, implicit_accuracy, linear_dpo_weight, normalize_utility,
    DpoConfig, PreferencePair, UtilityKind, UtilitySpec,
};
use prefflow::schedules::{schedule_coeffs, Schedule};
use proptest::prelude::*;

fn finite_vec(len: usize) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

proptest! {
    /// perturb is affine in x0 with the noise held at zero (exact), and
    /// affine in eps with x0 held at zero.
    #[test]
    fn perturb_is_affine(
        x0 in finite_vec(3),
        x0b in finite_vec(3),
        a in -3.0f64..3.0,
        b in -3.0f64..3.0,
        t in 0.0f64..=1.0,
    ) {
        let s = Schedule::rf();
        let zero = vec![0.0; 3];
        let combo: Vec<f64> = x0.iter().zip(&x0b).map(|(u, v)| a * u + b * v).collect();
        let lhs = perturb(&combo, &zero, t, &s).unwrap();
        let pa = perturb(&x0, &zero, t, &s).unwrap();
        let pb = perturb(&x0b, &zero, t, &s).unwrap();
        for i in 0..3 {
            let rhs = a * pa[i] + b * pb[i];
            prop_assert!((lhs[i] - rhs).abs() < 1e-12 * (1.0 + rhs.abs()));
        }
    }

    /// velocity_from_score inverts score_from_velocity_rf on the RF schedule.
    #[test]
    fn score_velocity_roundtrip(
        x in finite_vec(2),
        v in finite_vec(2),
        t in 0.01f64..0.99,
    ) {
        let s = Schedule::rf();
        let score = score_from_velocity_rf(&x, t, &v).unwrap();
        let back = velocity_from_score(&x, t, &score, &s).unwrap();
        for i in 0..2 {
            prop_assert!((back[i] - v[i]).abs() < 1e-10 * (1.0 + v[i].abs()), "t={t}");
        }
    }

    /// The sigmoid gradient weight stays inside (0, beta_bar) and never
    /// decreases in the margin.
    #[test]
    fn gradient_weight_bounds_and_monotonicity(
        beta_bar in 1.0f64..3000.0,
        d1 in -0.5f64..0.5,
        d2 in -0.5f64..0.5,
    ) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let w_lo = dpo_gradient_weight(lo, beta_bar);
        let w_hi = dpo_gradient_weight(hi, beta_bar);
        prop_assert!(w_lo >= 0.0 && w_lo <= beta_bar);
        prop_assert!(w_lo <= w_hi);
    }

    /// The linear weight is clipped into [eta, 1] and is monotone.
    #[test]
    fn linear_weight_bounds_and_monotonicity(
        d1 in -0.5f64..0.5,
        d2 in -0.5f64..0.5,
    ) {
        let cfg = DpoConfig::default();
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let w_lo = linear_dpo_weight(lo, &cfg);
        let w_hi = linear_dpo_weight(hi, &cfg);
        prop_assert!((cfg.utility.floor_eta..=1.0).contains(&w_lo));
        prop_assert!(w_lo <= w_hi);
    }

    /// Normalized utilities always land in [0, 1].
    #[test]
    fn normalized_utilities_stay_in_unit_interval(
        x in -50.0f64..50.0,
        kind_idx in 0usize..5,
    ) {
        let kind = [
            UtilityKind::Sigmoid,
            UtilityKind::Kt,
            UtilityKind::LossAverse,
            UtilityKind::RiskSeeking,
            UtilityKind::Linear,
        ][kind_idx];
        let u = normalize_utility(&UtilitySpec::new(kind), x).unwrap();
        prop_assert!((0.0..=1.0).contains(&u));
    }

    /// The per-sample loss is nonnegative and monotone in the margin.
    #[test]
    fn sigmoid_loss_nonnegative_and_monotone(
        beta_bar in 1.0f64..3000.0,
        d1 in -0.2f64..0.2,
        d2 in -0.2f64..0.2,
    ) {
        let (lo, hi) = if d1 <= d2 { (d1, d2) } else { (d2, d1) };
        let l_lo = dpo_sigmoid_loss(lo, beta_bar);
        let l_hi = dpo_sigmoid_loss(hi, beta_bar);
        prop_assert!(l_lo >= 0.0);
        prop_assert!(l_lo <= l_hi);
    }

    /// Negating every margin mirrors the accuracy around one half, exactly
    /// (ties contribute one half to both sides).
    #[test]
    fn implicit_accuracy_mirror_symmetry(deltas in prop::collection::vec(-5.0f64..5.0, 1..40)) {
        let acc = implicit_accuracy(&deltas).unwrap();
        let neg: Vec<f64> = deltas.iter().map(|d| -d).collect();
        let acc_neg = implicit_accuracy(&neg).unwrap();
        prop_assert!((0.0..=1.0).contains(&acc));
        prop_assert_eq!(acc + acc_neg, 1.0);
    }

    /// Schedules: sigma never decreases with t and alpha(0) = 1 exactly.
    #[test]
    fn sigma_is_nondecreasing(t1 in 0.0f64..=1.0, t2 in 0.0f64..=1.0) {
        let (lo, hi) = if t1 <= t2 { (t1, t2) } else { (t2, t1) };
        for s in [Schedule::vp(), Schedule::ve(), Schedule::rf()] {
            let a = schedule_coeffs(&s, lo).unwrap();
            let b = schedule_coeffs(&s, hi).unwrap();
            prop_assert!(a.sigma <= b.sigma + 1e-15, "{:?}", s.paradigm);
        }
    }

    /// JSON-lines persistence is lossless at 64-bit precision.
    #[test]
    fn dataset_persistence_is_bit_exact(
        raw in prop::collection::vec((finite_vec(2), finite_vec(2)), 1..20),
    ) {
        let pairs: Vec<PreferencePair> = raw
            .into_iter()
            .map(|(w, l)| PreferencePair { x0_w: w, x0_l: l, c: vec![1.0] })
            .collect();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("pairs.jsonl");
        save_dataset(&path, &pairs).unwrap();
        let back = load_dataset(&path).unwrap();
        prop_assert_eq!(pairs, back);
    }
}
