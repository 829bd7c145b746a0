//! Property checks for invariants that hold for every input, not just the
//! hand-picked cases in the oracle tests.

use nalgebra::DMatrix;
use proptest::prelude::*;
use tvr_core::acquisition::{expected_improvement, ktvr, prob_best, tvr_components, vr_acq, BestProbInputs};
use tvr_core::bench::quantile7;
use tvr_core::surrogate::{FittedGp, GpSpace};
use tvr_core::{Bounds, ControlPoint, Dataset, GpHyperParams, Marginal, NoisePoint, NoiseSpec};

fn marginal() -> impl Strategy<Value = Marginal> {
    prop_oneof![
        (-5.0..5.0f64, 0.1..4.0f64).prop_map(|(mean, sd)| Marginal::Normal { mean, sd }),
        (-5.0..5.0f64, 0.1..10.0f64).prop_map(|(lo, w)| Marginal::Uniform { lo, hi: lo + w }),
        (0.05..5.0f64).prop_map(|rate| Marginal::Exponential { rate }),
        (0.5..8.0f64, 0.5..8.0f64, 0.5..80.0f64, -40.0..40.0f64)
            .prop_map(|(a, b, scale, shift)| Marginal::ScaledBeta { a, b, scale, shift }),
    ]
}

/// A GP on `[0,1] x R` conditioned on `n` points of a smooth function with
/// fixed hyperparameters, so each case costs one small Cholesky.
fn gp_from(xs: &[(f64, f64)], ell: f64, gamma: f64, noise_var: f64) -> FittedGp {
    let bounds = Bounds::cube(1, 0.0, 1.0).unwrap();
    let noise = NoiseSpec::independent(vec![Marginal::Normal { mean: 0.0, sd: 1.0 }]).unwrap();
    let space = GpSpace::new(&bounds, &noise);
    let mut data = Dataset::new();
    for &(x, z) in xs {
        let y = (4.0 * x).sin() + 0.5 * x * z;
        data.push(ControlPoint(vec![x]), NoisePoint::continuous(vec![z], vec![z]), y).unwrap();
    }
    FittedGp::condition(GpHyperParams::new(1.0, vec![ell], vec![gamma]), noise_var, &space, &data, true).unwrap()
}

fn design() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0.0..1.0f64, -2.0..2.0f64), 3..9)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn latent_round_trip(m in marginal(), z in -4.0..4.0f64, dz in 0.01..1.0f64) {
        let t = m.from_latent(z);
        let back = m.to_latent(t, 0).unwrap();
        prop_assert!((back - z).abs() < 1e-6, "{m:?}: {z} -> {t} -> {back}");
        prop_assert!(m.from_latent(z + dz) >= t);
    }

    #[test]
    fn bounds_unit_round_trip(
        iv in prop::collection::vec((-100.0..100.0f64, 0.01..50.0f64), 1..5),
        u in prop::collection::vec(0.0..1.0f64, 5),
    ) {
        let b = Bounds::new(iv.iter().map(|&(lo, w)| (lo, lo + w)).collect()).unwrap();
        let u = &u[..b.dim()];
        let x = b.from_unit(u);
        prop_assert!(b.contains(&x));
        for (a, c) in b.to_unit(&x).iter().zip(u) {
            prop_assert!((a - c).abs() < 1e-9);
        }
    }

    #[test]
    fn quantiles_are_ordered_and_bracketed(
        v in prop::collection::vec(-1e3..1e3f64, 1..40),
        p in 0.0..1.0f64,
        dp in 0.0..1.0f64,
    ) {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let a = quantile7(&v, p);
        let b = quantile7(&v, (p + dp).min(1.0));
        prop_assert!(lo <= a && a <= b + 1e-12 && b <= hi);
    }

    #[test]
    fn ei_dominates_plain_gain(mean in -5.0..5.0f64, sd in 0.0..3.0f64, inc in -5.0..5.0f64) {
        let ei = expected_improvement(mean, sd, inc);
        prop_assert!(ei >= (mean - inc).max(0.0));
        prop_assert!(ei <= (mean - inc).max(0.0) + sd * 0.4 + 1e-12);
    }

    #[test]
    fn prob_best_is_a_shift_and_scale_invariant_probability(
        mu in prop::collection::vec(-3.0..3.0f64, 3),
        l in prop::collection::vec(-1.0..1.0f64, 9),
        shift in -10.0..10.0f64,
        scale in 0.1..10.0f64,
    ) {
        let lm = DMatrix::from_row_slice(3, 3, &l);
        let cov = &lm * lm.transpose() + DMatrix::identity(3, 3) * 0.1;
        let base = BestProbInputs { mu: mu.clone(), cov: cov.clone() };
        let moved = BestProbInputs {
            mu: mu.iter().map(|m| scale * m + shift).collect(),
            cov: cov * (scale * scale),
        };
        for i in 0..2 {
            let p = prob_best(&base, i).unwrap();
            prop_assert!((0.0..=1.0).contains(&p));
            prop_assert!((p - prob_best(&moved, i).unwrap()).abs() < 1e-9);
        }
    }

    #[test]
    fn tvr_factors_are_bounded(
        xs in design(),
        ell in 0.1..1.0f64,
        gamma in 0.5..3.0f64,
        noise_var in 1e-4..0.5f64,
        x in 0.0..1.0f64,
        x_star in 0.0..1.0f64,
        z in -3.0..3.0f64,
    ) {
        let gp = gp_from(&xs, ell, gamma, noise_var);
        let (vr, poi) = tvr_components(&gp, &[x_star], &[x], &[z]);
        prop_assert!((0.0..=1.0).contains(&poi), "poi {poi}");
        prop_assert!(vr >= -1e-12);
        // observing anywhere cannot remove more variance than g(x) has
        let var_g = gp.posterior_g(&[x]).1;
        prop_assert!(vr_acq(&gp, &[x], &[z]).unwrap() <= var_g * (1.0 + 1e-9) + 1e-12);
    }

    #[test]
    fn batch_tvr_ignores_order_and_reduces_to_tvr(
        xs in design(),
        ell in 0.1..1.0f64,
        b in prop::collection::vec((0.0..1.0f64, -2.0..2.0f64), 3),
        x_star in 0.0..1.0f64,
    ) {
        let gp = gp_from(&xs, ell, 1.2, 0.05);
        let batch: Vec<(Vec<f64>, Vec<f64>)> = b.iter().map(|&(x, z)| (vec![x], vec![z])).collect();
        let fwd = ktvr(&gp, &[x_star], &batch).unwrap();
        let mut rev = batch.clone();
        rev.reverse();
        let bwd = ktvr(&gp, &[x_star], &rev).unwrap();
        // Cholesky and eigen round-off on near-duplicate designs reaches ~1e-8 relative
        prop_assert!((fwd - bwd).abs() <= 1e-6 * fwd.abs().max(1e-12), "{fwd} vs {bwd}");
        prop_assert!(fwd >= -1e-12);

        let one = ktvr(&gp, &[x_star], &batch[..1]).unwrap();
        let (vr, poi) = tvr_components(&gp, &[x_star], &batch[0].0, &batch[0].1);
        prop_assert!((one - vr * poi).abs() <= 1e-12 + 1e-9 * one.abs());
    }
}
