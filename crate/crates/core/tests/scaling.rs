use forge_core::scaling::{
    BudgetSpec, MixObservation, ScalingCurve, compute_budget, fit_benchmark, fit_power_law, optimal_mix_ratio,
    predict_loss, read_curve, read_observations,
};
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn xs() -> Vec<f64> {
    (1..=12).map(|i| i as f64 * 0.05).collect()
}

fn sse(obs: &[MixObservation], c: f64, k: f64, a: f64) -> f64 {
    obs.iter().map(|o| (c + k * o.x.powf(a) - o.loss).powi(2)).sum()
}

/// Exhaustive search over a dense (c, k, alpha) grid.
fn grid_oracle_rmse(obs: &[MixObservation]) -> f64 {
    let mut best = f64::INFINITY;
    for ci in 0..=60 {
        let c = 0.3 + ci as f64 * 0.01;
        for ki in 0..=60 {
            let k = 0.5 + ki as f64 * 0.01;
            for ai in 0..=60 {
                let a = -0.8 + ai as f64 * 0.01;
                if a == 0.0 {
                    continue;
                }
                best = best.min(sse(obs, c, k, a));
            }
        }
    }
    (best / obs.len() as f64).sqrt()
}

#[test]
fn predict_matches_high_precision_value() {
    // 0.55 + 0.75 * 0.2^-0.35 evaluated at 40 significant digits
    let expected = 1.867_348_753_709_520_6;
    let got = predict_loss(&ScalingCurve::new("b", 0.55, 0.75, -0.35), 0.2).unwrap();
    assert!((got - expected).abs() < 1e-14);
}

#[test]
fn noisy_fit_is_no_worse_than_grid_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(31);
    let obs: Vec<MixObservation> = xs()
        .into_iter()
        .map(|x| MixObservation::new("b", x, 0.45 + 0.8 * x.powf(-0.3) + rng.random_range(-0.003..0.003)))
        .collect();
    let fit = fit_power_law(&obs).unwrap();
    let oracle = grid_oracle_rmse(&obs);
    assert!(fit.rmse <= oracle + 1e-15, "fit {} oracle {}", fit.rmse, oracle);
    assert!((fit.rmse - (sse(&obs, fit.c, fit.k, fit.alpha) / obs.len() as f64).sqrt()).abs() < 1e-15);
}

#[test]
fn fit_benchmark_selects_one_benchmark() {
    let mut obs: Vec<MixObservation> = xs().into_iter().map(|x| MixObservation::new("a", x, 1.0 + 0.5 * x.powf(-0.4))).collect();
    obs.extend(xs().into_iter().map(|x| MixObservation::new("b", x, 2.0 + 0.2 * x.powf(1.5))));
    let a = fit_benchmark(&obs, "a").unwrap();
    let b = fit_benchmark(&obs, "b").unwrap();
    assert!((a.alpha + 0.4).abs() < 1e-6 && (b.alpha - 1.5).abs() < 1e-6);
    assert_eq!(b.benchmark, "b");
    assert!(fit_benchmark(&obs, "c").is_err());
    assert!(fit_power_law(&obs).is_err());
}

#[test]
fn analytic_optimum_of_decreasing_plus_increasing() {
    // d/dx [0.8 x^-0.5 + (625/243) x^2] = 0  ->  x^2.5 = 0.07776  ->  x = 0.36
    let a = ScalingCurve::new("a", 0.6, 0.8, -0.5);
    let b = ScalingCurve::new("b", 1.2, 625.0 / 243.0, 2.0);
    let opt = optimal_mix_ratio(&[a, b], &[1.0, 1.0], (0.05, 0.6), 0.01).unwrap();
    assert!((opt.x - 0.36).abs() < 1e-6);
}

#[test]
fn files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let obs_path = dir.path().join("obs.jsonl");
    let lines: Vec<String> = xs()
        .into_iter()
        .map(|x| serde_json::to_string(&MixObservation::new("b", x, 1.0 + x)).unwrap())
        .collect();
    std::fs::write(&obs_path, lines.join("\n") + "\n").unwrap();
    let obs = read_observations(&obs_path).unwrap();
    assert_eq!(obs.len(), 12);
    let fit = fit_power_law(&obs).unwrap();
    let curve_path = dir.path().join("b.json");
    std::fs::write(&curve_path, serde_json::to_string(&fit).unwrap()).unwrap();
    assert_eq!(read_curve(&curve_path).unwrap(), fit);

    std::fs::write(&obs_path, "{\"x\": 1.5, \"loss\": 1.0, \"benchmark\": \"b\"}\n").unwrap();
    let err = read_observations(&obs_path).unwrap_err().to_string();
    assert!(err.contains(":1:"), "{err}");
}

#[test]
fn budget_spec_rejects_unknown_fields() {
    let spec: BudgetSpec = serde_json::from_str(r#"{"model_params": 1000}"#).unwrap();
    assert_eq!(compute_budget(&spec).unwrap().tokens, 50_000);
    assert!(serde_json::from_str::<BudgetSpec>(r#"{"model_params": 1, "multiplier": 2}"#).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn fit_ignores_observation_order(seed in 0u64..10_000) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut obs: Vec<MixObservation> = xs()
            .into_iter()
            .map(|x| MixObservation::new("b", x, 0.5 + 0.7 * x.powf(-0.4) + rng.random_range(-0.002..0.002)))
            .collect();
        let a = fit_power_law(&obs).unwrap();
        obs.shuffle(&mut rng);
        let b = fit_power_law(&obs).unwrap();
        prop_assert!((a.alpha - b.alpha).abs() < 1e-6);
        prop_assert!((a.c - b.c).abs() < 1e-6 * a.c.abs().max(1.0));
        prop_assert!((a.k - b.k).abs() < 1e-6 * a.k.abs().max(1.0));
    }

    #[test]
    fn optimum_ignores_weight_scale(w1 in 0.1f64..5.0, w2 in 0.1f64..5.0, s in 0.01f64..100.0) {
        let curves = [ScalingCurve::new("a", 0.6, 0.8, -0.5), ScalingCurve::new("b", 1.2, 2.5, 2.0)];
        let a = optimal_mix_ratio(&curves, &[w1, w2], (0.05, 0.6), 0.001).unwrap();
        let b = optimal_mix_ratio(&curves, &[w1 * s, w2 * s], (0.05, 0.6), 0.001).unwrap();
        prop_assert!((a.x - b.x).abs() < 1e-6, "{} vs {}", a.x, b.x);
    }

    #[test]
    fn optimum_stays_in_domain(c in 0.1f64..2.0, k in 0.01f64..2.0, alpha in -1.5f64..1.5, lo in 0.01f64..0.4) {
        prop_assume!(alpha.abs() > 1e-3);
        let hi = (lo + 0.3).min(1.0);
        let opt = optimal_mix_ratio(&[ScalingCurve::new("a", c, k, alpha)], &[1.0], (lo, hi), 0.01).unwrap();
        prop_assert!(opt.x >= lo && opt.x <= hi);
    }
}
