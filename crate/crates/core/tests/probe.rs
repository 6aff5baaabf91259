mod common;

use common::{cosine, gauss, pair_auc, rng};
use probegeom::evaluation::{cv_auc, Protocol, DEFAULT_SEEDS};
use probegeom::nalgebra::{DMatrix, DVector};
use probegeom::probe::{
    auc, cohens_d, fit_logistic, pearson_r, probability, train_probe, welch_t, LogisticProbe, Preprocess, DEFAULT_C,
};
use probegeom::store::{gen_synthetic, presets, Label, SynthConfig};
use proptest::prelude::*;
use rand::Rng;

/// Monte Carlo estimate of P(s_correct > s_incorrect) for two unit-variance
/// Gaussians whose means are `delta` apart along the optimal direction.
fn monte_carlo_bayes_auc(delta: f64, seed: u64) -> f64 {
    let mut r = rng(seed);
    let n = 2_000_000;
    let hits = (0..n).filter(|_| delta + gauss(&mut r) - gauss(&mut r) > 0.0).count();
    hits as f64 / n as f64
}

#[test]
fn probe_direction_recovers_planted_signal() {
    let cfg = presets::mean_shift(42);
    let ds = gen_synthetic(&cfg).unwrap();
    let model = train_probe(&ds.layers[0].to_matrix(), &ds.labels(), Preprocess::Standardize, DEFAULT_C).unwrap();
    let (u, _) = model.raw_direction();
    let planted = cfg.signal_basis().column(0).into_owned();
    let c = cosine(&u, &planted);
    assert!(c > 0.95, "cos {c}");
}

#[test]
fn probe_auc_matches_bayes_oracle_rank_two() {
    let mut per_seed = Vec::new();
    let delta: f64 = (1.5f64.powi(2) + 1.0).sqrt();
    let oracle = monte_carlo_bayes_auc(delta, 11);
    for seed in DEFAULT_SEEDS {
        let cfg = SynthConfig {
            signal_rank: 2,
            mean_shift: vec![1.5, 1.0],
            seed,
            ..SynthConfig::default()
        };
        let ds = gen_synthetic(&cfg).unwrap();
        let a = cv_auc(&ds, 0, Preprocess::Standardize, Protocol::DEFAULT, &[seed], DEFAULT_C).unwrap();
        per_seed.push(a.mean);
    }
    let got = common::mean(&per_seed);
    assert!((got - oracle).abs() <= 0.02, "probe {got:.4} vs oracle {oracle:.4} ({per_seed:?})");
}

#[test]
fn score_closed_forms() {
    let zero = LogisticProbe {
        weights: DVector::zeros(3),
        bias: 0.0,
        c: DEFAULT_C,
        iterations: 0,
        grad_norm: 0.0,
    };
    let x = DMatrix::from_row_slice(2, 3, &[1.0, -2.0, 3.0, 0.0, 5.0, 1.0]);
    assert!(zero.decision_function(&x).unwrap().into_iter().all(|z| probability(z) == 0.5));

    let p = LogisticProbe {
        weights: DVector::from_column_slice(&[1.0, 0.0, 0.0]),
        bias: 3f64.ln() - 1.0,
        ..zero.clone()
    };
    let s = probability(p.decision_function(&x).unwrap()[0]);
    assert!((s - 0.75).abs() < 1e-12);
}

#[test]
fn zero_weight_columns_do_not_change_scores() {
    let mut r = rng(8);
    let x = DMatrix::from_fn(30, 3, |_, _| gauss(&mut r));
    let y: Vec<f64> = (0..30).map(|i| (i % 2) as f64).collect();
    let p = fit_logistic(&x, &y, DEFAULT_C).unwrap();
    let wide = x.clone().insert_columns(3, 2, 7.5);
    let q = LogisticProbe {
        weights: p.weights.clone().insert_rows(3, 2, 0.0),
        ..p.clone()
    };
    assert_eq!(p.decision_function(&x).unwrap(), q.decision_function(&wide).unwrap());
}

#[test]
fn random_scores_give_chance_auc() {
    let mut r = rng(9);
    let n = 10_000;
    let scores: Vec<f64> = (0..n).map(|_| r.random()).collect();
    let labels: Vec<Label> = (0..n).map(|_| Label::from(r.random::<bool>())).collect();
    let a = auc(&scores, &labels).unwrap();
    assert!((a - 0.5).abs() <= 0.02, "{a}");
}

#[test]
fn effect_size_and_welch_on_shifted_normals() {
    let mut r = rng(10);
    let a: Vec<f64> = (0..10_000).map(|_| gauss(&mut r)).collect();
    let b: Vec<f64> = (0..10_000).map(|_| 1.0 + gauss(&mut r)).collect();
    let d = cohens_d(&b, &a).unwrap();
    assert!((d - 1.0).abs() <= 0.05, "d {d}");
    let t = welch_t(&b, &a).unwrap();
    assert!(t.p < 1e-10 && t.t > 0.0, "{t:?}");
}

#[test]
fn pearson_of_constructed_orthogonal_pair() {
    let a = [1.0, -1.0, 1.0, -1.0];
    let b = [1.0, 1.0, -1.0, -1.0];
    assert!(pearson_r(&a, &b).unwrap().abs() < 1e-12);
    assert!((pearson_r(&a, &a).unwrap() - 1.0).abs() < 1e-12);
}

fn scored() -> impl Strategy<Value = (Vec<f64>, Vec<Label>)> {
    prop::collection::vec((-50i32..50, any::<bool>()), 2..80)
        .prop_filter("both classes", |v| v.iter().any(|p| p.1) && v.iter().any(|p| !p.1))
        .prop_map(|v| {
            // coarse integer scores so ties are common
            let s = v.iter().map(|p| p.0 as f64 / 4.0).collect();
            let l = v.iter().map(|p| Label::from(p.1)).collect();
            (s, l)
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(128))]

    #[test]
    fn auc_agrees_with_pair_counting((s, l) in scored()) {
        prop_assert!((auc(&s, &l).unwrap() - pair_auc(&s, &l)).abs() < 1e-12);
    }

    #[test]
    fn auc_ignores_monotone_transforms((s, l) in scored(), a in 0.1f64..5.0, b in -3.0f64..3.0) {
        let t: Vec<f64> = s.iter().map(|v| (a * v + b).powi(3) + v.exp()).collect();
        prop_assert!((auc(&s, &l).unwrap() - auc(&t, &l).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn auc_of_negated_scores_is_complement((s, l) in scored()) {
        let neg: Vec<f64> = s.iter().map(|v| -v).collect();
        prop_assert!((auc(&s, &l).unwrap() + auc(&neg, &l).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weaker_penalty_never_lowers_training_likelihood(seed in any::<u64>(), n in 10usize..60, d in 1usize..6) {
        let mut r = rng(seed);
        let y: Vec<f64> = (0..n).map(|i| (i % 2) as f64).collect();
        let x = DMatrix::from_fn(n, d, |i, _| 0.7 * y[i] + gauss(&mut r));
        let mut last = f64::NEG_INFINITY;
        for c in [0.01, 0.1, 1.0, 10.0] {
            let p = fit_logistic(&x, &y, c).unwrap();
            let ll = p.log_likelihood(&x, &y).unwrap();
            prop_assert!(ll >= last - 1e-9, "C {c}: {ll} < {last}");
            last = ll;
        }
    }
}
