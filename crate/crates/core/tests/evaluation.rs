mod common;

use std::collections::BTreeSet;

use probegeom::classifiers::Method;
use probegeom::evaluation::{
    anova_from_scores, confound_controls, cv_auc, dimension_sweep, fewshot_curve, layer_sweep, make_folds, nested_cv,
    transfer_eval, Budget, FewshotConfig, NestedCvConfig, Protocol, SweepConfig,
};
use probegeom::exec::with_jobs;
use probegeom::probe::{Preprocess, DEFAULT_C};
use probegeom::store::{gen_synthetic, presets, Label, LayerSchedule, LengthModel, SynthConfig};
use proptest::prelude::*;

fn sweep_cfg(dims: Vec<usize>, seeds: Vec<u64>) -> SweepConfig {
    SweepConfig {
        dims,
        seeds,
        ..SweepConfig::default()
    }
}

#[test]
fn signal_free_sweep_sits_at_chance() {
    let cfg = SynthConfig {
        mean_shift: vec![0.0],
        ..presets::mean_shift(9)
    };
    let ds = gen_synthetic(&cfg).unwrap();
    let r = dimension_sweep(&ds, 0, &sweep_cfg(vec![1, 5, 16], vec![42, 123, 456])).unwrap();
    for s in &r.summary {
        assert!((s.auc.mean - 0.5).abs() <= 0.03, "dim {}: {}", s.dim, s.auc.mean);
    }
}

#[test]
fn sweep_grid_shapes() {
    let cfg = SynthConfig {
        num_groups: 100,
        num_layers: 2,
        ..SynthConfig::default()
    };
    let ds = gen_synthetic(&cfg).unwrap();
    let one = dimension_sweep(&ds, 1, &sweep_cfg(vec![3], vec![1])).unwrap();
    assert_eq!(one.summary.len(), 1);
    assert_eq!(one.cells.len(), 5);
    let grid = layer_sweep(&ds, &[0, 1], &sweep_cfg(vec![1, 2], vec![1, 2])).unwrap();
    assert_eq!(grid.summary.len(), 4);
    assert_eq!(grid.cells.len(), 4 * 2 * 5);
    assert!(layer_sweep(&ds, &[0], &sweep_cfg(vec![2, 2], vec![1])).is_err());
    assert!(layer_sweep(&ds, &[0], &sweep_cfg(vec![65], vec![1])).is_err());
}

#[test]
fn layer_schedules_shape_the_layer_curve() {
    let base = SynthConfig {
        num_groups: 500,
        num_layers: 5,
        mean_shift: vec![1.5],
        ..SynthConfig::default()
    };
    let lin = gen_synthetic(&SynthConfig {
        layer_schedule: LayerSchedule::Linear,
        ..base.clone()
    })
    .unwrap();
    let r = layer_sweep(&lin, &[0, 1, 2, 3, 4], &sweep_cfg(vec![1], vec![42])).unwrap();
    assert_eq!(r.best().unwrap().layer, 4);

    let flat = gen_synthetic(&SynthConfig {
        layer_schedule: LayerSchedule::Flat,
        ..base
    })
    .unwrap();
    let r = layer_sweep(&flat, &[0, 1, 2, 3, 4], &sweep_cfg(vec![1], vec![42])).unwrap();
    let means: Vec<f64> = r.summary.iter().map(|s| s.auc.mean).collect();
    let spread = means.iter().cloned().fold(f64::NEG_INFINITY, f64::max) - means.iter().cloned().fold(f64::INFINITY, f64::min);
    assert!(spread < 0.03, "{means:?}");
}

/// Extra PLS components beyond four times the signal rank only add noise.
#[test]
fn overspecified_pls_loses_to_the_signal_rank() {
    let ds = gen_synthetic(&presets::rank3_wide(42)).unwrap();
    let r = dimension_sweep(&ds, 0, &sweep_cfg(vec![3, 16], vec![42])).unwrap();
    let (a3, a16) = (r.get(0, 3).unwrap().auc.mean, r.get(0, 16).unwrap().auc.mean);
    assert!(a16 < a3, "AUC(3) {a3}, AUC(16) {a16}");
}

#[test]
fn nested_cv_picks_dims_near_the_signal_rank() {
    let ds = gen_synthetic(&presets::rank5(42)).unwrap();
    let cfg = NestedCvConfig {
        seeds: vec![42],
        ..NestedCvConfig::default()
    };
    let r = nested_cv(&ds, 0, &cfg).unwrap();
    let near = r.folds.iter().filter(|f| (4..=8).contains(&f.chosen_dim)).count();
    let chosen: Vec<usize> = r.folds.iter().map(|f| f.chosen_dim).collect();
    assert!(near >= 4, "chosen {chosen:?}");
}

#[test]
fn singleton_grid_makes_nested_equal_standard() {
    let ds = gen_synthetic(&presets::few_shot(3)).unwrap();
    let cfg = NestedCvConfig {
        grid: vec![3],
        fixed_dim: 3,
        seeds: vec![42, 123],
        ..NestedCvConfig::default()
    };
    let r = nested_cv(&ds, 0, &cfg).unwrap();
    for f in &r.folds {
        assert_eq!(f.chosen_dim, 3);
        assert_eq!(f.nested_auc, f.standard_auc);
    }
    assert_eq!(r.bias, 0.0);
}

#[test]
fn full_budget_matches_the_standard_pipeline() {
    let ds = gen_synthetic(&presets::few_shot(4)).unwrap();
    let cfg = FewshotConfig {
        budgets: vec![Budget::Full],
        methods: vec![Method::Linear],
        resamples: 2,
        seeds: vec![42],
        ..FewshotConfig::default()
    };
    let rows = fewshot_curve(&ds, 0, &cfg).unwrap();
    let standard = cv_auc(&ds, 0, Preprocess::Pls(5), Protocol::DEFAULT, &[42], DEFAULT_C).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((rows[0].auc.mean - standard.mean).abs() <= 0.01, "{} vs {}", rows[0].auc.mean, standard.mean);
}

#[test]
fn transfer_to_a_resample_and_to_an_unrelated_signal() {
    let same = |seed| SynthConfig {
        num_groups: 500,
        signal_seed: Some(5),
        nuisance_seed: Some(6),
        seed,
        ..SynthConfig::default()
    };
    let train = gen_synthetic(&same(1)).unwrap();
    let again = gen_synthetic(&same(2)).unwrap();
    let r = transfer_eval(&train, &[("again".into(), &again)], 0, 1, DEFAULT_C).unwrap();
    let in_domain = cv_auc(&again, 0, Preprocess::Pls(1), Protocol::DEFAULT, &[42], DEFAULT_C).unwrap();
    assert!((r.rows[0].pls_auc - in_domain.mean).abs() <= 0.02, "{} vs {}", r.rows[0].pls_auc, in_domain.mean);

    let src = gen_synthetic(&presets::transfer_source(42)).unwrap();
    let orth = gen_synthetic(&presets::transfer_orthogonal(42)).unwrap();
    let r = transfer_eval(&src, &[("orth".into(), &orth)], 0, 5, DEFAULT_C).unwrap();
    assert!((r.rows[0].pls_auc - 0.5).abs() <= 0.05, "{:?}", r.rows[0]);
    assert!((r.rows[0].full_auc - 0.5).abs() <= 0.05, "{:?}", r.rows[0]);
}

#[test]
fn length_controls() {
    let ds = gen_synthetic(&presets::few_shot(5)).unwrap();
    let r = confound_controls(&ds, 0, Preprocess::Standardize, Protocol::DEFAULT, &[42], DEFAULT_C).unwrap();
    assert!((r.length_only.mean - 0.5).abs() <= 0.03, "{}", r.length_only.mean);
    assert!((r.length_residualized.mean - r.raw.mean).abs() <= 0.02);

    let confounded = gen_synthetic(&SynthConfig {
        length: LengthModel::LabelScaled { factor: 10 },
        ..presets::few_shot(5)
    })
    .unwrap();
    let r = confound_controls(&confounded, 0, Preprocess::Standardize, Protocol::DEFAULT, &[42], DEFAULT_C).unwrap();
    assert!(r.length_only.mean > 0.99, "{}", r.length_only.mean);
    assert!((r.length_label_r.unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn identical_paraphrases_give_infinite_ratio() {
    let keys: Vec<(u64, Label)> = (0..12).map(|i| (i / 4, Label::from(i % 4 < 2))).collect();
    let scores: Vec<f64> = keys.iter().map(|(g, l)| *g as f64 + l.as_f64() * 3.0).collect();
    let r = anova_from_scores(&scores, &keys).unwrap();
    assert_eq!(r.within_var, 0.0);
    assert!(r.f_ratio.is_infinite() && r.f_ratio > 0.0);
    assert_eq!(r.num_answers, 6);
    assert_eq!(serde_json::to_value(r).unwrap()["f_ratio"], "inf");
}

#[test]
fn anova_of_a_hand_worked_case() {
    // answers (0,0): [1,3], (0,1): [4,6], (1,0): [0,4]
    let keys = [
        (0, Label::Incorrect),
        (0, Label::Incorrect),
        (0, Label::Correct),
        (0, Label::Correct),
        (1, Label::Incorrect),
        (1, Label::Incorrect),
    ];
    let r = anova_from_scores(&[1.0, 3.0, 4.0, 6.0, 0.0, 4.0], &keys).unwrap();
    // within: (2 + 2 + 8) / 3; means 2, 5, 2 -> variance 3
    assert!((r.within_var - 4.0).abs() < 1e-12);
    assert!((r.between_var - 3.0).abs() < 1e-12);
    assert!((r.f_ratio - 0.75).abs() < 1e-12);
}

#[test]
fn cv_ignores_thread_count() {
    let ds = gen_synthetic(&presets::few_shot(6)).unwrap();
    let run = |jobs| {
        with_jobs(Some(jobs), || {
            cv_auc(&ds, 0, Preprocess::Pls(3), Protocol::DEFAULT, &[42, 123], DEFAULT_C).unwrap()
        })
        .unwrap()
    };
    let a = run(1);
    let b = run(4);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a.values), bits(&b.values));
    assert_eq!(a.mean.to_bits(), b.mean.to_bits());
}

fn grouped_labels() -> impl Strategy<Value = (Vec<u64>, Vec<Label>)> {
    prop::collection::vec(1usize..5, 10..60).prop_map(|sizes| {
        let mut groups = Vec::new();
        let mut labels = Vec::new();
        for (g, &pairs) in sizes.iter().enumerate() {
            for i in 0..2 * pairs {
                groups.push(g as u64);
                labels.push(Label::from(i % 2 == 0));
            }
        }
        (groups, labels)
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn group_folds_partition_rows_and_groups((groups, labels) in grouped_labels(), seed in any::<u64>(), k in 2usize..6) {
        let plan = make_folds(&groups, &labels, Protocol::GroupKFold { folds: k }, seed).unwrap();
        prop_assert_eq!(plan.folds.len(), k);
        prop_assert!(plan.group_leaks(&groups).is_empty());
        let mut seen = vec![0; groups.len()];
        for f in &plan.folds {
            let test: BTreeSet<u64> = f.test.iter().map(|&i| groups[i]).collect();
            prop_assert!(f.train.iter().all(|&i| !test.contains(&groups[i])));
            prop_assert_eq!(f.train.len() + f.test.len(), groups.len());
            for &i in &f.test {
                seen[i] += 1;
            }
        }
        prop_assert!(seen.iter().all(|&c| c == 1));
    }

    #[test]
    fn stratified_folds_keep_label_balance((groups, labels) in grouped_labels(), seed in any::<u64>(), k in 2usize..6) {
        let plan = make_folds(&groups, &labels, Protocol::StratifiedKFold { folds: k }, seed).unwrap();
        let pos = labels.iter().filter(|l| l.is_correct()).count() as f64;
        let n = labels.len() as f64;
        for f in &plan.folds {
            let p = f.test.iter().filter(|&&i| labels[i].is_correct()).count() as f64;
            let expected = pos * f.test.len() as f64 / n;
            prop_assert!((p - expected).abs() <= 1.0, "{p} positives, expected {expected}");
        }
    }

    #[test]
    fn fold_plans_are_pure_functions_of_seed((groups, labels) in grouped_labels(), seed in any::<u64>()) {
        let a = make_folds(&groups, &labels, Protocol::DEFAULT, seed).unwrap();
        let b = make_folds(&groups, &labels, Protocol::DEFAULT, seed).unwrap();
        prop_assert_eq!(a, b);
    }
}
