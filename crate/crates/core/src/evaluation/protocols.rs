//! Experiment protocols: leakage comparison, nested CV, few-shot budgets,
//! cross-dataset transfer, confound controls, paraphrase variance, and
//! classifier / unsupervised-feature comparisons.

use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Serialize, Serializer};

use super::folds::{make_folds, Fold, FoldPlan, Protocol};
use super::sweep::plans;
use super::{holdout_auc, Aggregate};
use crate::classifiers::unsupervised::{UnsupervisedModel, FEATURE_NAMES};
use crate::classifiers::{fit_method, Method};
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{mean, select, select_rows, variance};
use crate::probe::{auc, labels_to_f64, pearson_r, train_pls_probes, train_probe, Preprocess, Projector};
use crate::store::{ActivationDataset, Label};

fn layer_matrix(ds: &ActivationDataset, layer: usize) -> Result<DMatrix<f64>> {
    Ok(ds.layer(layer)?.to_matrix())
}

fn tasks(plans: &[FoldPlan]) -> Vec<(usize, usize)> {
    plans
        .iter()
        .enumerate()
        .flat_map(|(s, p)| (0..p.folds.len()).map(move |f| (s, f)))
        .collect()
}

/// Cross-validated probe AUC over `seeds x folds`.
pub fn cv_auc(
    ds: &ActivationDataset,
    layer: usize,
    pre: Preprocess,
    protocol: Protocol,
    seeds: &[u64],
    c: f64,
) -> Result<Aggregate> {
    let x = layer_matrix(ds, layer)?;
    cv_auc_matrix(&x, ds, pre, protocol, seeds, c)
}

fn cv_auc_matrix(
    x: &DMatrix<f64>,
    ds: &ActivationDataset,
    pre: Preprocess,
    protocol: Protocol,
    seeds: &[u64],
    c: f64,
) -> Result<Aggregate> {
    let labels = ds.labels();
    let plans = plans(ds, protocol, seeds)?;
    let t = tasks(&plans);
    let res = exec::map(&t, |&(s, f)| holdout_auc(x, &labels, &plans[s].folds[f], pre, c));
    Ok(Aggregate::from_results(res))
}

#[derive(Debug, Clone, PartialEq)]
pub struct LeakageReport {
    /// Stratified k-fold ignoring groups.
    pub naive: Aggregate,
    pub grouped: Aggregate,
    /// Group overlaps found in the grouped plans (always zero).
    pub grouped_violations: usize,
}

/// Same probe evaluated with group-blind and grouped k-fold.
pub fn leakage_comparison(
    ds: &ActivationDataset,
    layer: usize,
    pre: Preprocess,
    folds: usize,
    seeds: &[u64],
    c: f64,
) -> Result<LeakageReport> {
    let x = layer_matrix(ds, layer)?;
    let groups = ds.groups();
    let grouped_violations = plans(ds, Protocol::GroupKFold { folds }, seeds)?
        .iter()
        .map(|p| p.group_leaks(&groups).len())
        .sum();
    Ok(LeakageReport {
        naive: cv_auc_matrix(&x, ds, pre, Protocol::StratifiedKFold { folds }, seeds, c)?,
        grouped: cv_auc_matrix(&x, ds, pre, Protocol::GroupKFold { folds }, seeds, c)?,
        grouped_violations,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedCvConfig {
    pub grid: Vec<usize>,
    /// Dimension used by the non-nested reference.
    pub fixed_dim: usize,
    pub outer_folds: usize,
    pub inner_folds: usize,
    pub seeds: Vec<u64>,
    pub c: f64,
}

impl Default for NestedCvConfig {
    fn default() -> Self {
        NestedCvConfig {
            grid: vec![1, 2, 3, 4, 5, 6, 7, 8, 12, 16],
            fixed_dim: 8,
            outer_folds: 5,
            inner_folds: 3,
            seeds: super::DEFAULT_SEEDS.to_vec(),
            c: crate::probe::DEFAULT_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedFold {
    pub seed: u64,
    pub fold: usize,
    pub chosen_dim: usize,
    pub nested_auc: f64,
    pub standard_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NestedCvResult {
    pub folds: Vec<NestedFold>,
    pub nested: Aggregate,
    pub standard: Aggregate,
    /// `standard.mean − nested.mean`.
    pub bias: f64,
}

/// Outer grouped k-fold; the inner stratified k-fold on each outer training
/// set picks the PLS dimension by mean inner AUC (smaller dim on ties).
pub fn nested_cv(ds: &ActivationDataset, layer: usize, cfg: &NestedCvConfig) -> Result<NestedCvResult> {
    if cfg.grid.is_empty() {
        return Err(Error::InvalidConfig("nested CV grid is empty".into()));
    }
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let plans = plans(ds, Protocol::GroupKFold { folds: cfg.outer_folds }, &cfg.seeds)?;
    let t = tasks(&plans);
    let per: Vec<Result<NestedFold>> = exec::map(&t, |&(s, f)| {
        let fold = &plans[s].folds[f];
        let xtr = select_rows(&x, &fold.train);
        let ytr = select(&labels, &fold.train);
        let xte = select_rows(&x, &fold.test);
        let yte = select(&labels, &fold.test);

        let groups_tr: Vec<u64> = select(&ds.groups(), &fold.train);
        let inner = make_folds(
            &groups_tr,
            &ytr,
            Protocol::StratifiedKFold { folds: cfg.inner_folds },
            cfg.seeds[s],
        )?;
        let mut inner_mean = vec![0.0; cfg.grid.len()];
        for ifold in &inner.folds {
            let xi = select_rows(&xtr, &ifold.train);
            let yi = select(&ytr, &ifold.train);
            let xv = select_rows(&xtr, &ifold.test);
            let yv = select(&ytr, &ifold.test);
            for (m, acc) in train_pls_probes(&xi, &yi, &cfg.grid, cfg.c)?
                .into_iter()
                .zip(inner_mean.iter_mut())
            {
                *acc += auc(&m?.decision_function(&xv)?, &yv)? / inner.folds.len() as f64;
            }
        }
        let mut best = 0;
        for (i, v) in inner_mean.iter().enumerate() {
            if *v > inner_mean[best] || (*v == inner_mean[best] && cfg.grid[i] < cfg.grid[best]) {
                best = i;
            }
        }
        let chosen = cfg.grid[best];
        let dims_fit = if chosen == cfg.fixed_dim {
            vec![chosen]
        } else {
            vec![chosen, cfg.fixed_dim]
        };
        let mut aucs = Vec::with_capacity(2);
        for m in train_pls_probes(&xtr, &ytr, &dims_fit, cfg.c)? {
            aucs.push(auc(&m?.decision_function(&xte)?, &yte)?);
        }
        let nested_auc = aucs[0];
        let standard_auc = aucs[aucs.len() - 1];
        Ok(NestedFold {
            seed: cfg.seeds[s],
            fold: f,
            chosen_dim: chosen,
            nested_auc,
            standard_auc,
        })
    });
    let mut folds = Vec::new();
    let mut failed = 0;
    for r in per {
        match r {
            Ok(v) => folds.push(v),
            Err(e) => {
                log::warn!("nested CV fold failed: {e}");
                failed += 1;
            }
        }
    }
    let nested = Aggregate::from_values(folds.iter().map(|f| f.nested_auc).collect(), failed);
    let standard = Aggregate::from_values(folds.iter().map(|f| f.standard_auc).collect(), failed);
    let bias = standard.mean - nested.mean;
    Ok(NestedCvResult {
        folds,
        nested,
        standard,
        bias,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Budget {
    /// Samples per class.
    PerClass(usize),
    /// The whole training fold.
    Full,
}

impl std::fmt::Display for Budget {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Budget::PerClass(n) => write!(f, "{n}"),
            Budget::Full => f.write_str("full"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewshotConfig {
    pub budgets: Vec<Budget>,
    pub methods: Vec<Method>,
    pub resamples: usize,
    pub pls_dim: usize,
    pub seeds: Vec<u64>,
    pub protocol: Protocol,
    pub c: f64,
}

impl Default for FewshotConfig {
    fn default() -> Self {
        FewshotConfig {
            budgets: vec![
                Budget::PerClass(5),
                Budget::PerClass(25),
                Budget::PerClass(100),
                Budget::PerClass(200),
                Budget::Full,
            ],
            methods: vec![Method::Linear, Method::Centroid, Method::Mahalanobis],
            resamples: 10,
            pls_dim: 5,
            seeds: super::DEFAULT_SEEDS.to_vec(),
            protocol: Protocol::DEFAULT,
            c: crate::probe::DEFAULT_C,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FewshotRow {
    pub budget: Budget,
    pub method: Method,
    /// Mean and std over resamples of the per-resample mean AUC.
    pub auc: Aggregate,
    pub failed_cells: usize,
}

/// Class-balanced subsample of `budget` rows per class drawn from `train`.
fn subsample(train: &[usize], labels: &[Label], budget: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut out = Vec::with_capacity(2 * budget);
    for want in [Label::Correct, Label::Incorrect] {
        let rows: Vec<usize> = train.iter().copied().filter(|&i| labels[i] == want).collect();
        out.extend(sample(rng, rows.len(), budget).into_iter().map(|k| rows[k]));
    }
    out.sort_unstable();
    out
}

/// For each budget, fit PLS + each method on a per-class subsample of the
/// training fold and score the full test fold.
pub fn fewshot_curve(ds: &ActivationDataset, layer: usize, cfg: &FewshotConfig) -> Result<Vec<FewshotRow>> {
    if cfg.resamples == 0 || cfg.methods.is_empty() || cfg.budgets.is_empty() {
        return Err(Error::InvalidConfig("few-shot needs budgets, methods and resamples".into()));
    }
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let plans = plans(ds, cfg.protocol, &cfg.seeds)?;
    for p in &plans {
        for fold in &p.folds {
            let pos = fold.train.iter().filter(|&&i| labels[i].is_correct()).count();
            let smallest = pos.min(fold.train.len() - pos);
            if let Some(Budget::PerClass(b)) =
                cfg.budgets.iter().find(|b| matches!(b, Budget::PerClass(n) if *n > smallest || *n == 0))
            {
                return Err(Error::OutOfRange {
                    what: "few-shot budget",
                    detail: format!("{b} per class but a training fold has only {smallest}"),
                });
            }
        }
    }

    // cells: (budget, resample, seed, fold) -> per-method AUC
    let mut cells = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        let reps = if budget == Budget::Full { 1 } else { cfg.resamples };
        for r in 0..reps {
            for (s, p) in plans.iter().enumerate() {
                for f in 0..p.folds.len() {
                    cells.push((bi, r, s, f));
                }
            }
        }
    }
    let results: Vec<Vec<Result<f64>>> = exec::map(&cells, |&(bi, r, s, f)| {
        let fold = &plans[s].folds[f];
        let rows = match cfg.budgets[bi] {
            Budget::Full => fold.train.clone(),
            Budget::PerClass(b) => {
                let mut rng = ChaCha8Rng::seed_from_u64(cfg.seeds[s]);
                rng.set_stream(((f as u64) << 40) | ((bi as u64) << 20) | r as u64);
                subsample(&fold.train, &labels, b, &mut rng)
            }
        };
        fewshot_cell(&x, &labels, &rows, &fold.test, cfg)
    });

    let mut out = Vec::new();
    for (bi, &budget) in cfg.budgets.iter().enumerate() {
        for (mi, &method) in cfg.methods.iter().enumerate() {
            let mut per_rep: std::collections::BTreeMap<usize, Vec<f64>> = Default::default();
            let mut failed = 0;
            for (cell, res) in cells.iter().zip(&results) {
                if cell.0 != bi {
                    continue;
                }
                match &res[mi] {
                    Ok(v) => per_rep.entry(cell.1).or_default().push(*v),
                    Err(_) => failed += 1,
                }
            }
            let means: Vec<f64> = per_rep.values().map(|v| mean(v)).collect();
            out.push(FewshotRow {
                budget,
                method,
                auc: Aggregate::from_values(means, 0),
                failed_cells: failed,
            });
        }
    }
    Ok(out)
}

fn fewshot_cell(
    x: &DMatrix<f64>,
    labels: &[Label],
    train: &[usize],
    test: &[usize],
    cfg: &FewshotConfig,
) -> Vec<Result<f64>> {
    let run = || -> Result<Vec<Result<f64>>> {
        let xtr = select_rows(x, train);
        let ytr = select(labels, train);
        let k = cfg.pls_dim.min(train.len() - 1).min(x.ncols());
        let proj = Projector::fit(&xtr, &labels_to_f64(&ytr), Preprocess::Pls(k))?;
        let ztr = proj.transform(&xtr)?;
        let zte = proj.transform(&select_rows(x, test))?;
        let yte = select(labels, test);
        Ok(cfg
            .methods
            .iter()
            .map(|&m| {
                let model = fit_method(m, &ztr, &ytr)?;
                auc(&model.score(&zte)?, &yte)
            })
            .collect())
    };
    match run() {
        Ok(v) => v,
        Err(e) => {
            let msg = e.to_string();
            cfg.methods.iter().map(|_| Err(Error::Degenerate(msg.clone()))).collect()
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferRow {
    pub dataset: String,
    pub full_auc: f64,
    pub pls_auc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferReport {
    pub layer: usize,
    pub dim: usize,
    pub rows: Vec<TransferRow>,
    /// Mean of the per-dataset AUCs.
    pub cross_full: f64,
    pub cross_pls: f64,
}

/// Fits a full-dimensional and a PLS probe on all of `train` and applies
/// both unchanged to every test dataset.
pub fn transfer_eval(
    train: &ActivationDataset,
    tests: &[(String, &ActivationDataset)],
    layer: usize,
    dim: usize,
    c: f64,
) -> Result<TransferReport> {
    if tests.is_empty() {
        return Err(Error::InvalidConfig("transfer needs at least one test dataset".into()));
    }
    let x = layer_matrix(train, layer)?;
    let labels = train.labels();
    let full = train_probe(&x, &labels, Preprocess::Standardize, c)?;
    let pls = train_probe(&x, &labels, Preprocess::Pls(dim), c)?;
    let mut rows = Vec::new();
    for (name, ds) in tests {
        if ds.hidden_dim() != train.hidden_dim() {
            return Err(Error::DimMismatch {
                expected: train.hidden_dim(),
                actual: ds.hidden_dim(),
            });
        }
        let xt = layer_matrix(ds, layer)?;
        let yt = ds.labels();
        rows.push(TransferRow {
            dataset: name.clone(),
            full_auc: auc(&full.decision_function(&xt)?, &yt)?,
            pls_auc: auc(&pls.decision_function(&xt)?, &yt)?,
        });
    }
    let n = rows.len() as f64;
    Ok(TransferReport {
        layer,
        dim,
        cross_full: rows.iter().map(|r| r.full_auc).sum::<f64>() / n,
        cross_pls: rows.iter().map(|r| r.pls_auc).sum::<f64>() / n,
        rows,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SurfaceCorrelations {
    /// Pearson r between out-of-fold probe scores and each surface
    /// statistic; `None` when the statistic is constant.
    pub l2_norm: Option<f64>,
    pub mean_activation: Option<f64>,
    pub sparsity: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConfoundReport {
    pub length_only: Aggregate,
    pub raw: Aggregate,
    pub length_residualized: Aggregate,
    pub length_label_r: Option<f64>,
    pub surface: SurfaceCorrelations,
}

/// Regresses every column of `x` on `len` using only `fit_rows`, and
/// returns the residuals of all rows.
fn residualize(x: &DMatrix<f64>, len: &[f64], fit_rows: &[usize]) -> Result<DMatrix<f64>> {
    let l: Vec<f64> = select(len, fit_rows);
    let lm = mean(&l);
    let lvar: f64 = l.iter().map(|v| (v - lm) * (v - lm)).sum();
    if lvar == 0.0 {
        return Err(Error::Degenerate("answer length is constant in the training rows".into()));
    }
    let mut out = x.clone();
    for j in 0..x.ncols() {
        let col: Vec<f64> = fit_rows.iter().map(|&i| x[(i, j)]).collect();
        let cm = mean(&col);
        let slope = l.iter().zip(&col).map(|(a, b)| (a - lm) * (b - cm)).sum::<f64>() / lvar;
        for i in 0..x.nrows() {
            out[(i, j)] = x[(i, j)] - cm - slope * (len[i] - lm);
        }
    }
    Ok(out)
}

pub fn confound_controls(
    ds: &ActivationDataset,
    layer: usize,
    pre: Preprocess,
    protocol: Protocol,
    seeds: &[u64],
    c: f64,
) -> Result<ConfoundReport> {
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let len: Vec<f64> = ds.records.iter().map(|r| r.answer_length as f64).collect();
    if len.iter().all(|&v| v == len[0]) {
        return Err(Error::Degenerate("answer length is constant".into()));
    }
    let len_x = DMatrix::from_column_slice(len.len(), 1, &len);
    let plans = plans(ds, protocol, seeds)?;
    let t = tasks(&plans);

    let per: Vec<[Result<f64>; 3]> = exec::map(&t, |&(s, f)| {
        let fold = &plans[s].folds[f];
        let resid = residualize(&x, &len, &fold.train)
            .and_then(|r| holdout_auc(&r, &labels, fold, pre, c));
        [
            holdout_auc(&len_x, &labels, fold, Preprocess::Standardize, c),
            holdout_auc(&x, &labels, fold, pre, c),
            resid,
        ]
    });
    let mut cols: [Vec<Result<f64>>; 3] = Default::default();
    for p in per {
        for (c, v) in cols.iter_mut().zip(p) {
            c.push(v);
        }
    }
    let [length_only, raw, resid] = cols;

    let oof = out_of_fold_scores(&x, &labels, &plans[0], pre, c)?;
    let l2: Vec<f64> = x.row_iter().map(|r| r.norm()).collect();
    let mean_act: Vec<f64> = x.row_iter().map(|r| r.mean()).collect();
    let sparsity: Vec<f64> = x
        .row_iter()
        .map(|r| r.iter().filter(|v| v.abs() < 1e-6).count() as f64 / r.len() as f64)
        .collect();
    Ok(ConfoundReport {
        length_only: Aggregate::from_results(length_only),
        raw: Aggregate::from_results(raw),
        length_residualized: Aggregate::from_results(resid),
        length_label_r: pearson_r(&len, &labels_to_f64(&labels)).ok(),
        surface: SurfaceCorrelations {
            l2_norm: pearson_r(&oof, &l2).ok(),
            mean_activation: pearson_r(&oof, &mean_act).ok(),
            sparsity: pearson_r(&oof, &sparsity).ok(),
        },
    })
}

/// Decision scores of every row from the fold in which it was held out.
pub fn out_of_fold_scores(
    x: &DMatrix<f64>,
    labels: &[Label],
    plan: &FoldPlan,
    pre: Preprocess,
    c: f64,
) -> Result<Vec<f64>> {
    let mut out = vec![f64::NAN; x.nrows()];
    let per: Vec<Result<(Vec<usize>, Vec<f64>)>> = exec::map(&plan.folds, |fold: &Fold| {
        let m = train_probe(&select_rows(x, &fold.train), &select(labels, &fold.train), pre, c)?;
        Ok((fold.test.clone(), m.decision_function(&select_rows(x, &fold.test))?))
    });
    for r in per {
        let (idx, s) = r?;
        for (i, v) in idx.into_iter().zip(s) {
            out[i] = v;
        }
    }
    Ok(out)
}

/// Paraphrase variance decomposition of a 1-D score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct AnovaResult {
    pub within_var: f64,
    pub between_var: f64,
    /// `between / within`; `+∞` (serialized as `"inf"`) when the
    /// paraphrases of every answer coincide.
    #[serde(serialize_with = "ser_ratio")]
    pub f_ratio: f64,
    pub num_answers: usize,
}

fn ser_ratio<S: Serializer>(v: &f64, s: S) -> std::result::Result<S::Ok, S::Error> {
    if v.is_infinite() && *v > 0.0 {
        s.serialize_str("inf")
    } else {
        s.serialize_f64(*v)
    }
}

impl AnovaResult {
    pub fn from_variances(between_var: f64, within_var: f64, num_answers: usize) -> Result<Self> {
        if !(between_var >= 0.0 && within_var >= 0.0) {
            return Err(Error::Degenerate("variances must be non-negative".into()));
        }
        let f_ratio = if within_var > 0.0 {
            between_var / within_var
        } else if between_var > 0.0 {
            f64::INFINITY
        } else {
            return Err(Error::Degenerate("both variances are zero".into()));
        };
        Ok(AnovaResult {
            within_var,
            between_var,
            f_ratio,
            num_answers,
        })
    }
}

/// Within-answer variance is the mean sample variance of the scores of each
/// (group, label) answer's paraphrases; between-answer variance is the
/// sample variance of the answer means, pooled over both labels.
pub fn anova_from_scores(scores: &[f64], answers: &[(u64, Label)]) -> Result<AnovaResult> {
    if scores.len() != answers.len() {
        return Err(Error::ShapeMismatch("scores and answer keys differ in length".into()));
    }
    let mut by: std::collections::BTreeMap<(u64, Label), Vec<f64>> = Default::default();
    for (s, k) in scores.iter().zip(answers) {
        by.entry(*k).or_default().push(*s);
    }
    if let Some((k, _)) = by.iter().find(|(_, v)| v.len() < 2) {
        return Err(Error::InvalidDataset(format!(
            "answer (group {}, label {}) has fewer than 2 paraphrases",
            k.0,
            u8::from(k.1)
        )));
    }
    if by.len() < 2 {
        return Err(Error::InvalidDataset("need at least 2 answers".into()));
    }
    let within = by.values().map(|v| variance(v, 1)).sum::<f64>() / by.len() as f64;
    let means: Vec<f64> = by.values().map(|v| mean(v)).collect();
    AnovaResult::from_variances(variance(&means, 1), within, by.len())
}

/// Variance decomposition on the first PLS component score, fit on the
/// whole dataset.
pub fn paraphrase_anova(ds: &ActivationDataset, layer: usize) -> Result<AnovaResult> {
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let proj = Projector::fit(&x, &labels_to_f64(&labels), Preprocess::Pls(1))?;
    let scores: Vec<f64> = proj.transform(&x)?.column(0).iter().copied().collect();
    let keys: Vec<(u64, Label)> = ds.records.iter().map(|r| (r.group_id, r.label)).collect();
    anova_from_scores(&scores, &keys)
}

/// Trains on original answers (paraphrase 0) of training groups and tests
/// on paraphrased answers of held-out groups.
pub fn paraphrase_transfer(
    ds: &ActivationDataset,
    layer: usize,
    pre: Preprocess,
    folds: usize,
    seeds: &[u64],
    c: f64,
) -> Result<Aggregate> {
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    if !ds.records.iter().any(|r| r.paraphrase_id > 0) {
        return Err(Error::InvalidDataset("dataset has no paraphrased records".into()));
    }
    let plans = plans(ds, Protocol::GroupKFold { folds }, seeds)?;
    let t = tasks(&plans);
    let res = exec::map(&t, |&(s, f)| {
        let fold = &plans[s].folds[f];
        let restricted = Fold {
            train: fold.train.iter().copied().filter(|&i| ds.records[i].paraphrase_id == 0).collect(),
            test: fold.test.iter().copied().filter(|&i| ds.records[i].paraphrase_id > 0).collect(),
        };
        holdout_auc(&x, &labels, &restricted, pre, c)
    });
    Ok(Aggregate::from_results(res))
}

#[derive(Debug, Clone, PartialEq)]
pub struct MethodRow {
    pub name: String,
    pub auc: Aggregate,
}

/// Every method fit in the same PLS space per fold.
pub fn classifier_comparison(
    ds: &ActivationDataset,
    layer: usize,
    methods: &[Method],
    pls_dim: usize,
    protocol: Protocol,
    seeds: &[u64],
) -> Result<Vec<MethodRow>> {
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let plans = plans(ds, protocol, seeds)?;
    let t = tasks(&plans);
    let per: Vec<Vec<Result<f64>>> = exec::map(&t, |&(s, f)| {
        let fold = &plans[s].folds[f];
        let run = || -> Result<(DMatrix<f64>, Vec<Label>, DMatrix<f64>, Vec<Label>)> {
            let xtr = select_rows(&x, &fold.train);
            let ytr = select(&labels, &fold.train);
            let proj = Projector::fit(&xtr, &labels_to_f64(&ytr), Preprocess::Pls(pls_dim))?;
            Ok((
                proj.transform(&xtr)?,
                ytr,
                proj.transform(&select_rows(&x, &fold.test))?,
                select(&labels, &fold.test),
            ))
        };
        match run() {
            Err(e) => {
                let msg = e.to_string();
                methods.iter().map(|_| Err(Error::Degenerate(msg.clone()))).collect()
            }
            Ok((ztr, ytr, zte, yte)) => methods
                .iter()
                .map(|&m| auc(&fit_method(m, &ztr, &ytr)?.score(&zte)?, &yte))
                .collect(),
        }
    });
    Ok(methods
        .iter()
        .enumerate()
        .map(|(mi, m)| MethodRow {
            name: m.name().to_string(),
            auc: Aggregate::from_results(per.iter().map(|r| match &r[mi] {
                Ok(v) => Ok(*v),
                Err(e) => Err(Error::Degenerate(e.to_string())),
            })),
        })
        .collect())
}

/// Label-free features fit on each training fold (raw activations) and
/// evaluated by AUC on the test fold, with the PLS centroid score as a
/// supervised reference row.
pub fn unsupervised_eval(
    ds: &ActivationDataset,
    layer: usize,
    pls_dim: usize,
    protocol: Protocol,
    seeds: &[u64],
) -> Result<Vec<MethodRow>> {
    let x = layer_matrix(ds, layer)?;
    let labels = ds.labels();
    let plans = plans(ds, protocol, seeds)?;
    let t = tasks(&plans);
    let width = FEATURE_NAMES.len() + 1;
    let per: Vec<Vec<Result<f64>>> = exec::map(&t, |&(s, f)| {
        let fold = &plans[s].folds[f];
        let xtr = select_rows(&x, &fold.train);
        let xte = select_rows(&x, &fold.test);
        let ytr = select(&labels, &fold.train);
        let yte = select(&labels, &fold.test);
        let mut out: Vec<Result<f64>> = match UnsupervisedModel::fit(&xtr, plans[s].seed)
            .and_then(|m| m.features(&xte))
        {
            Ok(table) => table.columns.iter().map(|c| auc(c, &yte)).collect(),
            Err(e) => {
                let msg = e.to_string();
                (0..FEATURE_NAMES.len()).map(|_| Err(Error::Degenerate(msg.clone()))).collect()
            }
        };
        out.push((|| {
            let proj = Projector::fit(&xtr, &labels_to_f64(&ytr), Preprocess::Pls(pls_dim))?;
            let m = fit_method(Method::Centroid, &proj.transform(&xtr)?, &ytr)?;
            auc(&m.score(&proj.transform(&xte)?)?, &yte)
        })());
        out
    });
    let names = FEATURE_NAMES.iter().copied().chain(["centroid"]);
    Ok(names
        .enumerate()
        .take(width)
        .map(|(k, name)| MethodRow {
            name: name.to_string(),
            auc: Aggregate::from_results(per.iter().map(|r| match &r[k] {
                Ok(v) => Ok(*v),
                Err(e) => Err(Error::Degenerate(e.to_string())),
            })),
        })
        .collect())
}

/// Unit-norm probe direction per layer in raw activation space, from a
/// probe fit on the full dataset at each layer.
pub fn layer_directions(ds: &ActivationDataset, layers: &[usize], pre: Preprocess, c: f64) -> Result<Vec<DVector<f64>>> {
    let labels = ds.labels();
    let per: Vec<Result<DVector<f64>>> = exec::map(layers, |&l| {
        let m = train_probe(&layer_matrix(ds, l)?, &labels, pre, c)?;
        let (u, _) = m.raw_direction();
        let n = u.norm();
        if !(n > 0.0) {
            return Err(Error::Degenerate(format!("zero probe direction at layer {l}")));
        }
        Ok(u / n)
    });
    per.into_iter().collect()
}
