//! Grid evaluation over layers x PLS dimensions x seeds x folds.

use nalgebra::DMatrix;

use super::folds::{make_folds, FoldPlan, Protocol, DEFAULT_SEEDS};
use super::Aggregate;
use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{select, select_rows};
use crate::probe::{auc, train_pls_probes, DEFAULT_C};
use crate::store::{ActivationDataset, Label};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub protocol: Protocol,
    pub c: f64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            dims: vec![1, 2, 3, 4, 5, 8, 16, 32],
            seeds: DEFAULT_SEEDS.to_vec(),
            protocol: Protocol::DEFAULT,
            c: DEFAULT_C,
        }
    }
}

/// One (layer, dim, seed, fold) evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct CellRecord {
    pub layer: usize,
    pub dim: usize,
    pub seed: u64,
    pub fold: usize,
    /// Held-out AUC, or the error message of a failed fit.
    pub auc: std::result::Result<f64, String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellSummary {
    pub layer: usize,
    pub dim: usize,
    pub auc: Aggregate,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub layers: Vec<usize>,
    pub dims: Vec<usize>,
    pub seeds: Vec<u64>,
    pub num_folds: usize,
    /// Ordered by layer, dim, seed, fold.
    pub cells: Vec<CellRecord>,
    /// Ordered by layer, dim.
    pub summary: Vec<CellSummary>,
}

impl SweepResult {
    /// Cell with the highest mean AUC; earlier (lower layer, smaller dim)
    /// cells win ties. `None` if every cell failed.
    pub fn best(&self) -> Option<&CellSummary> {
        let mut best: Option<&CellSummary> = None;
        for s in &self.summary {
            if s.auc.mean.is_nan() {
                continue;
            }
            if best.is_none_or(|b| s.auc.mean > b.auc.mean) {
                best = Some(s);
            }
        }
        best
    }

    pub fn get(&self, layer: usize, dim: usize) -> Option<&CellSummary> {
        self.summary.iter().find(|s| s.layer == layer && s.dim == dim)
    }
}

fn validate(ds: &ActivationDataset, cfg: &SweepConfig) -> Result<()> {
    if cfg.dims.is_empty() || cfg.seeds.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one dim and one seed".into()));
    }
    let max = ds.hidden_dim().min(ds.num_records().saturating_sub(1));
    if let Some(&bad) = cfg.dims.iter().find(|&&k| k == 0 || k > max) {
        return Err(Error::OutOfRange {
            what: "PLS dimension",
            detail: format!("{bad} outside 1..={max}"),
        });
    }
    let mut sorted = cfg.dims.clone();
    sorted.sort_unstable();
    sorted.dedup();
    if sorted.len() != cfg.dims.len() {
        return Err(Error::InvalidConfig("duplicate PLS dimensions".into()));
    }
    Ok(())
}

/// Fold plans per seed, shared by every layer.
pub(crate) fn plans(ds: &ActivationDataset, protocol: Protocol, seeds: &[u64]) -> Result<Vec<FoldPlan>> {
    let groups = ds.groups();
    let labels = ds.labels();
    seeds
        .iter()
        .map(|&s| make_folds(&groups, &labels, protocol, s))
        .collect()
}

pub fn dimension_sweep(ds: &ActivationDataset, layer: usize, cfg: &SweepConfig) -> Result<SweepResult> {
    layer_sweep(ds, &[layer], cfg)
}

/// Full grid over `layers x cfg.dims`. For every (layer, seed, fold) one PLS
/// fit at the largest dim is truncated to each smaller dim.
pub fn layer_sweep(ds: &ActivationDataset, layers: &[usize], cfg: &SweepConfig) -> Result<SweepResult> {
    validate(ds, cfg)?;
    if layers.is_empty() {
        return Err(Error::InvalidConfig("sweep needs at least one layer".into()));
    }
    let mats: Vec<DMatrix<f64>> = layers
        .iter()
        .map(|&l| Ok(ds.layer(l)?.to_matrix()))
        .collect::<Result<_>>()?;
    let labels = ds.labels();
    let plans = plans(ds, cfg.protocol, &cfg.seeds)?;
    let n_folds = cfg.protocol.num_splits();

    let tasks: Vec<(usize, usize, usize)> = (0..layers.len())
        .flat_map(|li| (0..plans.len()).flat_map(move |si| (0..n_folds).map(move |f| (li, si, f))))
        .collect();
    let per_task: Vec<Vec<Result<f64>>> = exec::map(&tasks, |&(li, si, f)| {
        eval_dims(&mats[li], &labels, &plans[si].folds[f], &cfg.dims, cfg.c)
    });

    let mut cells = Vec::with_capacity(tasks.len() * cfg.dims.len());
    let mut summary = Vec::new();
    for (li, &layer) in layers.iter().enumerate() {
        for (di, &dim) in cfg.dims.iter().enumerate() {
            let mut results = Vec::new();
            for (si, &seed) in cfg.seeds.iter().enumerate() {
                for fold in 0..n_folds {
                    let t = (li * plans.len() + si) * n_folds + fold;
                    let r = match &per_task[t][di] {
                        Ok(v) => Ok(*v),
                        Err(e) => Err(e.to_string()),
                    };
                    results.push(r.clone().map_err(Error::Degenerate));
                    cells.push(CellRecord {
                        layer,
                        dim,
                        seed,
                        fold,
                        auc: r,
                    });
                }
            }
            summary.push(CellSummary {
                layer,
                dim,
                auc: Aggregate::from_results(results),
            });
        }
    }
    Ok(SweepResult {
        layers: layers.to_vec(),
        dims: cfg.dims.clone(),
        seeds: cfg.seeds.clone(),
        num_folds: n_folds,
        cells,
        summary,
    })
}

fn eval_dims(
    x: &DMatrix<f64>,
    labels: &[Label],
    fold: &super::Fold,
    dims: &[usize],
    c: f64,
) -> Vec<Result<f64>> {
    let xtr = select_rows(x, &fold.train);
    let ytr = select(labels, &fold.train);
    let xte = select_rows(x, &fold.test);
    let yte = select(labels, &fold.test);
    match train_pls_probes(&xtr, &ytr, dims, c) {
        Err(e) => {
            let msg = e.to_string();
            dims.iter().map(|_| Err(Error::Degenerate(msg.clone()))).collect()
        }
        Ok(models) => models
            .into_iter()
            .map(|m| {
                let s = m?.decision_function(&xte)?;
                auc(&s, &yte)
            })
            .collect(),
    }
}
