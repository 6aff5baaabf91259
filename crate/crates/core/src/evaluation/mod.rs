//! Cross-validation harness: splitters, sweeps over layers and PLS sizes,
//! and the protocol-level experiments built on them.

pub mod folds;
pub mod protocols;
pub mod sweep;

use nalgebra::DMatrix;

use crate::classifiers::{fit_method, Method, Scorer};
use crate::error::Result;
use crate::linalg::{select, select_rows};
use crate::probe::{auc, labels_to_f64, train_probe, Preprocess, ProbeModel, Projector};
use crate::store::Label;

pub use folds::{make_folds, Fold, FoldPlan, LeakViolation, Protocol, DEFAULT_SEEDS};
pub use protocols::*;
pub use sweep::{dimension_sweep, layer_sweep, CellRecord, CellSummary, SweepConfig, SweepResult};

/// Mean and population standard deviation of successful cells; failures
/// are counted, not dropped silently.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub values: Vec<f64>,
    pub failed: usize,
}

impl Aggregate {
    pub fn from_results<I: IntoIterator<Item = Result<f64>>>(cells: I) -> Self {
        let mut values = Vec::new();
        let mut failed = 0;
        for c in cells {
            match c {
                Ok(v) => values.push(v),
                Err(e) => {
                    log::warn!("cell failed: {e}");
                    failed += 1;
                }
            }
        }
        Self::from_values(values, failed)
    }

    pub fn from_values(values: Vec<f64>, failed: usize) -> Self {
        let (mean, std) = if values.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            (crate::linalg::mean(&values), crate::linalg::pop_std(&values))
        };
        Aggregate {
            mean,
            std,
            values,
            failed,
        }
    }
}

/// Fits `pre` + probe on the training rows of `fold` only.
pub fn fit_on_fold(x: &DMatrix<f64>, labels: &[Label], fold: &Fold, pre: Preprocess, c: f64) -> Result<ProbeModel> {
    train_probe(&select_rows(x, &fold.train), &select(labels, &fold.train), pre, c)
}

/// Fits `pre` + probe on the training rows and returns the AUC on the test
/// rows.
pub fn holdout_auc(
    x: &DMatrix<f64>,
    labels: &[Label],
    fold: &Fold,
    pre: Preprocess,
    c: f64,
) -> Result<f64> {
    let model = fit_on_fold(x, labels, fold, pre, c)?;
    let s = model.decision_function(&select_rows(x, &fold.test))?;
    auc(&s, &select(labels, &fold.test))
}

/// A classifier fit in a PLS space learned from one training fold.
pub struct FoldClassifier {
    pub projector: Projector,
    pub scorer: Box<dyn Scorer>,
}

impl FoldClassifier {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label], fold: &Fold, method: Method, pls_dim: usize) -> Result<Self> {
        let xtr = select_rows(x, &fold.train);
        let ytr = select(labels, &fold.train);
        let projector = Projector::fit(&xtr, &labels_to_f64(&ytr), Preprocess::Pls(pls_dim))?;
        let scorer = fit_method(method, &projector.transform(&xtr)?, &ytr)?;
        Ok(FoldClassifier { projector, scorer })
    }

    /// Scores raw rows.
    pub fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.scorer.score(&self.projector.transform(x)?)
    }
}
