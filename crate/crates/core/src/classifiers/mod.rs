//! Geometric classifiers compared against the linear probe, plus the
//! centroid confidence score. All scorers return "higher = more likely
//! correct" and are meant to run in a projected (low-dimensional) space.

pub mod hull;
pub mod svm;
pub mod unsupervised;

use std::fmt;
use std::str::FromStr;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{sq_dist, Rows};
use crate::probe::{fit_logistic, labels_to_f64, sigmoid, LogisticProbe, DEFAULT_C};
use crate::store::Label;

pub use hull::hull_distance;
pub use svm::{Kernel, SvmModel};

pub const KNN_K: usize = 10;
pub const KDE_BANDWIDTH_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Method {
    Linear,
    Centroid,
    Mahalanobis,
    Nch,
    Knn,
    SvmLinear,
    SvmRbf,
    Kde,
    Ensemble,
}

impl Method {
    pub const ALL: [Method; 9] = [
        Method::Linear,
        Method::Centroid,
        Method::Mahalanobis,
        Method::Nch,
        Method::Knn,
        Method::SvmLinear,
        Method::SvmRbf,
        Method::Kde,
        Method::Ensemble,
    ];

    /// Members averaged by [`Method::Ensemble`].
    pub const ENSEMBLE_MEMBERS: [Method; 4] =
        [Method::Centroid, Method::Mahalanobis, Method::Knn, Method::Kde];

    pub fn name(self) -> &'static str {
        match self {
            Method::Linear => "linear",
            Method::Centroid => "centroid",
            Method::Mahalanobis => "mahalanobis",
            Method::Nch => "nch",
            Method::Knn => "knn10",
            Method::SvmLinear => "svm_linear",
            Method::SvmRbf => "svm_rbf",
            Method::Kde => "kde",
            Method::Ensemble => "ensemble",
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidConfig(format!("unknown classifier method '{s}'")))
    }
}

pub trait Scorer: Send + Sync {
    /// One score per row; larger means more likely correct.
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>>;
}

fn split_classes(x: &DMatrix<f64>, labels: &[Label]) -> Result<(Vec<usize>, Vec<usize>)> {
    if labels.len() != x.nrows() {
        return Err(Error::ShapeMismatch(format!(
            "{} rows but {} labels",
            x.nrows(),
            labels.len()
        )));
    }
    let (pos, neg): (Vec<usize>, Vec<usize>) = (0..labels.len()).partition(|&i| labels[i].is_correct());
    if pos.is_empty() || neg.is_empty() {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

fn class_mean(x: &DMatrix<f64>, idx: &[usize]) -> DVector<f64> {
    let mut m = DVector::zeros(x.ncols());
    for &i in idx {
        m += x.row(i).transpose();
    }
    m / idx.len() as f64
}

fn check_cols(expected: usize, x: &DMatrix<f64>) -> Result<()> {
    if x.ncols() != expected {
        return Err(Error::DimMismatch {
            expected,
            actual: x.ncols(),
        });
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct CentroidModel {
    pub mu_correct: DVector<f64>,
    pub mu_incorrect: DVector<f64>,
}

impl CentroidModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label]) -> Result<Self> {
        let (pos, neg) = split_classes(x, labels)?;
        Ok(CentroidModel {
            mu_correct: class_mean(x, &pos),
            mu_incorrect: class_mean(x, &neg),
        })
    }

    /// `‖x − μ_incorrect‖ − ‖x − μ_correct‖`.
    pub fn margin(&self, x: &[f64]) -> f64 {
        let dc = sq_dist(x, self.mu_correct.as_slice()).sqrt();
        let di = sq_dist(x, self.mu_incorrect.as_slice()).sqrt();
        di - dc
    }

    /// `e^{−d_c} / (e^{−d_c} + e^{−d_i})`.
    pub fn confidence(&self, x: &[f64]) -> f64 {
        sigmoid(self.margin(x))
    }
}

impl Scorer for CentroidModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(self.mu_correct.len(), x)?;
        Ok(x.row_iter()
            .map(|r| self.margin(r.transpose().as_slice()))
            .collect())
    }
}

/// Class means with a shared (pooled) covariance.
#[derive(Debug, Clone)]
pub struct MahalanobisModel {
    pub mu_correct: DVector<f64>,
    pub mu_incorrect: DVector<f64>,
    pub ridge: f64,
    chol: nalgebra::Cholesky<f64, nalgebra::Dyn>,
}

impl MahalanobisModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label]) -> Result<Self> {
        let (pos, neg) = split_classes(x, labels)?;
        let mu_c = class_mean(x, &pos);
        let mu_i = class_mean(x, &neg);
        let d = x.ncols();
        let mut scatter = DMatrix::zeros(d, d);
        for (idx, mu) in [(&pos, &mu_c), (&neg, &mu_i)] {
            for &i in idx.iter() {
                let r = x.row(i).transpose() - mu;
                scatter.ger(1.0, &r, &r, 1.0);
            }
        }
        let dof = (x.nrows() as f64 - 2.0).max(1.0);
        let cov = scatter / dof;
        Self::from_parts(mu_c, mu_i, cov)
    }

    /// Builds the model from explicit means and covariance; a ridge of
    /// `1e-6 · trace / d` (or `1e-6` for a zero trace) is always added.
    pub fn from_parts(mu_correct: DVector<f64>, mu_incorrect: DVector<f64>, mut cov: DMatrix<f64>) -> Result<Self> {
        let d = cov.nrows();
        let trace = cov.trace();
        let ridge = if trace > 0.0 { 1e-6 * trace / d as f64 } else { 1e-6 };
        for j in 0..d {
            cov[(j, j)] += ridge;
        }
        let chol = cov
            .cholesky()
            .ok_or_else(|| Error::Degenerate("covariance not positive definite after ridge".into()))?;
        Ok(MahalanobisModel {
            mu_correct,
            mu_incorrect,
            ridge,
            chol,
        })
    }

    fn sq_mahalanobis(&self, x: &DVector<f64>, mu: &DVector<f64>) -> f64 {
        let diff = x - mu;
        let l = self.chol.l();
        let z = l
            .solve_lower_triangular(&diff)
            .expect("Cholesky factor has a positive diagonal");
        z.norm_squared()
    }

    /// `D²(x, μ_incorrect) − D²(x, μ_correct)`.
    pub fn margin(&self, x: &DVector<f64>) -> f64 {
        self.sq_mahalanobis(x, &self.mu_incorrect) - self.sq_mahalanobis(x, &self.mu_correct)
    }
}

impl Scorer for MahalanobisModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(self.mu_correct.len(), x)?;
        Ok(x.row_iter().map(|r| self.margin(&r.transpose())).collect())
    }
}

/// Nearest convex hull: per-class training points as hull vertices.
#[derive(Debug, Clone)]
pub struct HullModel {
    correct: DMatrix<f64>,
    incorrect: DMatrix<f64>,
}

impl HullModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label]) -> Result<Self> {
        let (pos, neg) = split_classes(x, labels)?;
        let cols = |idx: &[usize]| DMatrix::from_fn(x.ncols(), idx.len(), |r, c| x[(idx[c], r)]);
        Ok(HullModel {
            correct: cols(&pos),
            incorrect: cols(&neg),
        })
    }

    /// `dist(x, hull_incorrect) − dist(x, hull_correct)`.
    pub fn margin(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(hull_distance(&self.incorrect, x)? - hull_distance(&self.correct, x)?)
    }
}

impl Scorer for HullModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(self.correct.nrows(), x)?;
        let rows: Vec<DVector<f64>> = x.row_iter().map(|r| r.transpose()).collect();
        exec::map(&rows, |r| self.margin(r)).into_iter().collect()
    }
}

#[derive(Debug, Clone)]
pub struct KnnModel {
    rows: Rows,
    labels: Vec<Label>,
    pub k: usize,
}

impl KnnModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label], k: usize) -> Result<Self> {
        split_classes(x, labels)?;
        if k == 0 || k > x.nrows() {
            return Err(Error::OutOfRange {
                what: "neighbor count",
                detail: format!("k = {k} with {} training points", x.nrows()),
            });
        }
        Ok(KnnModel {
            rows: Rows::from_matrix(x),
            labels: labels.to_vec(),
            k,
        })
    }

    /// Fraction of correct labels among the `k` nearest training points;
    /// equal distances are ordered by training index.
    pub fn fraction_correct(&self, x: &[f64]) -> f64 {
        let mut d: Vec<(f64, usize)> = (0..self.rows.len())
            .map(|j| (sq_dist(x, self.rows.row(j)), j))
            .collect();
        let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
        if self.k < d.len() {
            d.select_nth_unstable_by(self.k - 1, cmp);
        }
        let hits = d[..self.k]
            .iter()
            .filter(|(_, j)| self.labels[*j].is_correct())
            .count();
        hits as f64 / self.k as f64
    }
}

impl Scorer for KnnModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(self.rows.dim(), x)?;
        let q = Rows::from_matrix(x);
        Ok(exec::map_range(q.len(), |i| self.fraction_correct(q.row(i))))
    }
}

/// Per-class product-Gaussian KDE with Scott's-rule bandwidths.
#[derive(Debug, Clone)]
pub struct KdeModel {
    correct: ClassKde,
    incorrect: ClassKde,
}

#[derive(Debug, Clone)]
struct ClassKde {
    rows: Rows,
    bandwidth: Vec<f64>,
    log_norm: f64,
}

impl ClassKde {
    fn fit(x: &DMatrix<f64>, idx: &[usize]) -> Self {
        let d = x.ncols();
        let n = idx.len();
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let bandwidth: Vec<f64> = (0..d)
            .map(|j| {
                let v: Vec<f64> = idx.iter().map(|&i| x[(i, j)]).collect();
                let sd = if n > 1 { crate::linalg::variance(&v, 1).sqrt() } else { 0.0 };
                (factor * sd).max(KDE_BANDWIDTH_FLOOR)
            })
            .collect();
        let sub = crate::linalg::select_rows(x, idx);
        let log_norm = -(n as f64).ln()
            - bandwidth.iter().map(|h| h.ln()).sum::<f64>()
            - 0.5 * d as f64 * (2.0 * std::f64::consts::PI).ln();
        ClassKde {
            rows: Rows::from_matrix(&sub),
            bandwidth,
            log_norm,
        }
    }

    fn log_density(&self, x: &[f64]) -> f64 {
        let exps: Vec<f64> = (0..self.rows.len())
            .map(|i| {
                -0.5 * self
                    .rows
                    .row(i)
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidth)
                    .map(|((a, b), h)| ((a - b) / h).powi(2))
                    .sum::<f64>()
            })
            .collect();
        let m = exps.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        m + exps.iter().map(|e| (e - m).exp()).sum::<f64>().ln() + self.log_norm
    }
}

impl KdeModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label]) -> Result<Self> {
        let (pos, neg) = split_classes(x, labels)?;
        Ok(KdeModel {
            correct: ClassKde::fit(x, &pos),
            incorrect: ClassKde::fit(x, &neg),
        })
    }

    /// `log p_correct(x) − log p_incorrect(x)`.
    pub fn log_ratio(&self, x: &[f64]) -> f64 {
        self.correct.log_density(x) - self.incorrect.log_density(x)
    }
}

impl Scorer for KdeModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        check_cols(self.correct.bandwidth.len(), x)?;
        let q = Rows::from_matrix(x);
        Ok(exec::map_range(q.len(), |i| self.log_ratio(q.row(i))))
    }
}

/// The logistic probe as a scorer on already-projected inputs.
impl Scorer for LogisticProbe {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.decision_function(x)
    }
}

pub struct SvmScorer(pub SvmModel);

impl Scorer for SvmScorer {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.0.decision_function(x)
    }
}

/// Mean of member scores after min-max normalization by each member's
/// training-score range.
pub struct EnsembleModel {
    members: Vec<(Box<dyn Scorer>, f64, f64)>,
}

impl EnsembleModel {
    pub fn new(members: Vec<Box<dyn Scorer>>, x_train: &DMatrix<f64>) -> Result<Self> {
        if members.is_empty() {
            return Err(Error::InvalidConfig("ensemble needs at least one member".into()));
        }
        let members = members
            .into_iter()
            .map(|m| {
                let s = m.score(x_train)?;
                let lo = s.iter().cloned().fold(f64::INFINITY, f64::min);
                let hi = s.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
                Ok((m, lo, hi))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(EnsembleModel { members })
    }
}

/// Min-max normalization with a flat range mapped to 0.5.
pub fn min_max(v: f64, lo: f64, hi: f64) -> f64 {
    if hi > lo {
        (v - lo) / (hi - lo)
    } else {
        0.5
    }
}

impl Scorer for EnsembleModel {
    fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let mut acc = vec![0.0; x.nrows()];
        for (m, lo, hi) in &self.members {
            for (a, s) in acc.iter_mut().zip(m.score(x)?) {
                *a += min_max(s, *lo, *hi);
            }
        }
        let k = self.members.len() as f64;
        Ok(acc.into_iter().map(|a| a / k).collect())
    }
}

/// Fits `method` on projected training data.
pub fn fit_method(method: Method, x: &DMatrix<f64>, labels: &[Label]) -> Result<Box<dyn Scorer>> {
    Ok(match method {
        Method::Linear => Box::new(fit_logistic(x, &labels_to_f64(labels), DEFAULT_C)?),
        Method::Centroid => Box::new(CentroidModel::fit(x, labels)?),
        Method::Mahalanobis => Box::new(MahalanobisModel::fit(x, labels)?),
        Method::Nch => Box::new(HullModel::fit(x, labels)?),
        Method::Knn => Box::new(KnnModel::fit(x, labels, KNN_K)?),
        Method::SvmLinear => Box::new(SvmScorer(SvmModel::fit(x, labels, Kernel::Linear, svm::DEFAULT_C)?)),
        Method::SvmRbf => {
            let gamma = svm::default_gamma(x);
            Box::new(SvmScorer(SvmModel::fit(x, labels, Kernel::Rbf { gamma }, svm::DEFAULT_C)?))
        }
        Method::Kde => Box::new(KdeModel::fit(x, labels)?),
        Method::Ensemble => {
            let members = Method::ENSEMBLE_MEMBERS
                .iter()
                .map(|&m| fit_method(m, x, labels))
                .collect::<Result<Vec<_>>>()?;
            Box::new(EnsembleModel::new(members, x)?)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lab(v: &[u8]) -> Vec<Label> {
        v.iter().map(|&b| Label::try_from(b).unwrap()).collect()
    }

    #[test]
    fn centroid_closed_form() {
        let m = CentroidModel {
            mu_correct: DVector::from_vec(vec![0.0, 0.0]),
            mu_incorrect: DVector::from_vec(vec![1.0, 0.0]),
        };
        assert_eq!(m.confidence(&[0.5, 3.0]), 0.5);
        assert!((m.confidence(&[0.0, 0.0]) - 1.0 / (1.0 + (-1f64).exp())).abs() < 1e-15);
    }

    #[test]
    fn mahalanobis_one_sample_per_class_is_finite() {
        let x = DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 2.0, 1.0, 1.0, 0.0]);
        let m = MahalanobisModel::fit(&x, &lab(&[1, 0])).unwrap();
        assert!(m.ridge > 0.0);
        assert!(m.score(&x).unwrap().iter().all(|v| v.is_finite()));
    }

    #[test]
    fn knn_k1_picks_nearest() {
        let x = DMatrix::from_row_slice(3, 1, &[0.0, 1.0, 5.0]);
        let m = KnnModel::fit(&x, &lab(&[0, 1, 1]), 1).unwrap();
        assert_eq!(m.fraction_correct(&[0.2]), 0.0);
        let m = KnnModel::fit(&x, &lab(&[1, 1, 0]), 2).unwrap();
        assert_eq!(m.fraction_correct(&[0.4]), 1.0);
    }

    #[test]
    fn knn_breaks_ties_by_index() {
        // both training points are at distance 1; the lower index wins
        let x = DMatrix::from_row_slice(2, 1, &[-1.0, 1.0]);
        let m = KnnModel::fit(&x, &lab(&[0, 1]), 1).unwrap();
        assert_eq!(m.fraction_correct(&[0.0]), 0.0);
        let m = KnnModel::fit(&x, &lab(&[1, 0]), 1).unwrap();
        assert_eq!(m.fraction_correct(&[0.0]), 1.0);
    }

    #[test]
    fn kde_symmetric_midpoint_is_zero() {
        let x = DMatrix::from_row_slice(4, 1, &[-2.0, -1.0, 1.0, 2.0]);
        let m = KdeModel::fit(&x, &lab(&[0, 0, 1, 1])).unwrap();
        assert!(m.log_ratio(&[0.0]).abs() < 1e-12);
    }

    #[test]
    fn method_names_round_trip() {
        for m in Method::ALL {
            assert_eq!(m.name().parse::<Method>().unwrap(), m);
        }
    }
}
