//! L2-regularized logistic-regression probes and the preprocessing chain
//! they are trained behind.

pub mod metrics;

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::projection::{check_both_classes, PlsProjector, Standardizer};
use crate::store::Label;

pub use metrics::{auc, cohens_d, pearson_r, spearman, welch_t, WelchTest};

/// Inverse regularization strength used throughout.
pub const DEFAULT_C: f64 = 0.1;

const GRAD_TOL: f64 = 1e-6;
const MAX_ITER: usize = 1000;

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Logistic regression minimizing mean cross-entropy plus
/// `‖w‖² / (2 C N)`; the bias is not penalized.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticProbe {
    pub weights: DVector<f64>,
    pub bias: f64,
    pub c: f64,
    pub iterations: usize,
    pub grad_norm: f64,
}

fn objective(x: &DMatrix<f64>, y: &[f64], w: &DVector<f64>, b: f64, c: f64) -> f64 {
    let n = x.nrows() as f64;
    let z = x * w;
    let ce: f64 = z
        .iter()
        .zip(y)
        .map(|(&zi, &yi)| softplus(zi + b) - yi * (zi + b))
        .sum();
    ce / n + w.norm_squared() / (2.0 * c * n)
}

/// Newton's method with backtracking from a zero start; stops when the
/// gradient norm drops below 1e-6 or after 1000 iterations.
pub fn fit_logistic(x: &DMatrix<f64>, y: &[f64], c: f64) -> Result<LogisticProbe> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::ShapeMismatch(format!("{n} rows but {} targets", y.len())));
    }
    if !(c > 0.0 && c.is_finite()) {
        return Err(Error::InvalidConfig(format!("C must be positive, got {c}")));
    }
    check_both_classes(y)?;
    let nf = n as f64;
    let ridge = 1.0 / (c * nf);

    let mut w = DVector::zeros(d);
    let mut b = 0.0;
    let mut f = objective(x, y, &w, b, c);
    let mut grad_norm = f64::INFINITY;
    let mut iterations = 0;
    while iterations < MAX_ITER {
        let z = x * &w;
        let p: Vec<f64> = z.iter().map(|&zi| sigmoid(zi + b)).collect();
        let resid = DVector::from_iterator(n, p.iter().zip(y).map(|(pi, yi)| pi - yi));
        let gw = x.tr_mul(&resid) / nf + &w * ridge;
        let gb = resid.sum() / nf;
        grad_norm = (gw.norm_squared() + gb * gb).sqrt();
        if grad_norm < GRAD_TOL {
            break;
        }
        iterations += 1;

        // Hessian of the augmented system [w; b]
        let s: Vec<f64> = p.iter().map(|pi| (pi * (1.0 - pi)).sqrt()).collect();
        let mut xa = DMatrix::zeros(n, d + 1);
        for i in 0..n {
            for j in 0..d {
                xa[(i, j)] = x[(i, j)] * s[i];
            }
            xa[(i, d)] = s[i];
        }
        let mut h = xa.tr_mul(&xa) / nf;
        for j in 0..d {
            h[(j, j)] += ridge;
        }
        let mut g = DVector::zeros(d + 1);
        g.rows_mut(0, d).copy_from(&gw);
        g[d] = gb;
        let step = match h.clone().cholesky() {
            Some(ch) => ch.solve(&g),
            None => {
                h[(d, d)] += 1e-12;
                h.lu()
                    .solve(&g)
                    .ok_or_else(|| Error::Degenerate("singular Newton system".into()))?
            }
        };
        let dw = step.rows(0, d).into_owned();
        let db = step[d];
        let slope = g.dot(&step);
        let mut t = 1.0;
        loop {
            let w_new = &w - &dw * t;
            let b_new = b - db * t;
            let f_new = objective(x, y, &w_new, b_new, c);
            if f_new <= f - 1e-4 * t * slope || t < 1e-10 {
                w = w_new;
                b = b_new;
                f = f_new;
                break;
            }
            t *= 0.5;
        }
    }
    if !(w.iter().all(|v| v.is_finite()) && b.is_finite()) {
        return Err(Error::Degenerate("probe parameters became non-finite".into()));
    }
    Ok(LogisticProbe {
        weights: w,
        bias: b,
        c,
        iterations,
        grad_norm,
    })
}

impl LogisticProbe {
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.weights.len() {
            return Err(Error::DimMismatch {
                expected: self.weights.len(),
                actual: x.ncols(),
            });
        }
        Ok((x * &self.weights).iter().map(|z| z + self.bias).collect())
    }

    /// Mean log-likelihood of `y` under the model.
    pub fn log_likelihood(&self, x: &DMatrix<f64>, y: &[f64]) -> Result<f64> {
        let z = self.decision_function(x)?;
        Ok(z.iter().zip(y).map(|(&zi, &yi)| yi * zi - softplus(zi)).sum::<f64>() / y.len() as f64)
    }
}

/// Maps `z` to a probability strictly inside (0, 1).
pub fn probability(z: f64) -> f64 {
    sigmoid(z).clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON / 2.0)
}

/// Preprocessing applied before the probe.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Preprocess {
    Standardize,
    /// Standardize then project onto this many PLS components.
    Pls(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Projector {
    Standardize(Standardizer),
    Pls(PlsProjector),
}

impl Projector {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], pre: Preprocess) -> Result<Self> {
        match pre {
            Preprocess::Standardize => Ok(Projector::Standardize(Standardizer::fit(x)?)),
            Preprocess::Pls(k) => Ok(Projector::Pls(PlsProjector::fit(x, y, k)?)),
        }
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        match self {
            Projector::Standardize(s) => s.apply(x),
            Projector::Pls(p) => p.transform(x),
        }
    }

    pub fn input_dim(&self) -> usize {
        self.standardizer().dim()
    }

    pub fn output_dim(&self) -> usize {
        match self {
            Projector::Standardize(s) => s.dim(),
            Projector::Pls(p) => p.n_components(),
        }
    }

    pub fn standardizer(&self) -> &Standardizer {
        match self {
            Projector::Standardize(s) => s,
            Projector::Pls(p) => &p.standardizer,
        }
    }

    /// Pulls a linear functional `v` on the projected space back to raw
    /// inputs: returns `(u, c)` with `v·transform(x) = u·x + c`.
    pub fn pull_back(&self, v: &DVector<f64>) -> (DVector<f64>, f64) {
        let s = self.standardizer();
        let in_std = match self {
            Projector::Standardize(_) => v.clone(),
            Projector::Pls(p) => &p.rotation * v,
        };
        let u = in_std.component_div(&s.scale);
        let c = -u.dot(&s.mean);
        (u, c)
    }
}

/// A probe together with the preprocessing it was trained behind.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeModel {
    pub projector: Projector,
    pub probe: LogisticProbe,
    /// Layer the probe was trained on, when known.
    pub layer_index: Option<usize>,
}

pub fn labels_to_f64(labels: &[Label]) -> Vec<f64> {
    labels.iter().map(|l| l.as_f64()).collect()
}

/// Fits the preprocessing and the probe on `(x, labels)`.
pub fn train_probe(
    x: &DMatrix<f64>,
    labels: &[Label],
    pre: Preprocess,
    c: f64,
) -> Result<ProbeModel> {
    let y = labels_to_f64(labels);
    let projector = Projector::fit(x, &y, pre)?;
    let z = projector.transform(x)?;
    let probe = fit_logistic(&z, &y, c)?;
    Ok(ProbeModel {
        projector,
        probe,
        layer_index: None,
    })
}

/// Trains probes at several PLS sizes from a single PLS fit at the largest
/// size, exploiting the nesting of PLS components.
pub fn train_pls_probes(
    x: &DMatrix<f64>,
    labels: &[Label],
    dims: &[usize],
    c: f64,
) -> Result<Vec<Result<ProbeModel>>> {
    let y = labels_to_f64(labels);
    let max_k = dims.iter().copied().max().unwrap_or(0);
    let full = PlsProjector::fit(x, &y, max_k)?;
    let z_full = full.transform(x)?;
    Ok(dims
        .iter()
        .map(|&k| {
            let pls = full.truncate(k)?;
            // the first k score columns of a nested fit are the k-component scores
            let z = if k == max_k {
                z_full.clone()
            } else {
                pls.transform(x)?
            };
            let probe = fit_logistic(&z, &y, c)?;
            Ok(ProbeModel {
                projector: Projector::Pls(pls),
                probe,
                layer_index: None,
            })
        })
        .collect())
}

impl ProbeModel {
    pub fn input_dim(&self) -> usize {
        self.projector.input_dim()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.projector.transform(x)
    }

    /// `wᵀ·transform(x) + b` per row.
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        self.probe.decision_function(&self.transform(x)?)
    }

    /// `σ(wᵀ·transform(x) + b)` per row, strictly inside (0, 1).
    pub fn score(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        Ok(self
            .decision_function(x)?
            .into_iter()
            .map(probability)
            .collect())
    }

    /// The equivalent affine probe on raw activations: `(u, c)` with
    /// `decision_function(x) = u·x + c`.
    pub fn raw_direction(&self) -> (DVector<f64>, f64) {
        let (u, c) = self.projector.pull_back(&self.probe.weights);
        (u, c + self.probe.bias)
    }
}
