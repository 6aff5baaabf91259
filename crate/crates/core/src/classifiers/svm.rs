//! Soft-margin SVM trained by SMO with second-order working-set selection.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::store::Label;

pub const DEFAULT_C: f64 = 1.0;
const EPS: f64 = 1e-3;
const TAU: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Kernel {
    Linear,
    /// `exp(−γ‖a − b‖²)`.
    Rbf { gamma: f64 },
}

impl Kernel {
    fn eval(&self, a: &[f64], b: &[f64]) -> f64 {
        match self {
            Kernel::Linear => a.iter().zip(b).map(|(x, y)| x * y).sum(),
            Kernel::Rbf { gamma } => {
                let d2: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum();
                (-gamma * d2).exp()
            }
        }
    }
}

/// `1 / (n_features · Var(X))` over all entries of `x`.
pub fn default_gamma(x: &DMatrix<f64>) -> f64 {
    let n = x.len() as f64;
    let m = x.sum() / n;
    let var = x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
    if var > 0.0 {
        1.0 / (x.ncols() as f64 * var)
    } else {
        1.0
    }
}

#[derive(Debug, Clone)]
pub struct SvmModel {
    pub kernel: Kernel,
    /// Support vectors (rows) and their coefficients `α_i y_i`.
    support: Vec<Vec<f64>>,
    coef: Vec<f64>,
    pub rho: f64,
    pub iterations: usize,
}

fn rows(x: &DMatrix<f64>) -> Vec<Vec<f64>> {
    x.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl SvmModel {
    pub fn fit(x: &DMatrix<f64>, labels: &[Label], kernel: Kernel, c: f64) -> Result<Self> {
        let n = x.nrows();
        if labels.len() != n {
            return Err(Error::ShapeMismatch(format!("{n} rows but {} labels", labels.len())));
        }
        let pos = labels.iter().filter(|l| l.is_correct()).count();
        if pos == 0 || pos == n {
            return Err(Error::SingleClass);
        }
        let xs = rows(x);
        let y: Vec<f64> = labels.iter().map(|l| if l.is_correct() { 1.0 } else { -1.0 }).collect();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in i..n {
                let v = kernel.eval(&xs[i], &xs[j]);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        let q = |i: usize, j: usize| y[i] * y[j] * k[i * n + j];

        let mut alpha = vec![0.0; n];
        let mut grad = vec![-1.0; n];
        let max_iter = (100 * n).max(10_000_000);
        let mut iter = 0;
        let in_up = |a: f64, yt: f64| (yt > 0.0 && a < c) || (yt < 0.0 && a > 0.0);
        let in_low = |a: f64, yt: f64| (yt < 0.0 && a < c) || (yt > 0.0 && a > 0.0);
        loop {
            let mut gmax = f64::NEG_INFINITY;
            let mut i_sel = usize::MAX;
            for t in 0..n {
                if in_up(alpha[t], y[t]) && -y[t] * grad[t] >= gmax {
                    if -y[t] * grad[t] > gmax || i_sel == usize::MAX {
                        gmax = -y[t] * grad[t];
                        i_sel = t;
                    }
                }
            }
            let mut gmin = f64::INFINITY;
            let mut j_sel = usize::MAX;
            let mut best = f64::INFINITY;
            for t in 0..n {
                if !in_low(alpha[t], y[t]) {
                    continue;
                }
                let v = -y[t] * grad[t];
                gmin = gmin.min(v);
                if i_sel != usize::MAX {
                    let b = gmax - v;
                    if b > 0.0 {
                        let mut a = k[i_sel * n + i_sel] + k[t * n + t] - 2.0 * k[i_sel * n + t];
                        if a <= 0.0 {
                            a = TAU;
                        }
                        let obj = -b * b / a;
                        if obj < best {
                            best = obj;
                            j_sel = t;
                        }
                    }
                }
            }
            if gmax - gmin < EPS || i_sel == usize::MAX || j_sel == usize::MAX {
                break;
            }
            if iter >= max_iter {
                return Err(Error::NoConvergence {
                    iterations: iter,
                    residual: gmax - gmin,
                });
            }
            iter += 1;
            let (i, j) = (i_sel, j_sel);
            let (ai_old, aj_old) = (alpha[i], alpha[j]);
            let mut quad = k[i * n + i] + k[j * n + j] - 2.0 * k[i * n + j];
            if quad <= 0.0 {
                quad = TAU;
            }
            if y[i] != y[j] {
                let delta = (-grad[i] - grad[j]) / quad;
                let diff = alpha[i] - alpha[j];
                alpha[i] += delta;
                alpha[j] += delta;
                if diff > 0.0 {
                    if alpha[j] < 0.0 {
                        alpha[j] = 0.0;
                        alpha[i] = diff;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = -diff;
                }
                if diff > 0.0 {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = c - diff;
                    }
                } else if alpha[j] > c {
                    alpha[j] = c;
                    alpha[i] = c + diff;
                }
            } else {
                let delta = (grad[i] - grad[j]) / quad;
                let sum = alpha[i] + alpha[j];
                alpha[i] -= delta;
                alpha[j] += delta;
                if sum > c {
                    if alpha[i] > c {
                        alpha[i] = c;
                        alpha[j] = sum - c;
                    }
                } else if alpha[j] < 0.0 {
                    alpha[j] = 0.0;
                    alpha[i] = sum;
                }
                if sum > c {
                    if alpha[j] > c {
                        alpha[j] = c;
                        alpha[i] = sum - c;
                    }
                } else if alpha[i] < 0.0 {
                    alpha[i] = 0.0;
                    alpha[j] = sum;
                }
            }
            let (dai, daj) = (alpha[i] - ai_old, alpha[j] - aj_old);
            for t in 0..n {
                grad[t] += q(t, i) * dai + q(t, j) * daj;
            }
        }

        // offset from free vectors, or the midpoint of the feasible interval
        let mut free_sum = 0.0;
        let mut free = 0usize;
        let mut ub = f64::INFINITY;
        let mut lb = f64::NEG_INFINITY;
        for t in 0..n {
            let yg = y[t] * grad[t];
            if alpha[t] > 0.0 && alpha[t] < c {
                free_sum += yg;
                free += 1;
            } else if (alpha[t] >= c && y[t] < 0.0) || (alpha[t] <= 0.0 && y[t] > 0.0) {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        }
        let rho = if free > 0 {
            free_sum / free as f64
        } else {
            (ub + lb) / 2.0
        };

        let mut support = Vec::new();
        let mut coef = Vec::new();
        for t in 0..n {
            if alpha[t] > 0.0 {
                support.push(xs[t].clone());
                coef.push(alpha[t] * y[t]);
            }
        }
        Ok(SvmModel {
            kernel,
            support,
            coef,
            rho,
            iterations: iter,
        })
    }

    pub fn num_support(&self) -> usize {
        self.support.len()
    }

    /// Signed margin `Σ α_i y_i K(x_i, x) − ρ` per row.
    pub fn decision_function(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        let dim = self.support.first().map_or(x.ncols(), |s| s.len());
        if x.ncols() != dim {
            return Err(Error::DimMismatch {
                expected: dim,
                actual: x.ncols(),
            });
        }
        let xs = rows(x);
        Ok(crate::exec::map(&xs, |r| {
            self.support
                .iter()
                .zip(&self.coef)
                .map(|(s, a)| a * self.kernel.eval(s, r))
                .sum::<f64>()
                - self.rho
        }))
    }

    /// Primal weight vector; only defined for the linear kernel.
    pub fn linear_weights(&self) -> Option<DVector<f64>> {
        if self.kernel != Kernel::Linear {
            return None;
        }
        let dim = self.support.first()?.len();
        let mut w = DVector::zeros(dim);
        for (s, a) in self.support.iter().zip(&self.coef) {
            for (wj, sj) in w.iter_mut().zip(s) {
                *wj += a * sj;
            }
        }
        Some(w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separable_points_are_classified() {
        let x = DMatrix::from_row_slice(6, 2, &[0.0, 0.0, 1.0, 0.0, 0.0, 1.0, 3.0, 3.0, 4.0, 3.0, 3.0, 4.0]);
        let labels: Vec<Label> = [0, 0, 0, 1, 1, 1].iter().map(|&v| Label::try_from(v as u8).unwrap()).collect();
        for kernel in [Kernel::Linear, Kernel::Rbf { gamma: default_gamma(&x) }] {
            let m = SvmModel::fit(&x, &labels, kernel, DEFAULT_C).unwrap();
            let f = m.decision_function(&x).unwrap();
            for (v, l) in f.iter().zip(&labels) {
                assert_eq!(*v > 0.0, l.is_correct(), "{kernel:?}: {f:?}");
            }
        }
    }
}
