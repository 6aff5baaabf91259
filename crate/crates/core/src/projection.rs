//! Preprocessing fitted on training rows only: per-dimension
//! standardization, single-target PLS, and PCA.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::linalg::argmax_abs;

pub const SCALE_FLOOR: f64 = 1e-8;

fn check_dim(expected: usize, actual: usize) -> Result<()> {
    if expected != actual {
        return Err(Error::DimMismatch { expected, actual });
    }
    Ok(())
}

/// Per-column mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct Standardizer {
    pub mean: DVector<f64>,
    /// Standard deviation floored at [`SCALE_FLOOR`].
    pub scale: DVector<f64>,
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>) -> Result<Self> {
        let n = x.nrows();
        if n < 2 {
            return Err(Error::Degenerate(format!(
                "standardizer needs at least 2 rows, got {n}"
            )));
        }
        let mean = DVector::from_iterator(x.ncols(), x.column_iter().map(|c| c.mean()));
        let scale = DVector::from_iterator(
            x.ncols(),
            x.column_iter().zip(mean.iter()).map(|(c, m)| {
                let var = c.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n as f64;
                var.sqrt().max(SCALE_FLOOR)
            }),
        );
        Ok(Standardizer { mean, scale })
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn apply(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.dim(), x.ncols())?;
        Ok(DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
            (x[(i, j)] - self.mean[j]) / self.scale[j]
        }))
    }
}

/// Single-target partial least squares (PLS1, NIPALS with X deflation).
///
/// Scores are computed as `Z R` with `Z` the standardized input and
/// `R = W (PᵀW)⁻¹`, so the first `k` columns of a fit at `K >= k`
/// components are exactly the `k`-component model (see [`truncate`]).
///
/// [`truncate`]: PlsProjector::truncate
#[derive(Debug, Clone, PartialEq)]
pub struct PlsProjector {
    pub standardizer: Standardizer,
    /// `d x k`, unit columns, largest-magnitude entry positive.
    pub x_weights: DMatrix<f64>,
    pub x_loadings: DMatrix<f64>,
    /// `d x k` map from standardized inputs to scores.
    pub rotation: DMatrix<f64>,
}

pub fn check_both_classes(y: &[f64]) -> Result<()> {
    let pos = y.iter().filter(|&&v| v > 0.5).count();
    if pos == 0 || pos == y.len() {
        return Err(Error::SingleClass);
    }
    Ok(())
}

impl PlsProjector {
    pub fn fit(x: &DMatrix<f64>, y: &[f64], k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if y.len() != n {
            return Err(Error::ShapeMismatch(format!("{n} rows but {} targets", y.len())));
        }
        check_both_classes(y)?;
        let max_k = d.min(n.saturating_sub(1));
        if k == 0 || k > max_k {
            return Err(Error::OutOfRange {
                what: "PLS components",
                detail: format!("k = {k}, must be in 1..={max_k}"),
            });
        }
        let standardizer = Standardizer::fit(x)?;
        let mut xr = standardizer.apply(x)?;
        let ybar = y.iter().sum::<f64>() / n as f64;
        let yc = DVector::from_iterator(n, y.iter().map(|v| v - ybar));

        let mut weights = DMatrix::zeros(d, k);
        let mut loadings = DMatrix::zeros(d, k);
        for comp in 0..k {
            let (mut w, mut t) = nipals_component(&xr, &yc, comp)?;
            let lead = argmax_abs(&w);
            if w[lead] < 0.0 {
                w.neg_mut();
                t.neg_mut();
            }
            let tt = t.dot(&t);
            let p = xr.tr_mul(&t) / tt;
            xr.ger(-1.0, &t, &p, 1.0);
            weights.set_column(comp, &w);
            loadings.set_column(comp, &p);
        }
        let rotation = rotation(&weights, &loadings)?;
        Ok(PlsProjector {
            standardizer,
            x_weights: weights,
            x_loadings: loadings,
            rotation,
        })
    }

    pub fn n_components(&self) -> usize {
        self.x_weights.ncols()
    }

    /// The model restricted to its first `k` components.
    pub fn truncate(&self, k: usize) -> Result<Self> {
        if k == 0 || k > self.n_components() {
            return Err(Error::OutOfRange {
                what: "PLS components",
                detail: format!("cannot truncate {} components to {k}", self.n_components()),
            });
        }
        let weights = self.x_weights.columns(0, k).into_owned();
        let loadings = self.x_loadings.columns(0, k).into_owned();
        let rotation = rotation(&weights, &loadings)?;
        Ok(PlsProjector {
            standardizer: self.standardizer.clone(),
            x_weights: weights,
            x_loadings: loadings,
            rotation,
        })
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        Ok(self.standardizer.apply(x)? * &self.rotation)
    }
}

/// One PLS1 component. With a single target the NIPALS inner loop reaches
/// its fixed point `w ∝ Xᵀy` on the first pass, so it is taken directly;
/// iterating instead lets the sign of `yᵀt` flip on components whose
/// remaining covariance is at rounding level, and the loop never settles.
fn nipals_component(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    comp: usize,
) -> Result<(DVector<f64>, DVector<f64>)> {
    let mut w = x.tr_mul(y);
    let norm = w.norm();
    if !(norm > 1e-300) || !norm.is_finite() {
        return Err(Error::Degenerate(format!(
            "PLS component {} has no remaining covariance with the target",
            comp + 1
        )));
    }
    w /= norm;
    let t = x * &w;
    Ok((w, t))
}

fn rotation(weights: &DMatrix<f64>, loadings: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let ptw = loadings.tr_mul(weights);
    let inv = ptw
        .try_inverse()
        .ok_or_else(|| Error::Degenerate("PLS loadings are collinear".into()))?;
    Ok(weights * inv)
}

/// Principal components of centered data.
#[derive(Debug, Clone, PartialEq)]
pub struct PcaProjector {
    pub mean: DVector<f64>,
    /// `d x k` orthonormal columns.
    pub components: DMatrix<f64>,
    /// Non-increasing sample variances along the components.
    pub explained_variance: DVector<f64>,
}

impl PcaProjector {
    pub fn fit(x: &DMatrix<f64>, k: usize) -> Result<Self> {
        let (n, d) = x.shape();
        if k == 0 || k > d.min(n) {
            return Err(Error::OutOfRange {
                what: "PCA components",
                detail: format!("k = {k}, must be in 1..={}", d.min(n)),
            });
        }
        if n < 2 {
            return Err(Error::Degenerate("PCA needs at least 2 rows".into()));
        }
        let mean = DVector::from_iterator(d, x.column_iter().map(|c| c.mean()));
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= mean.transpose();
        }
        let cov = xc.tr_mul(&xc) / (n - 1) as f64;
        let eig = SymmetricEigen::new(cov);
        let mut order: Vec<usize> = (0..d).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
        let mut components = DMatrix::zeros(d, k);
        let mut explained = DVector::zeros(k);
        for (c, &idx) in order.iter().take(k).enumerate() {
            let mut v = eig.eigenvectors.column(idx).into_owned();
            if v[argmax_abs(&v)] < 0.0 {
                v.neg_mut();
            }
            components.set_column(c, &v);
            explained[c] = eig.eigenvalues[idx].max(0.0);
        }
        Ok(PcaProjector {
            mean,
            components,
            explained_variance: explained,
        })
    }

    pub fn n_components(&self) -> usize {
        self.components.ncols()
    }

    pub fn transform(&self, x: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        check_dim(self.mean.len(), x.ncols())?;
        let mut xc = x.clone();
        for mut row in xc.row_iter_mut() {
            row -= self.mean.transpose();
        }
        Ok(xc * &self.components)
    }

    /// `‖x − P Pᵀ(x−μ) − μ‖₂`.
    pub fn reconstruction_error(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.mean.len(), x.len())?;
        let xc = DVector::from_iterator(x.len(), x.iter().zip(self.mean.iter()).map(|(a, m)| a - m));
        let coords = self.components.tr_mul(&xc);
        Ok((xc - &self.components * coords).norm())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn standardizer_two_points() {
        let x = DMatrix::from_row_slice(2, 1, &[0.0, 2.0]);
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.mean[0], 1.0);
        assert_eq!(s.scale[0], 1.0);
        assert_eq!(s.apply(&x).unwrap().as_slice(), &[-1.0, 1.0]);
    }

    #[test]
    fn constant_column_maps_to_zero() {
        let x = DMatrix::from_row_slice(3, 2, &[5.0, 1.0, 5.0, 2.0, 5.0, 3.0]);
        let s = Standardizer::fit(&x).unwrap();
        assert_eq!(s.scale[0], SCALE_FLOOR);
        let z = s.apply(&x).unwrap();
        assert!(z.column(0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn pls_rejects_single_class_and_bad_k() {
        let x = DMatrix::from_fn(6, 3, |i, j| (i * 3 + j) as f64);
        assert!(matches!(
            PlsProjector::fit(&x, &[1.0; 6], 1),
            Err(Error::SingleClass)
        ));
        let y = [0.0, 1.0, 0.0, 1.0, 0.0, 1.0];
        assert!(PlsProjector::fit(&x, &y, 4).is_err());
        assert!(PlsProjector::fit(&x, &y, 0).is_err());
    }

    #[test]
    fn pca_exact_subspace_has_zero_error() {
        let x = DMatrix::from_fn(20, 4, |i, j| match j {
            0 => i as f64,
            1 => (i * i) as f64 * 0.1,
            2 => 2.0 * i as f64,
            _ => 1.0,
        });
        let p = PcaProjector::fit(&x, 2).unwrap();
        for i in 0..20 {
            let row: Vec<f64> = x.row(i).iter().copied().collect();
            assert!(p.reconstruction_error(&row).unwrap() < 1e-6);
        }
    }
}
