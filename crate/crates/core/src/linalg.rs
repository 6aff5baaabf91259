//! Small dense helpers shared across modules.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;

/// Row-major copy of a matrix for cache-friendly neighbor scans.
#[derive(Debug, Clone)]
pub struct Rows {
    data: Vec<f64>,
    dim: usize,
}

impl Rows {
    pub fn from_matrix(x: &DMatrix<f64>) -> Self {
        let (n, d) = x.shape();
        let mut data = Vec::with_capacity(n * d);
        for i in 0..n {
            data.extend(x.row(i).iter());
        }
        Rows { data, dim: d }
    }

    pub fn len(&self) -> usize {
        if self.dim == 0 {
            0
        } else {
            self.data.len() / self.dim
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.dim..(i + 1) * self.dim]
    }
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    sq_dist(a, b).sqrt()
}

pub fn select_rows(x: &DMatrix<f64>, idx: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(idx.len(), x.ncols(), |i, j| x[(idx[i], j)])
}

pub fn select<T: Copy>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i]).collect()
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Variance with `ddof` delta degrees of freedom (two-pass).
pub fn variance(v: &[f64], ddof: usize) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() - ddof) as f64
}

/// Population standard deviation; zero for fewer than two values.
pub fn pop_std(v: &[f64]) -> f64 {
    if v.len() < 2 {
        0.0
    } else {
        variance(v, 0).sqrt()
    }
}

/// `k` orthonormal Gaussian directions in `d` dimensions, orthogonal to the
/// columns of `against` (assumed orthonormal) when given.
pub fn random_orthonormal<R: Rng + ?Sized>(
    d: usize,
    k: usize,
    against: Option<&DMatrix<f64>>,
    rng: &mut R,
) -> DMatrix<f64> {
    let mut basis: Vec<DVector<f64>> = against
        .map(|m| m.column_iter().map(|c| c.into_owned()).collect())
        .unwrap_or_default();
    let fixed = basis.len();
    assert!(fixed + k <= d, "cannot draw {k} directions orthogonal to {fixed} in {d} dimensions");
    let mut out = Vec::with_capacity(k);
    while out.len() < k {
        let mut v = DVector::from_fn(d, |_, _| rng.sample::<f64, _>(StandardNormal));
        // two Gram-Schmidt passes for numerical orthogonality
        for _ in 0..2 {
            for b in basis.iter() {
                let c = b.dot(&v);
                v.axpy(-c, b, 1.0);
            }
        }
        let norm = v.norm();
        if norm > 1e-8 {
            v /= norm;
            basis.push(v.clone());
            out.push(v);
        }
    }
    debug_assert_eq!(basis.len(), fixed + k);
    if out.is_empty() {
        return DMatrix::zeros(d, 0);
    }
    DMatrix::from_columns(&out)
}

/// Index of the entry with largest magnitude (first on ties).
pub fn argmax_abs(v: &DVector<f64>) -> usize {
    let mut best = 0;
    for i in 1..v.len() {
        if v[i].abs() > v[best].abs() {
            best = i;
        }
    }
    best
}
