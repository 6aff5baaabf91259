//! Euclidean distance from a point to the convex hull of a finite set,
//! via Wolfe's minimum-norm-point algorithm.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

pub const MAX_ITER: usize = 10_000;
pub const GAP_TOL: f64 = 1e-6;

/// Distance from `x` to conv(columns of `vertices`).
pub fn hull_distance(vertices: &DMatrix<f64>, x: &DVector<f64>) -> Result<f64> {
    if vertices.nrows() != x.len() {
        return Err(Error::DimMismatch {
            expected: vertices.nrows(),
            actual: x.len(),
        });
    }
    if vertices.ncols() == 0 {
        return Err(Error::Degenerate("empty hull".into()));
    }
    let mut p = vertices.clone();
    for mut c in p.column_iter_mut() {
        c -= x;
    }
    Ok(min_norm_point(&p)?.norm())
}

/// Minimum-norm point of conv(columns of `p`).
pub fn min_norm_point(p: &DMatrix<f64>) -> Result<DVector<f64>> {
    let m = p.ncols();
    let sq: Vec<f64> = p.column_iter().map(|c| c.norm_squared()).collect();
    let scale = sq.iter().cloned().fold(1.0, f64::max);
    let tight = 1e-12 * scale;

    let start = (0..m).min_by(|&a, &b| sq[a].total_cmp(&sq[b])).expect("nonempty");
    let mut active = vec![start];
    let mut lambda = vec![1.0];
    let mut x = p.column(start).into_owned();
    let mut gap = f64::INFINITY;

    for _ in 0..MAX_ITER {
        // major step: vertex most aligned against x
        let proj = p.tr_mul(&x);
        let (j, pj) = proj
            .iter()
            .enumerate()
            .min_by(|a, b| a.1.total_cmp(b.1))
            .map(|(j, v)| (j, *v))
            .expect("nonempty");
        let xx = x.norm_squared();
        gap = xx - pj;
        if gap <= tight || xx <= tight {
            return Ok(x);
        }
        if active.contains(&j) {
            // no further progress possible numerically
            break;
        }
        active.push(j);
        lambda.push(0.0);

        // minor cycle: move to the affine minimizer, backing off to stay feasible
        loop {
            let mu = affine_min_norm(p, &active)?;
            if mu.iter().all(|&v| v > 1e-14) {
                lambda = mu;
                break;
            }
            let mut theta = 1.0f64;
            for (l, u) in lambda.iter().zip(&mu) {
                if *u <= 1e-14 && l - u > 0.0 {
                    theta = theta.min(l / (l - u));
                }
            }
            for (l, u) in lambda.iter_mut().zip(&mu) {
                *l += theta * (u - *l);
            }
            let mut k = 0;
            while k < active.len() {
                if lambda[k] <= 1e-14 {
                    active.remove(k);
                    lambda.remove(k);
                } else {
                    k += 1;
                }
            }
            let total: f64 = lambda.iter().sum();
            lambda.iter_mut().for_each(|l| *l /= total);
            if active.len() == 1 {
                lambda[0] = 1.0;
                break;
            }
        }
        x = DVector::zeros(p.nrows());
        for (&a, &l) in active.iter().zip(&lambda) {
            x.axpy(l, &p.column(a), 1.0);
        }
    }
    if gap <= GAP_TOL * scale {
        Ok(x)
    } else {
        Err(Error::NoConvergence {
            iterations: MAX_ITER,
            residual: gap,
        })
    }
}

/// Weights `μ` (summing to one) of the minimum-norm point in the affine
/// hull of the active columns.
fn affine_min_norm(p: &DMatrix<f64>, active: &[usize]) -> Result<Vec<f64>> {
    let s = active.len();
    let mut a = DMatrix::zeros(s + 1, s + 1);
    for (r, &i) in active.iter().enumerate() {
        for (c, &j) in active.iter().enumerate() {
            a[(r, c)] = p.column(i).dot(&p.column(j));
        }
        a[(r, s)] = 1.0;
        a[(s, r)] = 1.0;
    }
    let mut rhs = DVector::zeros(s + 1);
    rhs[s] = 1.0;
    let sol = a.clone().lu().solve(&rhs).or_else(|| {
        // nearly dependent active set: a tiny ridge keeps the system solvable
        let mut a = a;
        let eps = 1e-12 * (1..=s).map(|i| a[(i - 1, i - 1)]).fold(1.0, f64::max);
        for i in 0..s {
            a[(i, i)] += eps;
        }
        a.lu().solve(&rhs)
    });
    let sol = sol.ok_or_else(|| Error::Degenerate("singular affine system in hull solver".into()))?;
    Ok(sol.rows(0, s).iter().copied().collect())
}
