//! Intrinsic dimension (Levina-Bickel MLE), direction distances across
//! layers, and orthogonal Procrustes alignment.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{sq_dist, Rows};

pub const DEFAULT_K_MIN: usize = 5;
pub const DEFAULT_K_MAX: usize = 20;

#[derive(Debug, Clone, PartialEq)]
pub struct IdEstimate {
    /// `(k, mean over points of d̂_k)` for every `k` in range.
    pub per_k: Vec<(usize, f64)>,
    /// Mean of `per_k` values.
    pub estimate: f64,
    pub num_points: usize,
    /// Points skipped because a neighbor distance was zero.
    pub skipped: usize,
}

/// Sorted distances from row `i` to its `k` nearest other rows.
fn neighbor_dists(rows: &Rows, i: usize, k: usize) -> Vec<f64> {
    let xi = rows.row(i);
    let mut d: Vec<f64> = (0..rows.len())
        .filter(|&j| j != i)
        .map(|j| sq_dist(xi, rows.row(j)))
        .collect();
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, f64::total_cmp);
        d.truncate(k);
    }
    d.sort_by(f64::total_cmp);
    d.into_iter().map(f64::sqrt).collect()
}

/// `((1/(k−1)) Σ_{j<k} ln(T_k/T_j))⁻¹` from the sorted neighbor distances.
/// `None` when a distance is zero or all `k` distances coincide.
fn mle_at(t: &[f64], k: usize) -> Option<f64> {
    if t[0] <= 0.0 {
        return None;
    }
    let tk = t[k - 1];
    let s: f64 = t[..k - 1].iter().map(|tj| (tk / tj).ln()).sum();
    if s > 0.0 {
        Some((k - 1) as f64 / s)
    } else {
        None
    }
}

/// Levina-Bickel estimate averaged over points, then over `k_min..=k_max`.
pub fn intrinsic_dim_mle(x: &DMatrix<f64>, k_min: usize, k_max: usize) -> Result<IdEstimate> {
    let n = x.nrows();
    if k_min < 2 || k_min > k_max {
        return Err(Error::OutOfRange {
            what: "neighbor range",
            detail: format!("need 2 <= k_min <= k_max, got {k_min}..={k_max}"),
        });
    }
    if n <= k_max + 1 {
        return Err(Error::OutOfRange {
            what: "sample size",
            detail: format!("need more than {} points for k_max = {k_max}, got {n}", k_max + 1),
        });
    }
    let rows = Rows::from_matrix(x);
    let per_point: Vec<Option<Vec<f64>>> = exec::map_range(n, |i| {
        let t = neighbor_dists(&rows, i, k_max);
        (k_min..=k_max).map(|k| mle_at(&t, k)).collect()
    });
    let kept: Vec<&Vec<f64>> = per_point.iter().flatten().collect();
    let skipped = n - kept.len();
    if kept.is_empty() {
        return Err(Error::DuplicatePoints(
            "every point has a zero or degenerate neighbor distance".into(),
        ));
    }
    if skipped > 0 {
        log::warn!("intrinsic dimension: skipped {skipped} of {n} points with duplicate neighbors");
    }
    let per_k: Vec<(usize, f64)> = (k_min..=k_max)
        .enumerate()
        .map(|(c, k)| (k, kept.iter().map(|v| v[c]).sum::<f64>() / kept.len() as f64))
        .collect();
    let estimate = per_k.iter().map(|(_, v)| v).sum::<f64>() / per_k.len() as f64;
    Ok(IdEstimate {
        per_k,
        estimate,
        num_points: kept.len(),
        skipped,
    })
}

/// Single-point Levina-Bickel estimate at fixed `k`.
pub fn local_dim(x: &DMatrix<f64>, query: usize, k: usize) -> Result<f64> {
    local_dims_at(&Rows::from_matrix(x), &[query], k)?
        .pop()
        .expect("one query")
}

/// Local dimension of every row at fixed `k`.
pub fn local_dims(x: &DMatrix<f64>, k: usize) -> Result<Vec<f64>> {
    let idx: Vec<usize> = (0..x.nrows()).collect();
    local_dims_at(&Rows::from_matrix(x), &idx, k)?.into_iter().collect()
}

fn local_dims_at(rows: &Rows, queries: &[usize], k: usize) -> Result<Vec<Result<f64>>> {
    let n = rows.len();
    if k < 2 || k >= n {
        return Err(Error::OutOfRange {
            what: "neighbor count",
            detail: format!("k = {k} with {n} points"),
        });
    }
    if let Some(&q) = queries.iter().find(|&&q| q >= n) {
        return Err(Error::OutOfRange {
            what: "query index",
            detail: format!("{q} with {n} points"),
        });
    }
    Ok(exec::map(queries, |&q| {
        let t = neighbor_dists(rows, q, k);
        mle_at(&t, k).ok_or_else(|| {
            Error::DuplicatePoints(format!("point {q} has coincident nearest neighbors"))
        })
    }))
}

fn unit(w: &DVector<f64>) -> Result<DVector<f64>> {
    let n = w.norm();
    if !(n > 0.0) || !n.is_finite() {
        return Err(Error::Degenerate("zero or non-finite direction".into()));
    }
    Ok(w / n)
}

/// Chordal distance between the lines spanned by `w1` and `w2`:
/// `sin θ` with `cos θ = |ŵ1·ŵ2|`.
pub fn grassmann_dist(w1: &DVector<f64>, w2: &DVector<f64>) -> Result<f64> {
    if w1.len() != w2.len() {
        return Err(Error::DimMismatch {
            expected: w1.len(),
            actual: w2.len(),
        });
    }
    let a = unit(w1)?;
    let b = unit(w2)?;
    // the rejection of a from b has norm sin θ, which stays accurate near 0
    let c = a.dot(&b);
    Ok((a - b * c).norm().min(1.0))
}

/// `S_ij = |ŵ_iᵀ ŵ_j|` over per-layer directions.
pub fn layer_similarity(directions: &[DVector<f64>]) -> Result<DMatrix<f64>> {
    if directions.len() < 2 {
        return Err(Error::Degenerate("layer similarity needs at least 2 layers".into()));
    }
    let units = directions.iter().map(unit).collect::<Result<Vec<_>>>()?;
    let l = units.len();
    let mut s = DMatrix::identity(l, l);
    for i in 0..l {
        for j in i + 1..l {
            if units[i].len() != units[j].len() {
                return Err(Error::DimMismatch {
                    expected: units[i].len(),
                    actual: units[j].len(),
                });
            }
            let v = units[i].dot(&units[j]).abs().min(1.0);
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

pub const DEFAULT_PHASE_BOUNDARIES: [f64; 2] = [0.30, 0.70];

#[derive(Debug, Clone, PartialEq)]
pub struct PhaseBlocks {
    /// Half-open ranges of matrix positions per phase.
    pub phases: Vec<std::ops::Range<usize>>,
    /// Mean similarity between phases; diagonal entries exclude `S_ii`
    /// unless the phase has a single layer.
    pub means: DMatrix<f64>,
}

/// Splits the `L` positions at depth fractions `boundaries` (position `i`
/// sits at depth `i / L`) and averages `S` within and across phases.
/// Empty phases are dropped.
pub fn phase_blocks(s: &DMatrix<f64>, boundaries: &[f64]) -> Result<PhaseBlocks> {
    let l = s.nrows();
    if l == 0 || s.ncols() != l {
        return Err(Error::ShapeMismatch("similarity matrix must be square".into()));
    }
    if boundaries.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::InvalidConfig("phase boundaries must increase".into()));
    }
    let phase_of = |i: usize| {
        let f = i as f64 / l as f64;
        boundaries.iter().filter(|&&b| f >= b).count()
    };
    let mut phases: Vec<std::ops::Range<usize>> = Vec::new();
    for i in 0..l {
        match phases.last_mut() {
            Some(r) if phase_of(r.start) == phase_of(i) => r.end = i + 1,
            _ => phases.push(i..i + 1),
        }
    }
    let p = phases.len();
    let mut means = DMatrix::zeros(p, p);
    for a in 0..p {
        for b in 0..p {
            let mut sum = 0.0;
            let mut count = 0usize;
            for i in phases[a].clone() {
                for j in phases[b].clone() {
                    if a == b && i == j && phases[a].len() > 1 {
                        continue;
                    }
                    sum += s[(i, j)];
                    count += 1;
                }
            }
            means[(a, b)] = sum / count as f64;
        }
    }
    Ok(PhaseBlocks { phases, means })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Procrustes {
    /// Orthogonal `m x m` minimizer of `‖W1 R − W2‖_F`.
    pub rotation: DMatrix<f64>,
    pub residual: f64,
}

/// Orthogonal Procrustes: `R = U Vᵀ` from the SVD of `W1ᵀ W2`. Both inputs
/// must have the same shape; mapping between different hidden sizes is left
/// to the caller.
pub fn procrustes_align(w1: &DMatrix<f64>, w2: &DMatrix<f64>) -> Result<Procrustes> {
    if w1.shape() != w2.shape() {
        return Err(Error::ShapeMismatch(format!(
            "Procrustes needs equal shapes, got {:?} and {:?}",
            w1.shape(),
            w2.shape()
        )));
    }
    let m = w1.tr_mul(w2);
    if m.iter().all(|&v| v == 0.0) || !m.iter().all(|v| v.is_finite()) {
        return Err(Error::Degenerate("W1ᵀW2 is zero or non-finite".into()));
    }
    let svd = m.svd(true, true);
    let u = svd.u.expect("requested U");
    let v_t = svd.v_t.expect("requested Vᵀ");
    let rotation = u * v_t;
    let residual = (w1 * &rotation - w2).norm();
    Ok(Procrustes { rotation, residual })
}
