//! Label-free per-record features: activation norm, PCA reconstruction
//! residual, local outlier factor, distance to the nearest k-means centroid
//! and local intrinsic dimension.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::exec;
use crate::linalg::{sq_dist, Rows};
use crate::projection::PcaProjector;

pub const PCA_COMPONENTS: usize = 32;
pub const LOF_K: usize = 20;
pub const KMEANS_K: usize = 8;
pub const KMEANS_ITERS: usize = 100;
pub const LOCAL_DIM_K: usize = 10;

pub const FEATURE_NAMES: [&str; 5] = ["l2_norm", "recon_error", "lof", "cluster_uncertainty", "local_dim"];

/// Feature columns in [`FEATURE_NAMES`] order.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTable {
    pub columns: [Vec<f64>; 5],
}

impl FeatureTable {
    pub fn named(&self) -> impl Iterator<Item = (&'static str, &[f64])> {
        FEATURE_NAMES.iter().copied().zip(self.columns.iter().map(|c| c.as_slice()))
    }
}

/// `k` nearest reference rows to `q` as `(distance, index)`, ascending,
/// ties by index, optionally excluding one reference row.
fn nearest(reference: &Rows, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(f64, usize)> {
    let mut d: Vec<(f64, usize)> = (0..reference.len())
        .filter(|&j| Some(j) != exclude)
        .map(|j| (sq_dist(q, reference.row(j)), j))
        .collect();
    let cmp = |a: &(f64, usize), b: &(f64, usize)| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1));
    if k < d.len() {
        d.select_nth_unstable_by(k - 1, cmp);
        d.truncate(k);
    }
    d.sort_by(cmp);
    d.into_iter().map(|(s, j)| (s.sqrt(), j)).collect()
}

/// Models fitted on a reference set, applied to query rows.
#[derive(Debug, Clone)]
pub struct UnsupervisedModel {
    pca: PcaProjector,
    centroids: Vec<Vec<f64>>,
    reference: Rows,
    k_distance: Vec<f64>,
    lrd: Vec<f64>,
}

fn lrd_from(neighbors: &[(f64, usize)], k_distance: &[f64]) -> f64 {
    let reach: f64 = neighbors
        .iter()
        .map(|&(d, o)| d.max(k_distance[o]))
        .sum::<f64>()
        / neighbors.len() as f64;
    1.0 / reach.max(1e-300)
}

impl UnsupervisedModel {
    pub fn fit(x: &DMatrix<f64>, seed: u64) -> Result<Self> {
        let n = x.nrows();
        if n < LOF_K + 1 || n < KMEANS_K {
            return Err(Error::OutOfRange {
                what: "sample size",
                detail: format!("unsupervised features need at least {} rows, got {n}", LOF_K + 1),
            });
        }
        let k = PCA_COMPONENTS.min(x.ncols()).min(n - 1);
        let pca = PcaProjector::fit(x, k)?;
        let reference = Rows::from_matrix(x);
        let neighbors: Vec<Vec<(f64, usize)>> =
            exec::map_range(n, |i| nearest(&reference, reference.row(i), LOF_K, Some(i)));
        let k_distance: Vec<f64> = neighbors.iter().map(|nb| nb[LOF_K - 1].0).collect();
        let lrd = neighbors.iter().map(|nb| lrd_from(nb, &k_distance)).collect();
        let centroids = kmeans(&reference, KMEANS_K, KMEANS_ITERS, seed);
        Ok(UnsupervisedModel {
            pca,
            centroids,
            reference,
            k_distance,
            lrd,
        })
    }

    /// Features of new rows relative to the reference set.
    pub fn features(&self, x: &DMatrix<f64>) -> Result<FeatureTable> {
        self.features_impl(&Rows::from_matrix(x), false)
    }

    fn features_impl(&self, q: &Rows, in_sample: bool) -> Result<FeatureTable> {
        if q.dim() != self.reference.dim() {
            return Err(Error::DimMismatch {
                expected: self.reference.dim(),
                actual: q.dim(),
            });
        }
        let rows: Vec<Result<[f64; 5]>> = exec::map_range(q.len(), |i| {
            let x = q.row(i);
            let exclude = in_sample.then_some(i);
            let l2 = x.iter().map(|v| v * v).sum::<f64>().sqrt();
            let recon = self.pca.reconstruction_error(x)?;
            let nb = nearest(&self.reference, x, LOF_K.max(LOCAL_DIM_K), exclude);
            let lof_nb = &nb[..LOF_K];
            let lrd_p = lrd_from(lof_nb, &self.k_distance);
            let lof = lof_nb.iter().map(|&(_, o)| self.lrd[o]).sum::<f64>() / (LOF_K as f64 * lrd_p);
            let cluster = self
                .centroids
                .iter()
                .map(|c| sq_dist(x, c))
                .fold(f64::INFINITY, f64::min)
                .sqrt();
            let t: Vec<f64> = nb[..LOCAL_DIM_K].iter().map(|p| p.0).collect();
            let local = local_mle(&t).ok_or_else(|| {
                Error::DuplicatePoints(format!("row {i} has coincident nearest neighbors"))
            })?;
            Ok([l2, recon, lof, cluster, local])
        });
        let mut columns: [Vec<f64>; 5] = Default::default();
        for r in rows {
            let r = r?;
            for (c, v) in columns.iter_mut().zip(r) {
                c.push(v);
            }
        }
        Ok(FeatureTable { columns })
    }
}

fn local_mle(t: &[f64]) -> Option<f64> {
    let k = t.len();
    if t[0] <= 0.0 {
        return None;
    }
    let s: f64 = t[..k - 1].iter().map(|tj| (t[k - 1] / tj).ln()).sum();
    (s > 0.0).then(|| (k - 1) as f64 / s)
}

/// Features of every row of `x` against the rest of `x` (a row is never
/// its own neighbor).
pub fn unsupervised_features(x: &DMatrix<f64>, seed: u64) -> Result<FeatureTable> {
    let model = UnsupervisedModel::fit(x, seed)?;
    let q = model.reference.clone();
    model.features_impl(&q, true)
}

/// Lloyd's algorithm from a seeded k-means++ start.
pub fn kmeans(x: &Rows, k: usize, iters: usize, seed: u64) -> Vec<Vec<f64>> {
    let n = x.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centers: Vec<Vec<f64>> = vec![x.row(rng.random_range(0..n)).to_vec()];
    let mut d2: Vec<f64> = (0..n).map(|i| sq_dist(x.row(i), &centers[0])).collect();
    while centers.len() < k {
        let total: f64 = d2.iter().sum();
        let next = if total > 0.0 {
            let mut u = rng.random::<f64>() * total;
            let mut pick = n - 1;
            for (i, w) in d2.iter().enumerate() {
                if u < *w {
                    pick = i;
                    break;
                }
                u -= w;
            }
            pick
        } else {
            rng.random_range(0..n)
        };
        centers.push(x.row(next).to_vec());
        for (i, v) in d2.iter_mut().enumerate() {
            *v = v.min(sq_dist(x.row(i), centers.last().expect("pushed")));
        }
    }

    let mut assign = vec![usize::MAX; n];
    for _ in 0..iters {
        let new: Vec<usize> = exec::map_range(n, |i| {
            let r = x.row(i);
            (0..k)
                .min_by(|&a, &b| sq_dist(r, &centers[a]).total_cmp(&sq_dist(r, &centers[b])))
                .expect("k > 0")
        });
        if new == assign {
            break;
        }
        assign = new;
        let mut sums = vec![vec![0.0; x.dim()]; k];
        let mut counts = vec![0usize; k];
        for (i, &c) in assign.iter().enumerate() {
            counts[c] += 1;
            for (s, v) in sums[c].iter_mut().zip(x.row(i)) {
                *s += v;
            }
        }
        for c in 0..k {
            // an empty cluster keeps its previous center
            if counts[c] > 0 {
                centers[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
            }
        }
    }
    centers
}
