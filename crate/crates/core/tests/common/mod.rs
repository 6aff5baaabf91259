//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use probegeom::nalgebra::{DMatrix, DVector};
use probegeom::store::Label;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample(StandardNormal)
}

pub fn gauss_matrix(n: usize, d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    DMatrix::from_fn(n, d, |_, _| gauss(rng))
}

/// Haar-ish orthogonal matrix from the QR of a Gaussian matrix.
pub fn orthogonal(d: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    gauss_matrix(d, d, rng).qr().q()
}

/// Pads `points` with zero columns to `ambient` dims and rotates randomly.
pub fn embed(points: &DMatrix<f64>, ambient: usize, rng: &mut ChaCha8Rng) -> DMatrix<f64> {
    let (n, k) = points.shape();
    let q = orthogonal(ambient, rng);
    let mut padded = DMatrix::zeros(n, ambient);
    padded.view_mut((0, 0), (n, k)).copy_from(points);
    padded * q.transpose()
}

/// Standard normal CDF by composite Simpson integration of the density.
pub fn phi(z: f64) -> f64 {
    let n = 20_000;
    let h = z / n as f64;
    let f = |t: f64| (-0.5 * t * t).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut s = f(0.0) + f(z);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        s += w * f(i as f64 * h);
    }
    0.5 + s * h / 3.0
}

/// AUC by brute-force pair counting.
pub fn pair_auc(scores: &[f64], labels: &[Label]) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for (i, li) in labels.iter().enumerate() {
        if !li.is_correct() {
            continue;
        }
        for (j, lj) in labels.iter().enumerate() {
            if lj.is_correct() {
                continue;
            }
            den += 1.0;
            if scores[i] > scores[j] {
                num += 1.0;
            } else if scores[i] == scores[j] {
                num += 0.5;
            }
        }
    }
    num / den
}

/// Two Gaussian classes differing by `shift` along `direction` with unit
/// isotropic noise; labels alternate.
pub fn mean_shift(n: usize, direction: &DVector<f64>, shift: f64, rng: &mut ChaCha8Rng) -> (DMatrix<f64>, Vec<Label>) {
    let d = direction.len();
    let labels: Vec<Label> = (0..n).map(|i| Label::from(i % 2 == 0)).collect();
    let x = DMatrix::from_fn(n, d, |i, j| {
        let sign = if labels[i].is_correct() { 0.5 } else { -0.5 };
        sign * shift * direction[j] + gauss(rng)
    });
    (x, labels)
}

pub fn unit(d: usize, axis: usize) -> DVector<f64> {
    let mut v = DVector::zeros(d);
    v[axis] = 1.0;
    v
}

pub fn cosine(a: &DVector<f64>, b: &DVector<f64>) -> f64 {
    a.dot(b) / (a.norm() * b.norm())
}

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Two-pass sample variance (ddof 1).
pub fn sample_var(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (v.len() as f64 - 1.0)
}
