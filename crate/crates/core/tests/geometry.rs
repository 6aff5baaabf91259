mod common;

use common::{embed, gauss, gauss_matrix, orthogonal, rng};
use probegeom::geometry::{
    grassmann_dist, intrinsic_dim_mle, layer_similarity, local_dim, local_dims, phase_blocks, procrustes_align,
    DEFAULT_PHASE_BOUNDARIES,
};
use probegeom::nalgebra::{DMatrix, DVector};
use probegeom::store::{gen_synthetic, CompressionSchedule, LayerSchedule, SynthConfig};
use proptest::prelude::*;
use rand::Rng;

fn line_fixture() -> DMatrix<f64> {
    let mut r = rng(21);
    let t = DMatrix::from_fn(2000, 1, |_, _| r.random::<f64>() * 10.0);
    embed(&t, 50, &mut r)
}

/// On a 1-D manifold the k-neighbor estimate at a point is distributed as
/// (k-1)/G with G ~ Gamma(k-1, 1), so single points scatter widely around 1.
#[test]
fn local_dim_on_a_line_follows_its_sampling_law() {
    use statrs::distribution::{ContinuousCDF, Gamma};
    let x = line_fixture();
    let k = 10;
    let v = local_dims(&x, k).unwrap();
    let g = Gamma::new((k - 1) as f64, 1.0).unwrap();
    let m = (k - 1) as f64;

    let mean = common::mean(&v);
    assert!((mean - m / (m - 1.0)).abs() < 0.05, "mean {mean}");
    let mut sorted = v.clone();
    sorted.sort_by(f64::total_cmp);
    let median = sorted[v.len() / 2];
    assert!((median - m / g.inverse_cdf(0.5)).abs() < 0.05, "median {median}");
    assert!((median - 1.0).abs() <= 0.5);
    let within = v.iter().filter(|d| (*d - 1.0).abs() <= 0.5).count() as f64 / v.len() as f64;
    let expected = g.cdf(m / 0.5) - g.cdf(m / 1.5);
    assert!((within - expected).abs() < 0.03, "{within} of points within 1 +/- 0.5, law says {expected}");
    assert_eq!(local_dim(&x, 777, k).unwrap(), v[777]);
}

/// Unit vector `theta` degrees away from `centre` towards a random
/// perpendicular direction.
fn jittered(centre: &DVector<f64>, theta: f64, r: &mut rand_chacha::ChaCha8Rng) -> DVector<f64> {
    let g = DVector::from_fn(centre.len(), |_, _| gauss(r));
    let mut p = &g - centre * g.dot(centre);
    p /= p.norm();
    let t = theta.to_radians();
    centre * t.cos() + p * t.sin()
}

#[test]
fn three_phase_fixture_has_block_structure() {
    let mut r = rng(22);
    let q = orthogonal(64, &mut r);
    // twelve layers at depth i/12 split 4 / 5 / 3 by the 30% and 70% boundaries
    let sizes = [4, 5, 3];
    let mut dirs = Vec::new();
    for (phase, &n) in sizes.iter().enumerate() {
        let centre = q.column(phase).into_owned();
        for _ in 0..n {
            dirs.push(jittered(&centre, 5.0, &mut r));
        }
    }
    let s = layer_similarity(&dirs).unwrap();
    assert_eq!(s, s.transpose());
    let b = phase_blocks(&s, &DEFAULT_PHASE_BOUNDARIES).unwrap();
    assert_eq!(b.phases, vec![0..4, 4..9, 9..12]);
    for i in 0..3 {
        for j in 0..3 {
            let m = b.means[(i, j)];
            if i == j {
                assert!(m > 0.99, "within phase {i}: {m}");
            } else {
                assert!(m < 0.2, "phases {i},{j}: {m}");
            }
        }
    }
}

#[test]
fn shared_and_orthogonal_directions() {
    let mut r = rng(23);
    let w = DVector::from_fn(16, |_, _| gauss(&mut r));
    let same: Vec<DVector<f64>> = (1..6).map(|k| &w * (k as f64) * if k % 2 == 0 { -1.0 } else { 1.0 }).collect();
    let s = layer_similarity(&same).unwrap();
    assert!(s.iter().all(|v| (v - 1.0).abs() < 1e-12));
    let b = phase_blocks(&s, &DEFAULT_PHASE_BOUNDARIES).unwrap();
    assert!(b.means.iter().all(|v| (v - 1.0).abs() < 1e-12));

    let q = orthogonal(16, &mut r);
    let orth: Vec<DVector<f64>> = (0..5).map(|j| q.column(j).into_owned()).collect();
    let s = layer_similarity(&orth).unwrap();
    for i in 0..5 {
        for j in 0..5 {
            let want = if i == j { 1.0 } else { 0.0 };
            assert!((s[(i, j)] - want).abs() < 1e-12);
        }
    }
}

#[test]
fn procrustes_recovers_rotation_and_identity() {
    let mut r = rng(24);
    let w1 = gauss_matrix(30, 5, &mut r);
    let q = orthogonal(5, &mut r);
    let p = procrustes_align(&w1, &(&w1 * &q)).unwrap();
    assert!(p.residual < 1e-8);
    assert!((&p.rotation - &q).amax() < 1e-8);
    let p = procrustes_align(&w1, &w1).unwrap();
    assert!((p.rotation - DMatrix::<f64>::identity(5, 5)).amax() < 1e-10);
}

#[test]
fn id_falls_from_mid_to_final_layer() {
    let cfg = SynthConfig {
        hidden_dim: 32,
        num_groups: 500,
        num_layers: 5,
        layer_schedule: LayerSchedule::Linear,
        compression: Some(CompressionSchedule {
            final_active_dims: 4,
            residual_scale: 0.05,
        }),
        ..SynthConfig::default()
    };
    let ds = gen_synthetic(&cfg).unwrap();
    let ids: Vec<f64> = ds
        .layers
        .iter()
        .map(|l| intrinsic_dim_mle(&l.to_matrix(), 5, 20).unwrap().estimate)
        .collect();
    for w in ids[2..].windows(2) {
        assert!(w[1] <= w[0], "ID rose between layers: {ids:?}");
    }
}

#[test]
fn too_few_points_for_neighbors() {
    let x = gauss_matrix(20, 3, &mut rng(25));
    assert!(intrinsic_dim_mle(&x, 5, 20).is_err());
}

fn vector(d: usize) -> impl Strategy<Value = DVector<f64>> {
    prop::collection::vec(-10.0f64..10.0, d)
        .prop_filter("nonzero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-6)
        .prop_map(DVector::from_vec)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn id_is_invariant_to_similarity_transforms(seed in any::<u64>(), k in 1usize..5, scale in 0.01f64..100.0) {
        let mut r = rng(seed);
        let x = embed(&gauss_matrix(80, k, &mut r), 12, &mut r);
        let q = orthogonal(12, &mut r);
        let shift = DVector::from_fn(12, |_, _| 50.0 * gauss(&mut r));
        let mut y = &x * &q * scale;
        for mut row in y.row_iter_mut() {
            row += shift.transpose();
        }
        let a = intrinsic_dim_mle(&x, 5, 10).unwrap();
        let b = intrinsic_dim_mle(&y, 5, 10).unwrap();
        prop_assert!((a.estimate - b.estimate).abs() <= 1e-9 * a.estimate.max(1.0), "{} vs {}", a.estimate, b.estimate);
        prop_assert!(a.per_k.iter().all(|(_, v)| *v > 0.0));
    }

    #[test]
    fn grassmann_is_a_metric_on_lines(a in vector(4), b in vector(4), c in vector(4), s in -5.0f64..5.0) {
        prop_assume!(s.abs() > 1e-3);
        let d = |u: &DVector<f64>, v: &DVector<f64>| grassmann_dist(u, v).unwrap();
        let ab = d(&a, &b);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((ab - d(&b, &a)).abs() < 1e-12);
        prop_assert!((ab - d(&(&a * s), &b)).abs() < 1e-9);
        prop_assert!(d(&a, &(&a * s)) < 1e-7);
        prop_assert!(d(&a, &c) <= ab + d(&b, &c) + 1e-9);
    }

    #[test]
    fn procrustes_residual_ignores_a_shared_rotation(seed in any::<u64>(), d in 3usize..12, m in 1usize..4) {
        prop_assume!(m <= d);
        let mut r = rng(seed);
        let w1 = gauss_matrix(d, m, &mut r);
        let w2 = gauss_matrix(d, m, &mut r);
        let p = procrustes_align(&w1, &w2).unwrap();
        let rt_r = p.rotation.transpose() * &p.rotation;
        prop_assert!((rt_r - DMatrix::<f64>::identity(m, m)).amax() < 1e-8);
        prop_assert!((p.residual - (&w1 * &p.rotation - &w2).norm()).abs() < 1e-9);
        prop_assert!(p.residual <= (&w1 - &w2).norm() + 1e-9);
        let s = orthogonal(m, &mut r);
        let q = procrustes_align(&(&w1 * &s), &(&w2 * &s)).unwrap();
        prop_assert!((p.residual - q.residual).abs() < 1e-9 * p.residual.max(1.0));
    }
}
