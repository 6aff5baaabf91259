//! Single worker vs the full rayon pool on the two heaviest kernels.
//!
//! `cargo bench -p probegeom` compares pool sizes; add
//! `--no-default-features` to time the sequential build instead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use probegeom::evaluation::{layer_sweep, SweepConfig};
use probegeom::exec::with_jobs;
use probegeom::geometry::intrinsic_dim_mle;
use probegeom::store::{gen_synthetic, SynthConfig};

fn fixture() -> probegeom::store::ActivationDataset {
    gen_synthetic(&SynthConfig {
        hidden_dim: 64,
        signal_rank: 3,
        mean_shift: vec![2.0],
        num_groups: 200,
        num_layers: 4,
        ..SynthConfig::default()
    })
    .expect("fixture")
}

fn pools() -> Vec<(String, Option<usize>)> {
    vec![("1".into(), Some(1)), ("all".into(), None)]
}

fn sweep(c: &mut Criterion) {
    let ds = fixture();
    let layers = ds.layer_indices();
    let cfg = SweepConfig {
        seeds: vec![42],
        ..SweepConfig::default()
    };
    let mut g = c.benchmark_group("layer_sweep");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| with_jobs(jobs, || layer_sweep(black_box(&ds), &layers, &cfg).unwrap()).unwrap())
        });
    }
    g.finish();
}

fn id_mle(c: &mut Criterion) {
    let ds = fixture();
    let x = ds.layer(3).unwrap().to_matrix();
    let mut g = c.benchmark_group("intrinsic_dim_mle");
    g.sample_size(10);
    for (name, jobs) in pools() {
        g.bench_with_input(BenchmarkId::from_parameter(name), &jobs, |b, &jobs| {
            b.iter(|| with_jobs(jobs, || intrinsic_dim_mle(black_box(&x), 5, 20).unwrap()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, sweep, id_mle);
criterion_main!(benches);
