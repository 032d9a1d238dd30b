//! Sequential vs rayon execution of independent experiment runs, plus the
//! k-means assignment pass which is parallel over points.
//!
//! With `--no-default-features` both modes run sequentially, which is a
//! useful baseline for the scheduling overhead.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pgts_core::harness::{resolve_config, simulate_runs, CommandKind, ExecMode, Overrides, RawConfig};
use pgts_core::ingest::minibatch_kmeans;
use pgts_core::RandomSource;

fn experiment_runs(c: &mut Criterion) {
    let mut group = c.benchmark_group("runs");
    group.sample_size(10);
    for policy in ["laplace-ts", "pg-ts-stream"] {
        let config = resolve_config(
            CommandKind::Simulate,
            RawConfig {
                env: Some(serde_json::json!({"kind": "gaussian", "arms": 20, "dim": 5})),
                ..RawConfig::default()
            },
            &Overrides {
                policy: Some(policy.into()),
                runs: Some(8),
                rounds: Some(200),
                seed: Some(1),
                out: Some(std::env::temp_dir().join("pgts-bench")),
                ..Overrides::default()
            },
        )
        .expect("bench config");
        for (label, mode) in [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)] {
            group.bench_with_input(BenchmarkId::new(policy, label), &mode, |b, &mode| {
                b.iter(|| black_box(simulate_runs(&config, mode).unwrap()))
            });
        }
    }
    group.finish();
}

fn kmeans_full_batch(c: &mut Criterion) {
    let mut rng = RandomSource::seed_from_u64(3);
    let points: Vec<Vec<f64>> = (0..5000).map(|_| (0..11).map(|_| rng.normal()).collect()).collect();
    c.bench_function("kmeans/lloyd_5000x11_k32", |b| {
        b.iter(|| black_box(minibatch_kmeans(&points, 32, 5000, 10, 0).unwrap()))
    });
    c.bench_function("kmeans/minibatch_5000x11_k32", |b| {
        b.iter(|| black_box(minibatch_kmeans(&points, 32, 256, 50, 0).unwrap()))
    });
}

criterion_group!(benches, experiment_runs, kmeans_full_batch);
criterion_main!(benches);
