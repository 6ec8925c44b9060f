use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fbmlab::analysis::{generate_fbm, FbmMethod};
use fbmlab::theory::{FbmModel, SpectrumParams};
use fbmlab::tracer::{run_ensemble, EnsembleMode, EnsembleOptions, TracerConfig};
use fbmlab::Executor;

fn executors(c: &mut Criterion) {
    let p = SpectrumParams::reference();
    let cfg = TracerConfig::uniform(0.4, 1.0, 20, 0.1, 128);
    let mut group = c.benchmark_group("ensemble");
    group.sample_size(10);
    for exec in [Executor::Parallel, Executor::Sequential] {
        for mode in [EnsembleMode::Full, EnsembleMode::FrozenExact] {
            let opts = EnsembleOptions {
                mode,
                executor: exec,
                ..EnsembleOptions::default()
            };
            group.bench_with_input(
                BenchmarkId::new(format!("{exec:?}"), format!("{mode:?}")),
                &opts,
                |b, opts| b.iter(|| run_ensemble(&p, &cfg, 32, 1, opts).unwrap()),
            );
        }
    }
    group.finish();

    let model = FbmModel::new(1.0, 0.75).unwrap();
    let mut group = c.benchmark_group("fbm");
    group.sample_size(10);
    for exec in [Executor::Parallel, Executor::Sequential] {
        group.bench_function(format!("{exec:?}"), |b| {
            b.iter(|| generate_fbm(&model, 512, 1.0 / 512.0, 256, 1, FbmMethod::Circulant, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, executors);
criterion_main!(benches);
