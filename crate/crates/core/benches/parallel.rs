use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use lshfed::lshgm::{correlation_study, project, CorrelationConfig, HyperplaneSet};
use lshfed::protocol::{bootstrap, run_round, ExperimentConfig};
use lshfed::{rng, Exec, GradientUpdate, ShapeRegistry};

const MODES: [(&str, Exec); 2] = [("sequential", Exec::Sequential), ("parallel", Exec::Parallel)];

fn projection(c: &mut Criterion) {
    let shape = ShapeRegistry::with_builtins().by_name("cnn-206922").unwrap().clone();
    let planes = HyperplaneSet::for_shape(&shape, 8, 1).unwrap();
    let g = GradientUpdate::from_flat(&shape, &rng::normal_vec(shape.num_params(), 2)).unwrap();
    let mut group = c.benchmark_group("project_cnn");
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| project(&g, &planes, exec).unwrap())
        });
    }
    group.finish();
}

fn correlation(c: &mut Criterion) {
    let cfg = CorrelationConfig {
        pairs: 100,
        ..CorrelationConfig::default()
    };
    let mut group = c.benchmark_group("correlation_100_pairs");
    group.sample_size(10);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| correlation_study(&cfg, exec).unwrap())
        });
    }
    group.finish();
}

fn protocol_round(c: &mut Criterion) {
    let cfg = ExperimentConfig::default();
    let mut group = c.benchmark_group("protocol_round");
    group.sample_size(20);
    for (name, exec) in MODES {
        let world = bootstrap(&cfg, exec).unwrap();
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter_batched(
                || world.clone(),
                |mut w| run_round(&mut w, 2).unwrap(),
                criterion::BatchSize::LargeInput,
            )
        });
    }
    group.finish();
}

criterion_group!(benches, projection, correlation, protocol_round);
criterion_main!(benches);
