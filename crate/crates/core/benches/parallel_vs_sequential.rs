use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};

use fas_portsel::bench::{run_experiment_with, AlgorithmName, AlgorithmSpec, ExperimentSpec, Normalization};
use fas_portsel::channel::{build_correlation, generate_batch_with, ArrayConfig, ScenarioConfig};
use fas_portsel::exec::ExecMode;

const MODES: [(&str, ExecMode); 2] = [("sequential", ExecMode::Sequential), ("parallel", ExecMode::Parallel)];

fn channel_generation(c: &mut Criterion) {
    let array = ArrayConfig::square(8, 2.0);
    let scen = ScenarioConfig::with_users(4);
    let model = build_correlation(&array).unwrap();
    let mut group = c.benchmark_group("generate_batch/N=64/B=2000");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| generate_batch_with(&model, &array, &scen, 2000, mode).unwrap())
        });
    }
    group.finish();
}

fn experiment(c: &mut Criterion) {
    let spec = ExperimentSpec {
        array: ArrayConfig::square(4, 2.0),
        scenario: ScenarioConfig::with_users(4),
        algorithms: vec![
            AlgorithmSpec::named(AlgorithmName::Exhaustive),
            AlgorithmSpec::named(AlgorithmName::Autoport),
        ],
        sweep: None,
        realizations: 16,
        normalization: Normalization::VsExhaustive,
        seed: 0,
        channels: None,
        record_timing: false,
    };
    let mut group = c.benchmark_group("run_experiment/desk/exhaustive+autoport");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            b.iter(|| run_experiment_with(&spec, mode).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, channel_generation, experiment);
criterion_main!(benches);
