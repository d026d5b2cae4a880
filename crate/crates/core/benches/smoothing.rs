use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use ensemble_sync::model::smooth_performance;
use ensemble_sync::recovery::{sweep, RecoverySetup};
use ensemble_sync::synth::{make_script, simulate, Condition, SimulationParams};
use ensemble_sync::{EnsembleConfig, Execution};

fn smoothing(c: &mut Criterion) {
    let mut group = c.benchmark_group("smooth");
    for k in [2, 4, 6] {
        let script = make_script(Condition::Normal, k, 46, 500.0, None, 1).unwrap();
        let params = SimulationParams::uniform(k, 46, 0.25, 0.0, 20.0, script, 1);
        let data = simulate(&params).unwrap().0.to_ioi_series().unwrap();
        let config = EnsembleConfig::new(k).unwrap();
        group.bench_with_input(BenchmarkId::new("N=46", k), &data, |b, data| {
            b.iter(|| smooth_performance(black_box(data), &config).unwrap())
        });
    }
    group.finish();
}

fn recovery_sweep(c: &mut Criterion) {
    let setup = RecoverySetup::new(Condition::Speed, 4, 46, Some(2)).unwrap();
    let seeds: Vec<u64> = (0..20).collect();
    let mut group = c.benchmark_group("recovery_sweep_20_seeds");
    group.sample_size(10);
    for (name, exec) in [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)] {
        group.bench_function(name, |b| b.iter(|| sweep(exec, black_box(&setup), &seeds)));
    }
    group.finish();
}

criterion_group!(benches, smoothing, recovery_sweep);
criterion_main!(benches);
