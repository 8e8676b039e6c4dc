use std::collections::BTreeMap;

use criterion::{criterion_group, criterion_main, BatchSize, BenchmarkId, Criterion};

use fedsim::harness::{run_sweep, SweepSpec};
use fedsim::{run_round, DataSpec, Executor, HParam, Method, RunConfig, Simulation, Skew};

fn executors() -> Vec<(&'static str, Executor)> {
    vec![
        ("sequential", Executor::sequential()),
        ("parallel-4", Executor::new(4).expect("worker pool")),
    ]
}

fn bench_round(c: &mut Criterion) {
    let mut group = c.benchmark_group("round");
    group.sample_size(20);
    for method in [Method::FedAvg, Method::FedSmoo] {
        let cfg = RunConfig {
            method,
            ..RunConfig::default()
        };
        let (train, _) = cfg.data.build(cfg.seed).unwrap();
        let sim = Simulation::new(cfg, &train).unwrap();
        for (name, exec) in executors() {
            group.bench_function(BenchmarkId::new(method.name(), name), |b| {
                b.iter_batched(
                    || sim.states.clone(),
                    |mut states| run_round(&sim.server, &mut states, &sim.plan, &train, &sim.cfg, &exec).unwrap(),
                    BatchSize::LargeInput,
                )
            });
        }
    }
    group.finish();
}

fn bench_sweep(c: &mut Criterion) {
    let spec = SweepSpec {
        base: RunConfig {
            rounds: 5,
            n_clients: 20,
            sample_size: 5,
            data: DataSpec {
                per_class: 300,
                ..DataSpec::default()
            },
            ..RunConfig::default()
        },
        methods: vec![Method::FedAvg, Method::FedSam],
        grid: BTreeMap::from([(Method::FedSam, BTreeMap::from([(HParam::Rho, vec![0.1, 0.01])]))]),
        partitions: vec![Skew::Iid, Skew::Dirichlet(0.0)],
        seeds: vec![1, 2],
    };
    let dir = tempfile::tempdir().unwrap();
    let mut group = c.benchmark_group("sweep");
    group.sample_size(10);
    for (name, workers) in [("sequential", 1), ("parallel-4", 4)] {
        group.bench_function(name, |b| b.iter(|| run_sweep(&spec, dir.path(), workers).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, bench_round, bench_sweep);
criterion_main!(benches);
