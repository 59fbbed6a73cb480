use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use pyramem_bench::ablation::{ingest_tasks, oracle_adapters, run_variant};
use pyramem_bench::{generate_workload, AblationOptions, Variant, WorkloadSpec};

fn spec() -> WorkloadSpec {
    WorkloadSpec {
        tasks: 24,
        ..WorkloadSpec::default()
    }
}

fn modes() -> [(&'static str, AblationOptions); 2] {
    let threads = std::thread::available_parallelism().map_or(2, |n| n.get().max(2));
    let sequential = AblationOptions {
        workers: 1,
        ..AblationOptions::default()
    };
    let parallel = AblationOptions {
        workers: threads,
        ..AblationOptions::default()
    };
    [("sequential", sequential), ("parallel", parallel)]
}

fn bench_ingest(c: &mut Criterion) {
    let tasks = generate_workload(&spec()).unwrap();
    let mut group = c.benchmark_group("workload_ingest");
    group.sample_size(10);
    for (name, options) in modes() {
        let adapters = oracle_adapters(&options);
        group.bench_function(BenchmarkId::new(name, tasks.len()), |b| {
            b.iter(|| ingest_tasks(black_box(&tasks), &adapters, &options).unwrap())
        });
    }
    group.finish();
}

fn bench_queries(c: &mut Criterion) {
    let tasks = generate_workload(&spec()).unwrap();
    let mut group = c.benchmark_group("ablation_queries");
    group.sample_size(20);
    for (name, options) in modes() {
        let adapters = oracle_adapters(&options);
        let stores = ingest_tasks(&tasks, &adapters, &options).unwrap();
        for variant in [Variant::full(), Variant::no_prune()] {
            group.bench_function(BenchmarkId::new(name, variant.name()), |b| {
                b.iter(|| run_variant(&tasks, &stores, variant, &adapters, &options).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_ingest, bench_queries);
criterion_main!(benches);
