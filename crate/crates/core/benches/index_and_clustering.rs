use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use pyramem_core::identity::{LocalClusterer, SingleLinkage};
use pyramem_core::types::{Level, NodeId};
use pyramem_core::{Embedding, EmbeddingIndex, Execution};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn random_embedding(rng: &mut ChaCha8Rng, dim: usize) -> Embedding {
    Embedding::new((0..dim).map(|_| rng.random_range(-1.0f32..1.0)).collect()).unwrap()
}

fn bench_top_k(c: &mut Criterion) {
    let mut group = c.benchmark_group("top_k");
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for n in [2_000usize, 20_000] {
        let mut index = EmbeddingIndex::new(256).unwrap();
        for i in 0..n {
            index.upsert(NodeId::fact(i as u64), Level::Fact, random_embedding(&mut rng, 256)).unwrap();
        }
        let query = random_embedding(&mut rng, 256);
        group.throughput(Throughput::Elements(n as u64));
        for (name, mode) in MODES {
            index.set_execution(mode);
            group.bench_with_input(BenchmarkId::new(name, n), &n, |b, _| {
                b.iter(|| index.top_k(black_box(&query), 20).unwrap())
            });
        }
    }
    group.finish();
}

fn bench_local_clustering(c: &mut Criterion) {
    let mut group = c.benchmark_group("single_linkage");
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for n in [200usize, 1_000] {
        let faces: Vec<Embedding> = (0..n).map(|_| random_embedding(&mut rng, 128)).collect();
        group.throughput(Throughput::Elements((n * n / 2) as u64));
        for (name, mode) in MODES {
            let clusterer = SingleLinkage::default().with_execution(mode);
            group.bench_with_input(BenchmarkId::new(name, n), &faces, |b, faces| {
                b.iter(|| clusterer.cluster(black_box(faces)).unwrap())
            });
        }
    }
    group.finish();
}

criterion_group!(benches, bench_top_k, bench_local_clustering);
criterion_main!(benches);
