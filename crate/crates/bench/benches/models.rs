use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use fer_forge_bench::{dataset, tensor};
use fer_forge_core::layers::Mode;
use fer_forge_core::models::{self, ArchConfig, ModelKind};
use fer_forge_core::tree::{fit_tree, TreeConfig};
use std::hint::black_box;

fn forward(c: &mut Criterion) {
    let mut g = c.benchmark_group("forward_batch32");
    g.sample_size(10);
    let x = tensor(&[32, 1, 48, 48], 4);
    for kind in [ModelKind::Ffnn, ModelKind::SimpleCnn, ModelKind::ProposedCnn] {
        let mut net = models::build::<f32>(kind, &ArchConfig::default(), 42).unwrap();
        g.bench_function(kind.name(), |b| b.iter(|| net.forward(black_box(&x), Mode::Infer, 0).unwrap()));
    }
    g.finish();
}

fn tree(c: &mut Criterion) {
    let mut g = c.benchmark_group("fit_tree");
    g.sample_size(10);
    for n in [500, 2000] {
        let data = dataset(n);
        g.bench_with_input(BenchmarkId::from_parameter(n), &data, |b, d| {
            b.iter(|| fit_tree(d, &TreeConfig::default()).unwrap())
        });
    }
    g.finish();
}

criterion_group!(benches, forward, tree);
criterion_main!(benches);
