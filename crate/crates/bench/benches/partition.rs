use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use std::hint::black_box;

use zigprune_bench::chain_with_vertices;
use zigprune_core::graph::{demo_net, residual_block_net, stacked_unets_mini};
use zigprune_core::partition;

fn chains(c: &mut Criterion) {
    let mut group = c.benchmark_group("partition_chain");
    for n in [10, 100, 1_000, 10_000] {
        let g = chain_with_vertices(n);
        group.throughput(Throughput::Elements(g.len() as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &g, |b, g| {
            b.iter(|| partition(black_box(g)).unwrap())
        });
    }
    group.finish();
}

fn builders(c: &mut Criterion) {
    let mut group = c.benchmark_group("partition_builder");
    for (name, g) in [
        ("demo_net", demo_net()),
        ("residual_block_net", residual_block_net()),
        ("stacked_unets_mini", stacked_unets_mini()),
    ] {
        group.bench_function(name, |b| b.iter(|| partition(black_box(&g)).unwrap()));
    }
    group.finish();
}

criterion_group!(benches, chains, builders);
criterion_main!(benches);
