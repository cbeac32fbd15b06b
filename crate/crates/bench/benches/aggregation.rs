use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use stepvis::evaluation::{aggregate_pairwise, aggregate_rank_annotations};
use stepvis_bench::{pairwise_records, rank_records};

fn aggregation(c: &mut Criterion) {
    let rank = rank_records(10_000);
    let pairwise = pairwise_records(10_000);
    c.bench_function("aggregate_rank/10k", |b| b.iter(|| aggregate_rank_annotations(black_box(&rank)).unwrap()));
    c.bench_function("aggregate_pairwise/10k", |b| {
        b.iter(|| aggregate_pairwise(black_box(&pairwise), "proposed").unwrap())
    });
}

criterion_group!(benches, aggregation);
criterion_main!(benches);
