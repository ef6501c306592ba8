use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use physgrd_bench::net_and_sample;
use physgrd_core::backward;
use std::hint::black_box;

fn bench_forward(c: &mut Criterion) {
    let mut group = c.benchmark_group("forward_240");
    for (conv, fc) in [(16, [16, 8]), (128, [64, 32])] {
        let (net, sample) = net_and_sample(conv, fc, 240);
        group.bench_with_input(BenchmarkId::from_parameter(conv), &conv, |b, _| {
            b.iter(|| net.forward(black_box(&sample.features), sample.len).unwrap())
        });
    }
    group.finish();
}

fn bench_backward(c: &mut Criterion) {
    let mut group = c.benchmark_group("backward_240");
    for (conv, fc) in [(16, [16, 8]), (128, [64, 32])] {
        let (net, sample) = net_and_sample(conv, fc, 240);
        group.bench_with_input(BenchmarkId::from_parameter(conv), &conv, |b, _| {
            b.iter(|| backward(&net, black_box(&[&sample]), 0.002, 0.005).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, bench_forward, bench_backward);
criterion_main!(benches);
