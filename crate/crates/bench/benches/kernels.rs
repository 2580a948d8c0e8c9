use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use dasmae_bench::{desk_stft, uniform, waterfall};
use dasmae_core::numerics::matmul;
use dasmae_core::stft::{spectrogram, StftConfig};
use std::hint::black_box;

fn bench_matmul(c: &mut Criterion) {
    let mut group = c.benchmark_group("matmul");
    for n in [64, 128, 256] {
        let a = uniform(&[n, n], 1);
        let b = uniform(&[n, n], 2);
        group.throughput(Throughput::Elements((2 * n * n * n) as u64));
        group.bench_with_input(BenchmarkId::from_parameter(n), &n, |bench, _| {
            bench.iter(|| matmul(black_box(&a), black_box(&b)).unwrap())
        });
    }
    group.finish();
}

fn bench_stft(c: &mut Criterion) {
    let mut group = c.benchmark_group("stft");
    let desk = waterfall(12, 2000, 3);
    group.bench_function("desk 12x2000", |b| b.iter(|| spectrogram(black_box(&desk), &desk_stft()).unwrap()));
    let full = waterfall(12, 10_000, 4);
    let cfg = StftConfig::full_scale();
    group.bench_function("full 12x10000", |b| b.iter(|| spectrogram(black_box(&full), &cfg).unwrap()));
    group.finish();
}

criterion_group!(benches, bench_matmul, bench_stft);
criterion_main!(benches);
