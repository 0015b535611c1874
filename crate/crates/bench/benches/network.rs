use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion, Throughput};
use navgym_bench::{observations, samples};
use navgym_core::acnet::{compute_gradients, forward, LossConfig, NetParams, NetShape};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::hint::black_box;

fn network(c: &mut Criterion) {
    let shape = NetShape::default();
    let params = NetParams::<f32>::init(shape, &mut ChaCha8Rng::seed_from_u64(1));
    let mut group = c.benchmark_group("network");
    group.sample_size(20);
    for batch in [1, 32] {
        group.throughput(Throughput::Elements(batch as u64));
        let obs = observations(&shape, batch, 3);
        group.bench_with_input(BenchmarkId::new("forward", batch), &batch, |b, _| {
            b.iter(|| black_box(forward(&params, &obs)))
        });
        let batch_samples = samples(&shape, batch, 3);
        let loss = LossConfig::default();
        group.bench_with_input(BenchmarkId::new("gradients", batch), &batch, |b, _| {
            b.iter(|| black_box(compute_gradients(&params, &batch_samples, &loss)))
        });
    }
    group.finish();
}

criterion_group!(benches, network);
criterion_main!(benches);
