use cagru_bench::random_windows;
use cagru_core::neural::{fit, ForecastModel, ModelConfig};
use criterion::{criterion_group, criterion_main, Criterion};
use std::hint::black_box;

fn bench_forward_backward(c: &mut Criterion) {
    let config = {
        let mut c = ModelConfig::new(3, 10);
        c.embed_dim = 8;
        c.hidden_dim = 16;
        c
    };
    let model = ForecastModel::init(config).unwrap();
    let windows = random_windows(64, 10, 3, 5);
    let refs: Vec<_> = windows.iter().collect();

    c.bench_function("forward/window", |b| {
        b.iter(|| model.forward(black_box(refs[0])).unwrap())
    });
    c.bench_function("batch_gradients/64", |b| {
        b.iter(|| model.batch_gradients(black_box(&refs)).unwrap())
    });
}

fn bench_fit(c: &mut Criterion) {
    let mut config = ModelConfig::new(3, 10);
    config.embed_dim = 8;
    config.hidden_dim = 16;
    config.max_epochs = 2;
    config.patience = 2;
    let windows = random_windows(256, 10, 3, 9);

    let mut group = c.benchmark_group("fit");
    group.sample_size(10);
    group.bench_function("2_epochs_256_windows", |b| {
        b.iter(|| fit(black_box(&windows), &[], &config).unwrap())
    });
    group.finish();
}

criterion_group!(benches, bench_forward_backward, bench_fit);
criterion_main!(benches);
