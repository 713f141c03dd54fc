use criterion::{black_box, criterion_group, criterion_main, BenchmarkId, Criterion};
use rand::Rng;

use rfi_core::loss::ClassWeights;
use rfi_core::nn::{batch_loss_and_grad, Conv1d, ModelConfig, ModelParams, Parameters, RecurrentHead};
use rfi_core::rng::rng_from_seed;

fn noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = rng_from_seed(seed);
    (0..n).map(|_| rng.random_range(-1.0..1.0)).collect()
}

fn conv(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let layer = Conv1d::init(cfg.num_filters, cfg.kernel_len, cfg.stride, &mut rng_from_seed(1));
    let x = noise(cfg.input_len, 2);
    c.bench_function("conv1d_forward_5000x64x160", |b| b.iter(|| layer.forward(black_box(&x)).unwrap()));
}

fn bilstm(c: &mut Criterion) {
    let mut group = c.benchmark_group("recurrent_head");
    for hidden in [8, 16, 32] {
        let cfg = ModelConfig { hidden, ..ModelConfig::default() };
        let head = RecurrentHead::init(&cfg, 3);
        let seq = noise(31 * cfg.num_filters, 4);
        group.bench_with_input(BenchmarkId::new("forward", hidden), &hidden, |b, _| {
            b.iter(|| head.forward(black_box(&seq)).unwrap())
        });
        let trace = head.forward(&seq).unwrap();
        let upstream = vec![0.1; cfg.num_classes];
        group.bench_with_input(BenchmarkId::new("backward", hidden), &hidden, |b, _| {
            b.iter(|| {
                let mut grad = head.zeros_like();
                head.backward(&seq, &trace, black_box(&upstream), &mut grad).unwrap()
            })
        });
    }
    group.finish();
}

fn batch_gradient(c: &mut Criterion) {
    let cfg = ModelConfig::default();
    let model = ModelParams::init(&cfg, 5).unwrap();
    let xs: Vec<Vec<f64>> = (0..16).map(|i| noise(cfg.input_len, 10 + i)).collect();
    let refs: Vec<&[f64]> = xs.iter().map(|x| x.as_slice()).collect();
    let classes: Vec<usize> = (0..16).map(|i| i % cfg.num_classes).collect();
    let w = ClassWeights::uniform(cfg.num_classes);
    c.bench_function("batch_loss_and_grad_16", |b| {
        b.iter(|| batch_loss_and_grad(&model, black_box(&refs), &classes, &w).unwrap())
    });
}

criterion_group!(benches, conv, bilstm, batch_gradient);
criterion_main!(benches);
