use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use depthscene::layers::lstm::{lstm_step, LstmState, LstmWeights};
use depthscene::model::{build_dcnn, Network};
use depthscene::tensor::ops::{conv2d_backward, conv2d_forward};
use depthscene::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

fn conv(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let x = random(vec![12, 27, 27], &mut rng);
    let w = random(vec![32, 12, 3, 3], &mut rng);
    let b = random(vec![32], &mut rng);
    c.bench_function("conv3x3 12->32 27x27 forward", |bench| {
        bench.iter(|| conv2d_forward(black_box(&x), black_box(&w), &b, 1, 1).unwrap())
    });
    let g = random(vec![32, 27, 27], &mut rng);
    c.bench_function("conv3x3 12->32 27x27 backward", |bench| {
        bench.iter(|| {
            conv2d_backward(black_box(&x), black_box(&w), 1, 1, black_box(&g), true).unwrap()
        })
    });
}

fn lstm(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let w = LstmWeights::random(128, 896, &mut rng);
    let x = random(vec![896], &mut rng);
    let prev = LstmState::zero(128);
    c.bench_function("lstm step 896->128", |bench| {
        bench.iter(|| lstm_step(black_box(&x), black_box(&prev), &w).unwrap())
    });
}

fn dcnn(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let net = Network::new(build_dcnn([3, 27, 27], 10, 0.125).unwrap(), 0).unwrap();
    let x = random(vec![3, 27, 27], &mut rng);
    c.bench_function("dcnn forward 27x27 scale 1/8", |bench| {
        bench.iter(|| net.logits(black_box(&x)).unwrap())
    });
    let big = Network::new(build_dcnn([3, 119, 119], 10, 0.25).unwrap(), 0).unwrap();
    let x = random(vec![3, 119, 119], &mut rng);
    c.bench_function("dcnn forward 119x119 scale 1/4", |bench| {
        bench.iter(|| big.logits(black_box(&x)).unwrap())
    });
}

criterion_group!(benches, conv, lstm, dcnn);
criterion_main!(benches);
