#![allow(dead_code)]

use depthscene::layers::lstm::{lstm_backward, lstm_unroll, LstmWeights};
use depthscene::layers::spp::{spp_backward, spp_forward, SppSpec};
use depthscene::model::{build_dcnn, Network};
use depthscene::tensor::gradcheck::{finite_diff_grad, max_relative_error};
use depthscene::tensor::ops::{
    conv2d_backward, conv2d_forward, fc_backward, fc_forward, maxpool_forward, relu, relu_backward,
    scatter_max_backward, softmax_cross_entropy, softmax_cross_entropy_grad,
};
use depthscene::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const EPS: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Values at least 0.05 away from zero, so relu kinks are out of reach of the probe.
pub fn away_from_zero(shape: Vec<usize>, rng: &mut ChaCha8Rng) -> Tensor {
    let n = shape.iter().product();
    let v = (0..n)
        .map(|_| {
            let m = rng.gen_range(0.05..1.0);
            if rng.gen_bool(0.5) {
                m
            } else {
                -m
            }
        })
        .collect();
    Tensor::new(shape, v).unwrap()
}

pub fn dot(a: &Tensor, b: &Tensor) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

fn numeric(f: impl FnMut(&Tensor) -> f64, x: &Tensor) -> Tensor {
    let mut f = f;
    finite_diff_grad(|t| Ok(f(t)), x, EPS).unwrap()
}

fn err(analytic: &Tensor, f: impl FnMut(&Tensor) -> f64, x: &Tensor) -> f64 {
    max_relative_error(analytic, &numeric(f, x)).unwrap()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Layer {
    Conv,
    Pool,
    Fc,
    Spp,
    Relu,
    SoftmaxCe,
    LstmStep,
    Bptt,
}

pub const LAYERS: [Layer; 8] = [
    Layer::Conv,
    Layer::Pool,
    Layer::Fc,
    Layer::Spp,
    Layer::Relu,
    Layer::SoftmaxCe,
    Layer::LstmStep,
    Layer::Bptt,
];

/// Largest relative error between analytic and central-difference gradients
/// of every input of `layer` on the instance drawn from `seed`.
pub fn gradient_error(layer: Layer, seed: u64) -> f64 {
    let mut r = rng(seed ^ 0xC0FFEE);
    match layer {
        Layer::Conv => {
            let c = r.gen_range(1..=3);
            let k = r.gen_range(1..=3);
            let kernel = r.gen_range(1..=3);
            let stride = r.gen_range(1..=2);
            let pad = r.gen_range(0..=1);
            let h = r.gen_range(kernel + 1..=kernel + 4);
            let w = r.gen_range(kernel + 1..=kernel + 4);
            let x = random(vec![c, h, w], &mut r);
            let wt = random(vec![k, c, kernel, kernel], &mut r);
            let b = random(vec![k], &mut r);
            let out = conv2d_forward(&x, &wt, &b, stride, pad).unwrap();
            let proj = random(out.shape().to_vec(), &mut r);
            let g = conv2d_backward(&x, &wt, stride, pad, &proj, true).unwrap();
            let e1 = err(
                &g.input.unwrap(),
                |t| dot(&conv2d_forward(t, &wt, &b, stride, pad).unwrap(), &proj),
                &x,
            );
            let e2 = err(
                &g.weights,
                |t| dot(&conv2d_forward(&x, t, &b, stride, pad).unwrap(), &proj),
                &wt,
            );
            let e3 = err(
                &g.bias,
                |t| dot(&conv2d_forward(&x, &wt, t, stride, pad).unwrap(), &proj),
                &b,
            );
            e1.max(e2).max(e3)
        }
        Layer::Pool => {
            let c = r.gen_range(1..=3);
            let window = r.gen_range(2..=3);
            let stride = r.gen_range(1..=window);
            let h = r.gen_range(window..=window + 4);
            let w = r.gen_range(window..=window + 4);
            let x = random(vec![c, h, w], &mut r);
            let (out, arg) = maxpool_forward(&x, window, stride).unwrap();
            let proj = random(out.shape().to_vec(), &mut r);
            let g = scatter_max_backward(x.shape(), &arg, &proj).unwrap();
            err(
                &g,
                |t| dot(&maxpool_forward(t, window, stride).unwrap().0, &proj),
                &x,
            )
        }
        Layer::Fc => {
            let n = r.gen_range(1..=12);
            let m = r.gen_range(1..=8);
            let x = random(vec![n], &mut r);
            let wt = random(vec![m, n], &mut r);
            let b = random(vec![m], &mut r);
            let proj = random(vec![m], &mut r);
            let g = fc_backward(&x, &wt, &proj, true).unwrap();
            let e1 = err(
                &g.input.unwrap(),
                |t| dot(&fc_forward(t, &wt, &b).unwrap(), &proj),
                &x,
            );
            let e2 = err(
                &g.weights,
                |t| dot(&fc_forward(&x, t, &b).unwrap(), &proj),
                &wt,
            );
            let e3 = err(
                &g.bias,
                |t| dot(&fc_forward(&x, &wt, t).unwrap(), &proj),
                &b,
            );
            e1.max(e2).max(e3)
        }
        Layer::Spp => {
            let c = r.gen_range(1..=3);
            let h = r.gen_range(3..=9);
            let w = r.gen_range(3..=9);
            let spec = SppSpec::canonical();
            let x = random(vec![c, h, w], &mut r);
            let (out, arg) = spp_forward(&x, &spec).unwrap();
            let proj = random(out.shape().to_vec(), &mut r);
            let g = spp_backward(x.shape(), &arg, &proj).unwrap();
            err(&g, |t| dot(&spp_forward(t, &spec).unwrap().0, &proj), &x)
        }
        Layer::Relu => {
            let n = r.gen_range(1..=20);
            let x = away_from_zero(vec![n], &mut r);
            let proj = random(vec![n], &mut r);
            let g = relu_backward(&x, &proj).unwrap();
            err(&g, |t| dot(&relu(t), &proj), &x)
        }
        Layer::SoftmaxCe => {
            let k = r.gen_range(2..=10);
            let label = r.gen_range(0..k);
            let mut logits = random(vec![k], &mut r);
            logits.scale(3.0);
            let (_, probs) = softmax_cross_entropy(&logits, label).unwrap();
            let g = softmax_cross_entropy_grad(&probs, label);
            err(&g, |t| softmax_cross_entropy(t, label).unwrap().0, &logits)
        }
        Layer::LstmStep | Layer::Bptt => {
            let steps = if layer == Layer::LstmStep {
                1
            } else {
                r.gen_range(2..=4)
            };
            let hidden = r.gen_range(1..=5);
            let input = r.gen_range(1..=6);
            let w = LstmWeights::random(hidden, input, &mut r);
            let xs: Vec<Tensor> = (0..steps).map(|_| random(vec![input], &mut r)).collect();
            let proj = random(vec![hidden], &mut r);
            let trace = lstm_unroll(&xs, &w).unwrap();
            let (gw, gx) = lstm_backward(&trace, &w, &proj).unwrap();
            let objective = |w: &LstmWeights, xs: &[Tensor]| {
                dot(&lstm_unroll(xs, w).unwrap().final_state().m, &proj)
            };
            let mut worst: f64 = 0.0;
            for (t, g) in gx.iter().enumerate() {
                worst = worst.max(err(
                    g,
                    |v| {
                        let mut xs = xs.clone();
                        xs[t] = v.clone();
                        objective(&w, &xs)
                    },
                    &xs[t],
                ));
            }
            let names = w.named().map(|(n, _)| n);
            let analytic = gw.named();
            for (i, name) in names.iter().enumerate() {
                let base = w.named()[i].1.clone();
                worst = worst.max(err(
                    analytic[i].1,
                    |v| {
                        let mut w2 = w.clone();
                        let slot = w2
                            .named_mut()
                            .into_iter()
                            .find(|(n, _)| n == name)
                            .unwrap()
                            .1;
                        *slot = v.clone();
                        objective(&w2, &xs)
                    },
                    &base,
                ));
            }
            worst
        }
    }
}

/// Largest error of `layer` over `seeds`.
pub fn sweep(layer: Layer, seeds: std::ops::Range<u64>) -> f64 {
    seeds.map(|s| gradient_error(layer, s)).fold(0.0, f64::max)
}

/// A scale-1/16 depth network on 15×15 inputs.
pub fn tiny_dcnn(classes: usize, seed: u64) -> Network {
    Network::new(build_dcnn([3, 15, 15], classes, 1.0 / 16.0).unwrap(), seed).unwrap()
}
