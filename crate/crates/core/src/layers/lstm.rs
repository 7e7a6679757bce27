//! Gated recurrent cell without bias terms:
//!
//! ```text
//! i = σ(Wix·x + Wim·m)        f = σ(Wfx·x + Wfm·m)        o = σ(Wox·x + Wom·m)
//! c' = f ⊙ c + i ⊙ tanh(Wcx·x + Wcm·m)
//! m' = o ⊙ c'
//! ```
//!
//! The hidden state is the gated cell itself; there is no `tanh` on `c'`
//! before the output gate.

use rand::Rng;

use crate::error::{shape_err, Error, Result};
use crate::model::init::glorot_uniform;
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct LstmWeights {
    pub input_x: Tensor,
    pub input_m: Tensor,
    pub forget_x: Tensor,
    pub forget_m: Tensor,
    pub output_x: Tensor,
    pub output_m: Tensor,
    pub cell_x: Tensor,
    pub cell_m: Tensor,
}

/// Parameter-name suffixes, in storage order.
pub const LSTM_PARAM_NAMES: [&str; 8] = [
    "input_x", "input_m", "forget_x", "forget_m", "output_x", "output_m", "cell_x", "cell_m",
];

impl LstmWeights {
    pub fn zeros(hidden: usize, input: usize) -> Self {
        let x = || Tensor::zeros(vec![hidden, input]);
        let m = || Tensor::zeros(vec![hidden, hidden]);
        Self {
            input_x: x(),
            input_m: m(),
            forget_x: x(),
            forget_m: m(),
            output_x: x(),
            output_m: m(),
            cell_x: x(),
            cell_m: m(),
        }
    }

    pub fn random(hidden: usize, input: usize, rng: &mut impl Rng) -> Self {
        let mut w = Self::zeros(hidden, input);
        for (_, t) in w.named_mut() {
            let [rows, cols] = t.shape()[..] else {
                unreachable!()
            };
            *t = glorot_uniform(vec![rows, cols], cols, rows, rng);
        }
        w
    }

    /// Assembles weights from the eight matrices in [`LSTM_PARAM_NAMES`] order.
    pub fn from_parts(parts: [Tensor; 8]) -> Result<Self> {
        let [input_x, input_m, forget_x, forget_m, output_x, output_m, cell_x, cell_m] = parts;
        let w = Self {
            input_x,
            input_m,
            forget_x,
            forget_m,
            output_x,
            output_m,
            cell_x,
            cell_m,
        };
        w.validate()?;
        Ok(w)
    }

    pub fn hidden(&self) -> usize {
        self.input_x.shape()[0]
    }

    pub fn input_width(&self) -> usize {
        self.input_x.shape()[1]
    }

    pub fn validate(&self) -> Result<()> {
        let (h, n) = match self.input_x.shape()[..] {
            [h, n] => (h, n),
            _ => return Err(shape_err("lstm", "input_x must be a matrix")),
        };
        for (name, t) in self.named() {
            let expect = if name.ends_with("_x") { [h, n] } else { [h, h] };
            if t.shape() != expect {
                return Err(shape_err(
                    "lstm",
                    format!("{name} is {:?}, expected {expect:?}", t.shape()),
                ));
            }
        }
        Ok(())
    }

    pub fn named(&self) -> [(&'static str, &Tensor); 8] {
        [
            ("input_x", &self.input_x),
            ("input_m", &self.input_m),
            ("forget_x", &self.forget_x),
            ("forget_m", &self.forget_m),
            ("output_x", &self.output_x),
            ("output_m", &self.output_m),
            ("cell_x", &self.cell_x),
            ("cell_m", &self.cell_m),
        ]
    }

    pub fn named_mut(&mut self) -> [(&'static str, &mut Tensor); 8] {
        [
            ("input_x", &mut self.input_x),
            ("input_m", &mut self.input_m),
            ("forget_x", &mut self.forget_x),
            ("forget_m", &mut self.forget_m),
            ("output_x", &mut self.output_x),
            ("output_m", &mut self.output_m),
            ("cell_x", &mut self.cell_x),
            ("cell_m", &mut self.cell_m),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LstmState {
    /// Memory cell.
    pub c: Tensor,
    /// Hidden state.
    pub m: Tensor,
}

impl LstmState {
    pub fn zero(hidden: usize) -> Self {
        Self {
            c: Tensor::zeros(vec![hidden]),
            m: Tensor::zeros(vec![hidden]),
        }
    }
}

/// Forward intermediates of one step.
#[derive(Debug, Clone)]
pub struct StepCache {
    pub x: Tensor,
    pub prev: LstmState,
    pub input_gate: Vec<f64>,
    pub forget_gate: Vec<f64>,
    pub output_gate: Vec<f64>,
    pub candidate: Vec<f64>,
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

/// `a·x + b·m`, each product summed sequentially.
fn affine2(a: &Tensor, x: &[f64], b: &Tensor, m: &[f64]) -> Vec<f64> {
    let (n, h) = (x.len(), m.len());
    let (ad, bd) = (a.data(), b.data());
    (0..h)
        .map(|r| {
            let mut acc = 0.0;
            for (w, v) in ad[r * n..(r + 1) * n].iter().zip(x) {
                acc += w * v;
            }
            let mut rec = 0.0;
            for (w, v) in bd[r * h..(r + 1) * h].iter().zip(m) {
                rec += w * v;
            }
            acc + rec
        })
        .collect()
}

fn step_cached(x: &Tensor, prev: &LstmState, w: &LstmWeights) -> Result<(LstmState, StepCache)> {
    let hidden = w.hidden();
    if x.len() != w.input_width() {
        return Err(shape_err(
            "lstm_step",
            format!(
                "input has {} values, weights expect {}",
                x.len(),
                w.input_width()
            ),
        ));
    }
    if prev.c.len() != hidden || prev.m.len() != hidden {
        return Err(shape_err(
            "lstm_step",
            format!(
                "state has {}/{} values, hidden size is {hidden}",
                prev.c.len(),
                prev.m.len()
            ),
        ));
    }
    let (xd, md) = (x.data(), prev.m.data());
    let i: Vec<f64> = affine2(&w.input_x, xd, &w.input_m, md)
        .into_iter()
        .map(sigmoid)
        .collect();
    let f: Vec<f64> = affine2(&w.forget_x, xd, &w.forget_m, md)
        .into_iter()
        .map(sigmoid)
        .collect();
    let o: Vec<f64> = affine2(&w.output_x, xd, &w.output_m, md)
        .into_iter()
        .map(sigmoid)
        .collect();
    let g: Vec<f64> = affine2(&w.cell_x, xd, &w.cell_m, md)
        .into_iter()
        .map(f64::tanh)
        .collect();
    let c: Vec<f64> = (0..hidden)
        .map(|k| f[k] * prev.c.data()[k] + i[k] * g[k])
        .collect();
    let m: Vec<f64> = (0..hidden).map(|k| o[k] * c[k]).collect();
    let next = LstmState {
        c: Tensor::vector(c),
        m: Tensor::vector(m),
    };
    let cache = StepCache {
        x: x.clone(),
        prev: prev.clone(),
        input_gate: i,
        forget_gate: f,
        output_gate: o,
        candidate: g,
    };
    Ok((next, cache))
}

pub fn lstm_step(x: &Tensor, prev: &LstmState, w: &LstmWeights) -> Result<LstmState> {
    step_cached(x, prev, w).map(|(s, _)| s)
}

/// Every state of an unrolled sequence plus the caches needed for BPTT.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// `states[t]` is the state after consuming `xs[t]`.
    pub states: Vec<LstmState>,
    pub steps: Vec<StepCache>,
}

impl LstmTrace {
    pub fn final_state(&self) -> &LstmState {
        self.states.last().expect("trace is never empty")
    }
}

/// Runs the cell over `xs` from the zero state.
pub fn lstm_unroll(xs: &[Tensor], w: &LstmWeights) -> Result<LstmTrace> {
    if xs.is_empty() {
        return Err(Error::Empty("lstm sequence"));
    }
    let mut state = LstmState::zero(w.hidden());
    let mut states = Vec::with_capacity(xs.len());
    let mut steps = Vec::with_capacity(xs.len());
    for x in xs {
        let (next, cache) = step_cached(x, &state, w)?;
        steps.push(cache);
        states.push(next.clone());
        state = next;
    }
    Ok(LstmTrace { states, steps })
}

/// Backpropagation through time for a loss that depends on the final hidden
/// state only. Returns weight gradients (same layout as the weights) and the
/// gradient with respect to every input `x_t`.
pub fn lstm_backward(
    trace: &LstmTrace,
    w: &LstmWeights,
    grad_final_m: &Tensor,
) -> Result<(LstmWeights, Vec<Tensor>)> {
    let hidden = w.hidden();
    let n = w.input_width();
    if grad_final_m.len() != hidden {
        return Err(shape_err(
            "lstm_backward",
            format!(
                "gradient has {} values, hidden size is {hidden}",
                grad_final_m.len()
            ),
        ));
    }
    let mut grads = LstmWeights::zeros(hidden, n);
    let mut dxs = vec![Tensor::zeros(vec![n]); trace.steps.len()];
    let mut dm = grad_final_m.data().to_vec();
    let mut dc = vec![0.0; hidden];

    for (t, cache) in trace.steps.iter().enumerate().rev() {
        let c = trace.states[t].c.data();
        let c_prev = cache.prev.c.data();
        let (i, f, o, g) = (
            &cache.input_gate,
            &cache.forget_gate,
            &cache.output_gate,
            &cache.candidate,
        );
        // pre-activation gradients of the four affine maps
        let mut d_in = vec![0.0; hidden];
        let mut d_forget = vec![0.0; hidden];
        let mut d_out = vec![0.0; hidden];
        let mut d_cell = vec![0.0; hidden];
        let mut dc_prev = vec![0.0; hidden];
        for k in 0..hidden {
            let dct = dc[k] + dm[k] * o[k];
            d_out[k] = dm[k] * c[k] * o[k] * (1.0 - o[k]);
            d_forget[k] = dct * c_prev[k] * f[k] * (1.0 - f[k]);
            d_in[k] = dct * g[k] * i[k] * (1.0 - i[k]);
            d_cell[k] = dct * i[k] * (1.0 - g[k] * g[k]);
            dc_prev[k] = dct * f[k];
        }

        let x = cache.x.data();
        let m_prev = cache.prev.m.data();
        let dx = dxs[t].data_mut();
        let mut dm_prev = vec![0.0; hidden];
        for (pre, wx, wm, gx, gm) in [
            (
                &d_in,
                &w.input_x,
                &w.input_m,
                &mut grads.input_x,
                &mut grads.input_m,
            ),
            (
                &d_forget,
                &w.forget_x,
                &w.forget_m,
                &mut grads.forget_x,
                &mut grads.forget_m,
            ),
            (
                &d_out,
                &w.output_x,
                &w.output_m,
                &mut grads.output_x,
                &mut grads.output_m,
            ),
            (
                &d_cell,
                &w.cell_x,
                &w.cell_m,
                &mut grads.cell_x,
                &mut grads.cell_m,
            ),
        ] {
            let (gx, gm) = (gx.data_mut(), gm.data_mut());
            let (wx, wm) = (wx.data(), wm.data());
            for (r, &d) in pre.iter().enumerate() {
                for (j, &xv) in x.iter().enumerate() {
                    gx[r * n + j] += d * xv;
                    dx[j] += wx[r * n + j] * d;
                }
                for (j, &mv) in m_prev.iter().enumerate() {
                    gm[r * hidden + j] += d * mv;
                    dm_prev[j] += wm[r * hidden + j] * d;
                }
            }
        }
        dm = dm_prev;
        dc = dc_prev;
    }
    Ok((grads, dxs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_weights_halve_the_cell() {
        let w = LstmWeights::zeros(3, 2);
        let prev = LstmState {
            c: Tensor::vector(vec![1.0, -2.0, 0.4]),
            m: Tensor::vector(vec![0.3, 0.3, 0.3]),
        };
        let next = lstm_step(&Tensor::vector(vec![5.0, -1.0]), &prev, &w).unwrap();
        assert_eq!(next.c.data(), &[0.5, -1.0, 0.2]);
        assert_eq!(next.m.data(), &[0.25, -0.5, 0.1]);
    }

    #[test]
    fn zero_candidate_from_zero_state() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut w = LstmWeights::random(4, 3, &mut rng);
        w.cell_x = Tensor::zeros(vec![4, 3]);
        let next = lstm_step(
            &Tensor::vector(vec![0.2, 0.9, -0.4]),
            &LstmState::zero(4),
            &w,
        )
        .unwrap();
        assert!(next.c.data().iter().all(|&v| v == 0.0));
        assert!(next.m.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn unroll_of_one_matches_a_step() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let w = LstmWeights::random(5, 3, &mut rng);
        let x = Tensor::vector(vec![0.1, -0.7, 1.3]);
        let trace = lstm_unroll(std::slice::from_ref(&x), &w).unwrap();
        let step = lstm_step(&x, &LstmState::zero(5), &w).unwrap();
        assert_eq!(trace.final_state(), &step);
        assert!(lstm_unroll(&[], &w).is_err());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let w = LstmWeights::zeros(2, 3);
        assert!(lstm_step(&Tensor::zeros(vec![4]), &LstmState::zero(2), &w).is_err());
        assert!(lstm_step(&Tensor::zeros(vec![3]), &LstmState::zero(3), &w).is_err());
        let mut bad = LstmWeights::zeros(2, 3);
        bad.cell_m = Tensor::zeros(vec![2, 3]);
        assert!(bad.validate().is_err());
    }
}
