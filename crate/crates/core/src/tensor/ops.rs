//! Layer primitives with explicit forward and backward passes.
//!
//! Matrix products are written in "axpy" order (`out[i, :] += a[i, k] * b[k, :]`)
//! so that each output element is summed sequentially over `k` while the inner
//! loop still vectorizes. Results are therefore independent of any blocking.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Output extent of a sliding window, or `None` when the window does not fit.
pub fn window_out_dim(size: usize, window: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || window == 0 || window > size + 2 * pad {
        return None;
    }
    Some((size + 2 * pad - window) / stride + 1)
}

struct ConvGeom {
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    pad: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, weights: &Tensor, stride: usize, pad: usize) -> Result<Self> {
        let (c, h, w) = input.chw()?;
        let [k, wc, kh, kw] = weights.shape()[..] else {
            return Err(shape_err(
                "conv2d",
                format!("weights must be K×C×kh×kw, got {:?}", weights.shape()),
            ));
        };
        if wc != c {
            return Err(shape_err(
                "conv2d",
                format!("input has {c} channels but weights expect {wc}"),
            ));
        }
        if stride == 0 {
            return Err(Error::InvalidArgument("conv2d stride must be >= 1".into()));
        }
        let (Some(oh), Some(ow)) = (
            window_out_dim(h, kh, stride, pad),
            window_out_dim(w, kw, stride, pad),
        ) else {
            return Err(shape_err(
                "conv2d",
                format!("kernel {kh}×{kw} exceeds padded input {h}×{w} (pad {pad})"),
            ));
        };
        Ok(Self {
            c,
            h,
            w,
            k,
            kh,
            kw,
            oh,
            ow,
            stride,
            pad,
        })
    }

    fn q(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn p(&self) -> usize {
        self.oh * self.ow
    }

    /// Visits every (row q, column p, input index) triple of the unfolded input
    /// whose receptive-field site falls inside the image.
    #[inline]
    fn for_each_site(&self, mut f: impl FnMut(usize, usize, usize)) {
        for ci in 0..self.c {
            for i in 0..self.kh {
                for j in 0..self.kw {
                    let q = (ci * self.kh + i) * self.kw + j;
                    for oy in 0..self.oh {
                        let y = (oy * self.stride + i) as isize - self.pad as isize;
                        if y < 0 || y >= self.h as isize {
                            continue;
                        }
                        let row = (ci * self.h + y as usize) * self.w;
                        for ox in 0..self.ow {
                            let x = (ox * self.stride + j) as isize - self.pad as isize;
                            if x < 0 || x >= self.w as isize {
                                continue;
                            }
                            f(q, oy * self.ow + ox, row + x as usize);
                        }
                    }
                }
            }
        }
    }

    /// Unfolds the input to a Q×P matrix (zero padding).
    fn im2col(&self, input: &[f64]) -> Vec<f64> {
        let p = self.p();
        let mut cols = vec![0.0; self.q() * p];
        self.for_each_site(|q, col, idx| cols[q * p + col] = input[idx]);
        cols
    }

    /// Unfolds the input to a P×Q matrix (the transpose of [`ConvGeom::im2col`]).
    fn im2row(&self, input: &[f64]) -> Vec<f64> {
        let q_len = self.q();
        let mut rows = vec![0.0; q_len * self.p()];
        self.for_each_site(|q, col, idx| rows[col * q_len + q] = input[idx]);
        rows
    }
}

/// 2-D cross-correlation over a C×H×W input with zero padding.
pub fn conv2d_forward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: usize,
    pad: usize,
) -> Result<Tensor> {
    let g = ConvGeom::new(input, weights, stride, pad)?;
    if bias.shape() != [g.k] {
        return Err(shape_err(
            "conv2d",
            format!("bias must have {} entries, got {:?}", g.k, bias.shape()),
        ));
    }
    let (q_len, p) = (g.q(), g.p());
    let cols = g.im2col(input.data());
    let w = weights.data();
    let mut out = vec![0.0; g.k * p];
    for (k, out_row) in out.chunks_exact_mut(p).enumerate() {
        let w_row = &w[k * q_len..(k + 1) * q_len];
        for (q, &wq) in w_row.iter().enumerate() {
            let col = &cols[q * p..(q + 1) * p];
            for (o, &x) in out_row.iter_mut().zip(col) {
                *o += wq * x;
            }
        }
        let b = bias.data()[k];
        for o in out_row.iter_mut() {
            *o += b;
        }
    }
    Tensor::new(vec![g.k, g.oh, g.ow], out)
}

#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    /// Present only when requested.
    pub input: Option<Tensor>,
}

pub fn conv2d_backward(
    input: &Tensor,
    weights: &Tensor,
    stride: usize,
    pad: usize,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<ConvGrads> {
    let g = ConvGeom::new(input, weights, stride, pad)?;
    if grad_out.shape() != [g.k, g.oh, g.ow] {
        return Err(shape_err(
            "conv2d_backward",
            format!(
                "output gradient {:?} does not match {:?}",
                grad_out.shape(),
                [g.k, g.oh, g.ow]
            ),
        ));
    }
    let (q_len, p) = (g.q(), g.p());
    let dout = grad_out.data();

    let db: Vec<f64> = dout.chunks_exact(p).map(|r| r.iter().sum()).collect();

    let rows = g.im2row(input.data());
    let mut dw = vec![0.0; g.k * q_len];
    for (k, dw_row) in dw.chunks_exact_mut(q_len).enumerate() {
        for (pi, &d) in dout[k * p..(k + 1) * p].iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &rows[pi * q_len..(pi + 1) * q_len];
            for (acc, &x) in dw_row.iter_mut().zip(row) {
                *acc += d * x;
            }
        }
    }

    let dinput = if need_input_grad {
        let w = weights.data();
        let mut dcols = vec![0.0; q_len * p];
        for (q, dcol) in dcols.chunks_exact_mut(p).enumerate() {
            for k in 0..g.k {
                let wq = w[k * q_len + q];
                let drow = &dout[k * p..(k + 1) * p];
                for (acc, &d) in dcol.iter_mut().zip(drow) {
                    *acc += wq * d;
                }
            }
        }
        let mut dx = vec![0.0; g.c * g.h * g.w];
        g.for_each_site(|q, col, idx| dx[idx] += dcols[q * p + col]);
        Some(Tensor::new(vec![g.c, g.h, g.w], dx)?)
    } else {
        None
    };

    Ok(ConvGrads {
        weights: Tensor::new(weights.shape().to_vec(), dw)?,
        bias: Tensor::vector(db),
        input: dinput,
    })
}

/// Max pooling; returns the pooled map and, for every output, the flat input
/// index it was taken from (first maximum in row-major scan order).
pub fn maxpool_forward(
    input: &Tensor,
    window: usize,
    stride: usize,
) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    if stride == 0 {
        return Err(Error::InvalidArgument("maxpool stride must be >= 1".into()));
    }
    let (Some(oh), Some(ow)) = (
        window_out_dim(h, window, stride, 0),
        window_out_dim(w, window, stride, 0),
    ) else {
        return Err(shape_err(
            "maxpool",
            format!("window {window} larger than spatial extent {h}×{w}"),
        ));
    };
    let x = input.data();
    let mut out = Vec::with_capacity(c * oh * ow);
    let mut idx = Vec::with_capacity(c * oh * ow);
    for ci in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut best = (ci * h + oy * stride) * w + ox * stride;
                for dy in 0..window {
                    let row = (ci * h + oy * stride + dy) * w + ox * stride;
                    for i in row..row + window {
                        if x[i] > x[best] {
                            best = i;
                        }
                    }
                }
                out.push(x[best]);
                idx.push(best);
            }
        }
    }
    Ok((Tensor::new(vec![c, oh, ow], out)?, idx))
}

/// Routes each output gradient to the input site recorded in `argmax`.
pub fn scatter_max_backward(
    input_shape: &[usize],
    argmax: &[usize],
    grad_out: &Tensor,
) -> Result<Tensor> {
    if argmax.len() != grad_out.len() {
        return Err(shape_err(
            "max_backward",
            format!("{} indices for {} gradients", argmax.len(), grad_out.len()),
        ));
    }
    let mut dx = Tensor::zeros(input_shape.to_vec());
    let d = dx.data_mut();
    for (&i, &g) in argmax.iter().zip(grad_out.data()) {
        d[i] += g;
    }
    Ok(dx)
}

pub fn relu(input: &Tensor) -> Tensor {
    let mut out = input.clone();
    for v in out.data_mut() {
        if *v <= 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// Masks `grad_out` wherever the forward input was `<= 0`.
pub fn relu_backward(input: &Tensor, grad_out: &Tensor) -> Result<Tensor> {
    input.expect_same_shape("relu_backward", grad_out)?;
    let mut dx = grad_out.clone();
    for (d, &x) in dx.data_mut().iter_mut().zip(input.data()) {
        if x <= 0.0 {
            *d = 0.0;
        }
    }
    Ok(dx)
}

fn fc_dims(op: &'static str, input: &Tensor, weights: &Tensor) -> Result<(usize, usize)> {
    let [m, n] = weights.shape()[..] else {
        return Err(shape_err(
            op,
            format!("weights must be m×n, got {:?}", weights.shape()),
        ));
    };
    if input.len() != n {
        return Err(shape_err(
            op,
            format!("input has {} values but weights expect {n}", input.len()),
        ));
    }
    Ok((m, n))
}

/// `weights · input + bias`; the input is read as a flat vector.
pub fn fc_forward(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (m, n) = fc_dims("fc", input, weights)?;
    if bias.shape() != [m] {
        return Err(shape_err(
            "fc",
            format!("bias must have {m} entries, got {:?}", bias.shape()),
        ));
    }
    let x = input.data();
    let w = weights.data();
    let out = (0..m)
        .map(|i| {
            let row = &w[i * n..(i + 1) * n];
            let mut acc = 0.0;
            for (a, b) in row.iter().zip(x) {
                acc += a * b;
            }
            acc + bias.data()[i]
        })
        .collect();
    Ok(Tensor::vector(out))
}

#[derive(Debug, Clone)]
pub struct FcGrads {
    pub weights: Tensor,
    pub bias: Tensor,
    /// Flat gradient with respect to the input, when requested.
    pub input: Option<Tensor>,
}

pub fn fc_backward(
    input: &Tensor,
    weights: &Tensor,
    grad_out: &Tensor,
    need_input_grad: bool,
) -> Result<FcGrads> {
    let (m, n) = fc_dims("fc_backward", input, weights)?;
    if grad_out.len() != m {
        return Err(shape_err(
            "fc_backward",
            format!(
                "output gradient has {} values, expected {m}",
                grad_out.len()
            ),
        ));
    }
    let x = input.data();
    let d = grad_out.data();
    let mut dw = vec![0.0; m * n];
    for (row, &di) in dw.chunks_exact_mut(n).zip(d) {
        for (acc, &xj) in row.iter_mut().zip(x) {
            *acc = di * xj;
        }
    }
    let dinput = if need_input_grad {
        let w = weights.data();
        let mut dx = vec![0.0; n];
        for (i, &di) in d.iter().enumerate() {
            for (acc, &wij) in dx.iter_mut().zip(&w[i * n..(i + 1) * n]) {
                *acc += wij * di;
            }
        }
        Some(Tensor::new(input.shape().to_vec(), dx)?)
    } else {
        None
    };
    Ok(FcGrads {
        weights: Tensor::new(vec![m, n], dw)?,
        bias: grad_out.clone().reshape(vec![m])?,
        input: dinput,
    })
}

pub fn softmax(logits: &Tensor) -> Tensor {
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Tensor::vector(exps.into_iter().map(|e| e / total).collect())
}

/// Returns `(−log p[label], p)` with the log-sum-exp evaluated after max subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let k = logits.len();
    if label >= k {
        return Err(Error::LabelOutOfRange { label, classes: k });
    }
    let z = logits.data();
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let sum_exp: f64 = z.iter().map(|v| (v - max).exp()).sum();
    let loss = sum_exp.ln() - (z[label] - max);
    Ok((loss, softmax(logits)))
}

/// Gradient of the cross-entropy with respect to the logits: `p − onehot(label)`.
pub fn softmax_cross_entropy_grad(probs: &Tensor, label: usize) -> Tensor {
    let mut g = probs.clone();
    g.data_mut()[label] -= 1.0;
    g
}
