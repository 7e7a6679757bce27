use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::ops::scatter_max_backward;
use crate::tensor::Tensor;

/// Pyramid levels as `(bins_h, bins_w)` grids.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SppSpec {
    pub levels: Vec<(usize, usize)>,
}

impl SppSpec {
    pub fn new(levels: Vec<(usize, usize)>) -> Result<Self> {
        if levels.is_empty() || levels.iter().any(|&(h, w)| h == 0 || w == 0) {
            return Err(Error::InvalidArgument(format!(
                "pyramid levels must be non-empty with positive bin counts, got {levels:?}"
            )));
        }
        Ok(Self { levels })
    }

    /// 1×1, 2×2 and 3×3 grids.
    pub fn canonical() -> Self {
        Self {
            levels: vec![(1, 1), (2, 2), (3, 3)],
        }
    }

    pub fn bins(&self) -> usize {
        self.levels.iter().map(|&(h, w)| h * w).sum()
    }

    pub fn output_len(&self, channels: usize) -> usize {
        channels * self.bins()
    }

    pub fn max_bins(&self) -> (usize, usize) {
        self.levels
            .iter()
            .fold((0, 0), |(a, b), &(h, w)| (a.max(h), b.max(w)))
    }

    pub fn check_input(&self, h: usize, w: usize) -> Result<()> {
        let (bh, bw) = self.max_bins();
        if h < bh || w < bw {
            return Err(shape_err(
                "spp",
                format!("{h}×{w} map cannot be split into {bh}×{bw} bins"),
            ));
        }
        Ok(())
    }
}

/// Half-open `[start, end)` of bin `i` out of `bins` over `size` pixels.
pub fn bin_range(i: usize, bins: usize, size: usize) -> (usize, usize) {
    (i * size / bins, (i + 1) * size / bins)
}

/// Pools every level's bins per channel and concatenates the levels in order,
/// channel-major within a level. Also returns the flat arg-max input index of
/// every output (first maximum in row-major order).
pub fn spp_forward(input: &Tensor, spec: &SppSpec) -> Result<(Tensor, Vec<usize>)> {
    let (c, h, w) = input.chw()?;
    spec.check_input(h, w)?;
    let x = input.data();
    let n = spec.output_len(c);
    let mut out = Vec::with_capacity(n);
    let mut idx = Vec::with_capacity(n);
    for &(bh, bw) in &spec.levels {
        for ci in 0..c {
            for by in 0..bh {
                let (y0, y1) = bin_range(by, bh, h);
                for bx in 0..bw {
                    let (x0, x1) = bin_range(bx, bw, w);
                    let mut best = (ci * h + y0) * w + x0;
                    for y in y0..y1 {
                        let row = (ci * h + y) * w;
                        for i in row + x0..row + x1 {
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
    }
    Ok((Tensor::vector(out), idx))
}

pub fn spp_backward(input_shape: &[usize], argmax: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    scatter_max_backward(input_shape, argmax, grad_out)
}
