//! Filter visualization as a tiled PPM image.

use std::path::Path;

use crate::data::pnm::save_image;
use crate::error::{Error, Result};
use crate::model::{LayerKind, Network};
use crate::tensor::Tensor;

const SEPARATOR: f64 = 1.0;

fn normalize(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi - lo <= 0.0 {
        return vec![0.5; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// Tiles the kernels of conv layer `layer` row-major into a 3×H×W image with
/// `ceil(sqrt(n))` columns and 1-pixel separators. Three-channel kernels are
/// drawn in colour; otherwise every input channel becomes a grey tile.
pub fn filter_grid(model: &Network, layer: &str) -> Result<Tensor> {
    let idx = model.layer_index(layer)?;
    if !matches!(model.spec().layers[idx].kind, LayerKind::Conv { .. }) {
        return Err(Error::InvalidArgument(format!(
            "layer `{layer}` is not convolutional"
        )));
    }
    let w = model
        .param(&format!("{layer}.weight"))
        .expect("conv weight");
    let &[_, in_c, kh, kw] = w.shape() else {
        unreachable!()
    };
    let plane = kh * kw;
    // tiles as (channels, values in channel-major order)
    let tiles: Vec<Vec<f64>> = if in_c == 3 {
        w.data().chunks_exact(3 * plane).map(normalize).collect()
    } else {
        w.data().chunks_exact(plane).map(normalize).collect()
    };
    let n = tiles.len();
    let cols = (1..).find(|c| c * c >= n).unwrap();
    let rows = n.div_ceil(cols);
    let (h, wd) = (rows * (kh + 1) + 1, cols * (kw + 1) + 1);
    let img_plane = h * wd;
    let mut img = vec![SEPARATOR; 3 * img_plane];
    for (t, tile) in tiles.iter().enumerate() {
        let (r, c) = (t / cols, t % cols);
        let (y0, x0) = (r * (kh + 1) + 1, c * (kw + 1) + 1);
        for ch in 0..3 {
            let src = if in_c == 3 { ch } else { 0 };
            for y in 0..kh {
                for x in 0..kw {
                    img[ch * img_plane + (y0 + y) * wd + x0 + x] = tile[src * plane + y * kw + x];
                }
            }
        }
    }
    Tensor::new(vec![3, h, wd], img)
}

pub fn export_filter_grid(model: &Network, layer: &str, path: impl AsRef<Path>) -> Result<()> {
    save_image(path, &filter_grid(model, layer)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::build_dcnn;

    #[test]
    fn grid_size() {
        let n = Network::new(build_dcnn([3, 15, 15], 2, 0.125).unwrap(), 1).unwrap();
        let g = filter_grid(&n, "conv1").unwrap();
        assert_eq!(g.shape(), &[3, 3 * 6 + 1, 4 * 6 + 1]);
    }

    #[test]
    fn constant_kernel_is_mid_grey() {
        let mut n = Network::new(build_dcnn([3, 15, 15], 2, 0.125).unwrap(), 1).unwrap();
        n.param_mut("conv1.weight").unwrap().data_mut()[..75].fill(0.2);
        let g = filter_grid(&n, "conv1").unwrap();
        let w = 25;
        for y in 1..6 {
            for x in 1..6 {
                assert_eq!(g.data()[y * w + x], 0.5);
            }
        }
        assert_eq!(g.data()[0], SEPARATOR);
    }
}
