use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Reserved depth value for pixels the sensor could not measure.
pub const MISSING_DEPTH: f64 = 0.0;

fn clamp01(v: f64) -> f64 {
    v.clamp(0.0, 1.0)
}

/// Piecewise-linear jet colormap of a value in `[0, 1]`.
pub fn jet(v: f64) -> [f64; 3] {
    [
        clamp01(1.5 - (4.0 * v - 3.0).abs()),
        clamp01(1.5 - (4.0 * v - 2.0).abs()),
        clamp01(1.5 - (4.0 * v - 1.0).abs()),
    ]
}

/// Pixels holding [`MISSING_DEPTH`].
pub fn missing_mask(depth: &Tensor) -> Vec<bool> {
    depth.data().iter().map(|&v| v == MISSING_DEPTH).collect()
}

/// Encodes a 1×H×W depth map as a 3×H×W jet image; masked pixels become black.
pub fn jet_encode(depth: &Tensor, missing: &[bool]) -> Result<Tensor> {
    let (c, h, w) = depth.chw()?;
    if c != 1 {
        return Err(shape_err(
            "jet_encode",
            format!("expected 1 channel, got {c}"),
        ));
    }
    if missing.len() != h * w {
        return Err(shape_err(
            "jet_encode",
            format!("mask has {} entries for {h}×{w} pixels", missing.len()),
        ));
    }
    let plane = h * w;
    let mut out = vec![0.0; 3 * plane];
    for (i, (&v, &miss)) in depth.data().iter().zip(missing).enumerate() {
        if miss {
            continue;
        }
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::InvalidArgument(format!(
                "depth {v} at pixel {i} lies outside [0, 1]"
            )));
        }
        let [r, g, b] = jet(v);
        out[i] = r;
        out[plane + i] = g;
        out[2 * plane + i] = b;
    }
    Tensor::new(vec![3, h, w], out)
}
