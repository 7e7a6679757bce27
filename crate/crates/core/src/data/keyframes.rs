//! Blur scoring, keyframe selection and fixed-length segmentation of videos.

use crate::error::{shape_err, Error, Result};
use crate::tensor::Tensor;

/// Default number of raw frames per keyframe segment.
pub const DEFAULT_SEGMENT_LEN: usize = 5;

/// Mean absolute horizontal forward difference plus mean absolute vertical
/// forward difference, over all channels. Larger means sharper.
pub fn blur_score(image: &Tensor) -> Result<f64> {
    let (c, h, w) = image.chw()?;
    if h < 2 || w < 2 {
        return Err(shape_err(
            "blur_score",
            format!("need at least 2×2 pixels, got {h}×{w}"),
        ));
    }
    let d = image.data();
    let (mut horiz, mut vert) = (0.0, 0.0);
    for ch in 0..c {
        for y in 0..h {
            let row = (ch * h + y) * w;
            for x in 0..w {
                let v = d[row + x];
                if x + 1 < w {
                    horiz += (d[row + x + 1] - v).abs();
                }
                if y + 1 < h {
                    vert += (d[row + w + x] - v).abs();
                }
            }
        }
    }
    Ok(horiz / (c * h * (w - 1)) as f64 + vert / (c * (h - 1) * w) as f64)
}

/// Splits `scores` into consecutive segments of `segment_len` (the last may be
/// shorter) and returns the index of the highest score in each, earliest on ties.
pub fn select_keyframe_indices(scores: &[f64], segment_len: usize) -> Result<Vec<usize>> {
    if segment_len == 0 {
        return Err(Error::InvalidArgument(
            "segment length must be at least 1".into(),
        ));
    }
    if scores.is_empty() {
        return Err(Error::Empty("frame list"));
    }
    Ok(scores
        .chunks(segment_len)
        .enumerate()
        .map(|(s, seg)| {
            let mut best = 0;
            for (i, &v) in seg.iter().enumerate() {
                if v > seg[best] {
                    best = i;
                }
            }
            s * segment_len + best
        })
        .collect())
}

/// Keeps the sharpest frame of every `segment_len` consecutive frames.
pub fn select_keyframes(frames: &[Tensor], segment_len: usize) -> Result<Vec<Tensor>> {
    let scores = frames.iter().map(blur_score).collect::<Result<Vec<_>>>()?;
    Ok(select_keyframe_indices(&scores, segment_len)?
        .into_iter()
        .map(|i| frames[i].clone())
        .collect())
}

/// Non-overlapping windows of exactly `len` items; a trailing remainder is
/// dropped. Returns nothing (with a warning) when fewer than `len` items exist.
pub fn segment_sequence<T: Clone>(items: &[T], len: usize) -> Vec<Vec<T>> {
    if len == 0 {
        log::warn!("segment length 0 requested; no segments produced");
        return Vec::new();
    }
    if items.len() < len {
        log::warn!(
            "sequence of {} keyframes is shorter than segment length {len}",
            items.len()
        );
        return Vec::new();
    }
    items.chunks_exact(len).map(<[T]>::to_vec).collect()
}
