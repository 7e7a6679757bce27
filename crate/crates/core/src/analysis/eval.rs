//! Accuracy of trained models over datasets and video collections.

use crate::analysis::metrics::{average_predictions, EvalReport};
use crate::data::{Dataset, SceneSample};
use crate::error::{Error, Result};
use crate::model::{Network, RgbdImageModel, RgbdVideoModel, VideoModel};
use crate::tensor::ops::softmax;
use crate::tensor::Tensor;
use crate::train::procedures::sequence_segments;
use crate::train::wsvm::LinearClassifier;

fn report(preds: Vec<usize>, labels: Vec<usize>, classes: usize) -> Result<EvalReport> {
    EvalReport::new(&preds, &labels, classes)
}

pub fn evaluate_images(net: &Network, ds: &Dataset) -> Result<EvalReport> {
    let preds = ds
        .samples
        .iter()
        .map(|s| Ok(net.logits(&s.input)?.argmax()))
        .collect::<Result<Vec<_>>>()?;
    report(preds, ds.labels(), net.spec().num_classes)
}

pub fn evaluate_rgbd_images(model: &RgbdImageModel, samples: &[SceneSample]) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(samples.len());
    for s in samples {
        let (Some(r), Some(d)) = (&s.rgb, &s.depth) else {
            return Err(Error::Empty("RGB-D sample lacks a modality"));
        };
        preds.push(model.logits(r, d)?.argmax());
    }
    report(
        preds,
        samples.iter().map(|s| s.label).collect(),
        model.fusion.spec.num_classes,
    )
}

/// A linear classifier over penultimate CNN features.
pub fn evaluate_linear(net: &Network, clf: &LinearClassifier, ds: &Dataset) -> Result<EvalReport> {
    let preds = ds
        .samples
        .iter()
        .map(|s| clf.predict(&net.features(&s.input)?))
        .collect::<Result<Vec<_>>>()?;
    report(preds, ds.labels(), clf.layer.out_width())
}

/// Averages per-keyframe class probabilities over each whole video.
pub fn evaluate_ave(net: &Network, sequences: &[(Vec<Tensor>, usize)]) -> Result<EvalReport> {
    let mut preds = Vec::with_capacity(sequences.len());
    for (frames, _) in sequences {
        let probs = frames
            .iter()
            .map(|f| Ok(softmax(&net.logits(f)?)))
            .collect::<Result<Vec<_>>>()?;
        preds.push(average_predictions(&probs)?.argmax());
    }
    report(
        preds,
        sequences.iter().map(|s| s.1).collect(),
        net.spec().num_classes,
    )
}

/// Classifies every length-`t` segment of every video; each segment counts once.
pub fn evaluate_video(
    model: &VideoModel,
    sequences: &[(Vec<Tensor>, usize)],
    t: usize,
) -> Result<EvalReport> {
    let segments = sequence_segments(sequences, t);
    if segments.is_empty() {
        return Err(Error::Empty("segments of the requested length"));
    }
    let preds = segments
        .iter()
        .map(|s| Ok(model.logits(&s.items)?.argmax()))
        .collect::<Result<Vec<_>>>()?;
    report(
        preds,
        segments.iter().map(|s| s.label).collect(),
        model.num_classes(),
    )
}

pub fn evaluate_rgbd_video(
    model: &RgbdVideoModel,
    rgb: &[(Vec<Tensor>, usize)],
    depth: &[(Vec<Tensor>, usize)],
    t: usize,
) -> Result<EvalReport> {
    let r = sequence_segments(rgb, t);
    let d = sequence_segments(depth, t);
    if r.len() != d.len() {
        return Err(Error::InvalidArgument(
            "RGB and depth sequences are not aligned".into(),
        ));
    }
    if r.is_empty() {
        return Err(Error::Empty("segments of the requested length"));
    }
    let preds = r
        .iter()
        .zip(&d)
        .map(|(a, b)| Ok(model.logits(&a.items, &b.items)?.argmax()))
        .collect::<Result<Vec<_>>>()?;
    report(
        preds,
        r.iter().map(|s| s.label).collect(),
        model.fusion.spec.num_classes,
    )
}
