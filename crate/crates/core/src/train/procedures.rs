//! Multi-stage training: patch pretraining then full-image fine-tuning, and
//! the video pipeline of per-frame CNNs, temporal embedding and joint
//! end-to-end tuning.

use serde::{Deserialize, Serialize};

use crate::data::patches::sample_patch_grid;
use crate::data::{segment_sequence, Dataset, Modality, Sample, SceneSample, SceneSequence};
use crate::error::{Error, Result};
use crate::model::{
    build_dcnn, build_wsp_cnn, transfer_conv_weights, Network, RgbdImageModel, RgbdVideoModel,
    TemporalHead, VideoModel,
};
use crate::tensor::Tensor;
use crate::train::checkpoint::{encode_checkpoint, AnyModel};
use crate::train::optim::{fit, EpochLog, TrainingConfig};

/// Every image cut into a `grid`×`grid` set of `patch`-sized crops, each
/// labelled with its source image's class.
pub fn patch_dataset(images: &Dataset, grid: usize, patch: usize) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(images.len() * grid * grid);
    for s in &images.samples {
        for p in sample_patch_grid(&s.input, grid, patch)? {
            samples.push(Sample {
                input: p,
                label: s.label,
            });
        }
    }
    Ok(Dataset {
        classes: images.classes.clone(),
        samples,
    })
}

fn input_shape(ds: &Dataset) -> Result<[usize; 3]> {
    let s = ds.samples.first().ok_or(Error::Empty("dataset"))?;
    let (c, h, w) = s.input.chw()?;
    Ok([c, h, w])
}

/// Trains `net` on `ds`. Layers named in the freeze mask are marked
/// untrainable for the duration so no gradient is computed for them.
pub fn train_network(
    net: &mut Network,
    ds: &Dataset,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochLog>> {
    if ds.num_classes() != net.spec().num_classes {
        return Err(Error::Taxonomy(format!(
            "{} dataset classes for a {}-way network",
            ds.num_classes(),
            net.spec().num_classes
        )));
    }
    let restore: Vec<(String, bool)> = net
        .spec()
        .layers
        .iter()
        .map(|l| (l.name.clone(), l.trainable))
        .collect();
    for layer in &cfg.freeze_mask {
        if net.spec().layer_index(layer).is_some() {
            net.set_trainable(layer, false)?;
        }
    }
    let labels = ds.labels();
    let inputs: Vec<&Tensor> = ds.samples.iter().map(|s| &s.input).collect();
    let logs = fit(net, &inputs, &labels, ds.num_classes(), cfg, |m, x, y| {
        m.loss_and_grads(x, y)
    });
    for (name, t) in restore {
        net.set_trainable(&name, t)?;
    }
    logs
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoStepConfig {
    /// Channel width multiplier.
    pub scale: f64,
    pub patch_grid: usize,
    pub patch_size: usize,
    /// Patch pretraining; zero epochs skips the step.
    pub wsp: TrainingConfig,
    pub finetune: TrainingConfig,
}

impl Default for TwoStepConfig {
    fn default() -> Self {
        Self {
            scale: 0.125,
            patch_grid: 3,
            patch_size: 17,
            wsp: TrainingConfig::default(),
            finetune: TrainingConfig::default(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct TwoStepOutput {
    pub wsp: Option<Network>,
    pub dcnn: Network,
    pub wsp_log: Vec<EpochLog>,
    pub finetune_log: Vec<EpochLog>,
    /// `(stage, encoded checkpoint)` after each step that ran.
    pub checkpoints: Vec<(String, Vec<u8>)>,
}

/// Step 1 trains a WSP-CNN on `patch_ds` (initialised from `wsp.seed + 1`).
/// Step 2 builds a D-CNN (initialised from `finetune.seed + 2`), copies the
/// convolutional weights over and trains on `image_ds`. With zero step-1
/// epochs the D-CNN keeps its own initialisation, which is the from-scratch
/// baseline.
pub fn run_two_step(
    patch_ds: &Dataset,
    image_ds: &Dataset,
    modality: &str,
    cfg: &TwoStepConfig,
) -> Result<TwoStepOutput> {
    if patch_ds.classes != image_ds.classes {
        return Err(Error::Taxonomy(
            "patch and image datasets use different classes".into(),
        ));
    }
    let classes = &image_ds.classes;
    let mut checkpoints = Vec::new();
    let mut dcnn = Network::new(
        build_dcnn(input_shape(image_ds)?, classes.len(), cfg.scale)?,
        cfg.finetune.seed.wrapping_add(2),
    )?;
    let (wsp, wsp_log) = if cfg.wsp.epochs > 0 {
        let mut wsp = Network::new(
            build_wsp_cnn(input_shape(patch_ds)?, classes.len(), cfg.scale)?,
            cfg.wsp.seed.wrapping_add(1),
        )?;
        let log = train_network(&mut wsp, patch_ds, &cfg.wsp)?;
        checkpoints.push((
            "wsp".to_string(),
            encode_checkpoint(&AnyModel::Image(wsp.clone()), classes, modality, "wsp")?,
        ));
        transfer_conv_weights(&wsp, &mut dcnn)?;
        (Some(wsp), log)
    } else {
        (None, Vec::new())
    };
    let finetune_log = train_network(&mut dcnn, image_ds, &cfg.finetune)?;
    let stage = if wsp.is_some() { "finetune" } else { "scratch" };
    checkpoints.push((
        stage.to_string(),
        encode_checkpoint(&AnyModel::Image(dcnn.clone()), classes, modality, stage)?,
    ));
    Ok(TwoStepOutput {
        wsp,
        dcnn,
        wsp_log,
        finetune_log,
        checkpoints,
    })
}

/// Patch dataset derivation plus [`run_two_step`].
pub fn run_two_step_on_images(
    images: &Dataset,
    modality: &str,
    cfg: &TwoStepConfig,
) -> Result<TwoStepOutput> {
    let patches = if cfg.wsp.epochs > 0 {
        patch_dataset(images, cfg.patch_grid, cfg.patch_size)?
    } else {
        Dataset {
            classes: images.classes.clone(),
            samples: Vec::new(),
        }
    };
    run_two_step(&patches, images, modality, cfg)
}

/// A run of `T` consecutive keyframes with the video's label.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment<T> {
    pub items: Vec<T>,
    pub label: usize,
}

/// Non-overlapping length-`t` segments of every sequence; short sequences
/// contribute nothing (a warning is logged).
pub fn sequence_segments<T: Clone>(sequences: &[(Vec<T>, usize)], t: usize) -> Vec<Segment<T>> {
    sequences
        .iter()
        .flat_map(|(items, label)| {
            segment_sequence(items, t)
                .into_iter()
                .map(move |items| Segment {
                    items,
                    label: *label,
                })
        })
        .collect()
}

/// Keyframes of one modality paired with labels.
pub fn modality_frames(
    sequences: &[SceneSequence],
    modality: Modality,
) -> Result<Vec<(Vec<Tensor>, usize)>> {
    sequences
        .iter()
        .map(|s| Ok((s.get(modality)?.to_vec(), s.label)))
        .collect()
}

/// Keyframes of every sequence as independent labelled samples.
pub fn frame_dataset(classes: &[String], sequences: &[(Vec<Tensor>, usize)]) -> Dataset {
    Dataset {
        classes: classes.to_vec(),
        samples: sequences
            .iter()
            .flat_map(|(frames, label)| {
                frames.iter().map(|f| Sample {
                    input: f.clone(),
                    label: *label,
                })
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalConfig {
    /// Segment length `T` in keyframes.
    pub segment_len: usize,
    pub hidden: usize,
    pub train: TrainingConfig,
}

/// Step 2: an LSTM plus classifier trained on features of the fixed `cnn`
/// over length-`T` segments. The head is initialised from `train.seed + 3`.
pub fn train_temporal(
    cnn: &Network,
    sequences: &[(Vec<Tensor>, usize)],
    cfg: &TemporalConfig,
) -> Result<(VideoModel, Vec<EpochLog>)> {
    let classes = cnn.spec().num_classes;
    let feats = sequences
        .iter()
        .map(|(frames, label)| {
            Ok((
                frames
                    .iter()
                    .map(|f| cnn.features(f))
                    .collect::<Result<Vec<_>>>()?,
                *label,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let segments = sequence_segments(&feats, cfg.segment_len);
    if segments.is_empty() {
        return Err(Error::Empty("segments of the requested length"));
    }
    let mut head = TemporalHead::new(
        cnn.spec().feature_width()?,
        cfg.hidden,
        classes,
        cfg.train.seed.wrapping_add(3),
    );
    let labels: Vec<usize> = segments.iter().map(|s| s.label).collect();
    let logs = fit(
        &mut head,
        &segments,
        &labels,
        classes,
        &cfg.train,
        |m, s, y| m.loss_and_grads(&s.items, y),
    )?;
    Ok((VideoModel::new(cnn.clone(), head)?, logs))
}

/// Step 3 for one modality: CNN and LSTM tuned jointly on frame segments.
pub fn train_joint(
    model: &mut VideoModel,
    sequences: &[(Vec<Tensor>, usize)],
    segment_len: usize,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochLog>> {
    let segments = sequence_segments(sequences, segment_len);
    if segments.is_empty() {
        return Err(Error::Empty("segments of the requested length"));
    }
    let labels: Vec<usize> = segments.iter().map(|s| s.label).collect();
    let classes = model.num_classes();
    fit(model, &segments, &labels, classes, cfg, |m, s, y| {
        m.loss_and_grads(&s.items, y)
    })
}

/// Step 3 for both modalities: the fused model tuned end to end on aligned
/// RGB and depth segments.
pub fn train_joint_fused(
    model: &mut RgbdVideoModel,
    rgb: &[(Vec<Tensor>, usize)],
    depth: &[(Vec<Tensor>, usize)],
    segment_len: usize,
    cfg: &TrainingConfig,
) -> Result<Vec<EpochLog>> {
    let r = sequence_segments(rgb, segment_len);
    let d = sequence_segments(depth, segment_len);
    if r.len() != d.len() || r.iter().zip(&d).any(|(a, b)| a.label != b.label) {
        return Err(Error::InvalidArgument(
            "RGB and depth sequences are not aligned".into(),
        ));
    }
    if r.is_empty() {
        return Err(Error::Empty("segments of the requested length"));
    }
    let pairs: Vec<(Segment<Tensor>, Segment<Tensor>)> = r.into_iter().zip(d).collect();
    let labels: Vec<usize> = pairs.iter().map(|p| p.0.label).collect();
    let classes = model.fusion.spec.num_classes;
    fit(model, &pairs, &labels, classes, cfg, |m, (a, b), y| {
        m.loss_and_grads(&a.items, &b.items, y)
    })
}

/// Both image branches and the fusion head tuned end to end on RGB-D stills.
pub fn train_fused_images(
    model: &mut RgbdImageModel,
    samples: &[SceneSample],
    cfg: &TrainingConfig,
) -> Result<Vec<EpochLog>> {
    let pairs = samples
        .iter()
        .map(|s| match (&s.rgb, &s.depth) {
            (Some(r), Some(d)) => Ok((r, d)),
            _ => Err(Error::Empty("RGB-D sample lacks a modality")),
        })
        .collect::<Result<Vec<_>>>()?;
    let labels: Vec<usize> = samples.iter().map(|s| s.label).collect();
    let classes = model.fusion.spec.num_classes;
    fit(model, &pairs, &labels, classes, cfg, |m, (r, d), y| {
        m.loss_and_grads(r, d, y)
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreeStepConfig {
    pub rgb: TwoStepConfig,
    pub depth: TwoStepConfig,
    pub temporal: TemporalConfig,
    pub joint: TrainingConfig,
    pub fusion_hidden: usize,
    /// Also tune each single-modality model end to end.
    pub single_modality_joint: bool,
}

#[derive(Debug, Clone)]
pub struct ModalityRun {
    pub frame_cnn: TwoStepOutput,
    pub temporal: VideoModel,
    pub temporal_log: Vec<EpochLog>,
    pub joint: Option<(VideoModel, Vec<EpochLog>)>,
}

#[derive(Debug, Clone)]
pub struct ThreeStepOutput {
    pub rgb: ModalityRun,
    pub depth: ModalityRun,
    pub fused: RgbdVideoModel,
    pub fused_log: Vec<EpochLog>,
}

/// Steps 1 and 2 (and optionally a single-modality step 3) for one modality.
pub fn run_modality(
    classes: &[String],
    sequences: &[(Vec<Tensor>, usize)],
    modality: Modality,
    two_step: &TwoStepConfig,
    temporal: &TemporalConfig,
    joint: Option<&TrainingConfig>,
) -> Result<ModalityRun> {
    let frames = frame_dataset(classes, sequences);
    let frame_cnn = run_two_step_on_images(&frames, modality.as_str(), two_step)?;
    let (temporal_model, temporal_log) = train_temporal(&frame_cnn.dcnn, sequences, temporal)?;
    let joint = match joint {
        Some(cfg) => {
            let mut m = temporal_model.clone();
            let log = train_joint(&mut m, sequences, temporal.segment_len, cfg)?;
            Some((m, log))
        }
        None => None,
    };
    Ok(ModalityRun {
        frame_cnn,
        temporal: temporal_model,
        temporal_log,
        joint,
    })
}

/// The full video pipeline on both modalities followed by joint fused tuning.
/// The fusion head is initialised from `joint.seed + 4`.
pub fn run_three_step(
    classes: &[String],
    train: &[SceneSequence],
    cfg: &ThreeStepConfig,
) -> Result<ThreeStepOutput> {
    let rgb_seqs = modality_frames(train, Modality::Rgb)?;
    let depth_seqs = modality_frames(train, Modality::Depth)?;
    let single = cfg.single_modality_joint.then_some(&cfg.joint);
    let rgb = run_modality(
        classes,
        &rgb_seqs,
        Modality::Rgb,
        &cfg.rgb,
        &cfg.temporal,
        single,
    )?;
    let depth = run_modality(
        classes,
        &depth_seqs,
        Modality::Depth,
        &cfg.depth,
        &cfg.temporal,
        single,
    )?;
    let mut fused = RgbdVideoModel::from_branches(
        rgb.temporal.clone(),
        depth.temporal.clone(),
        cfg.fusion_hidden,
        cfg.joint.seed.wrapping_add(4),
    )?;
    let fused_log = train_joint_fused(
        &mut fused,
        &rgb_seqs,
        &depth_seqs,
        cfg.temporal.segment_len,
        &cfg.joint,
    )?;
    Ok(ThreeStepOutput {
        rgb,
        depth,
        fused,
        fused_log,
    })
}
