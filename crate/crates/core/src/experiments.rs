//! Paired-seed comparisons on the synthetic corpus.

use serde::{Deserialize, Serialize};

use crate::analysis::eval::{evaluate_ave, evaluate_images, evaluate_rgbd_images, evaluate_video};
use crate::data::{synthetic_corpus, CorpusSize, Modality, SynthConfig};
use crate::error::Result;
use crate::model::RgbdImageModel;
use crate::train::optim::TrainingConfig;
use crate::train::procedures::{
    modality_frames, run_two_step_on_images, train_fused_images, train_joint, train_temporal,
    TemporalConfig, TwoStepConfig,
};

/// Accuracy of two arms that share data and seeds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Paired {
    pub seed: u64,
    pub baseline: f64,
    pub treatment: f64,
}

impl Paired {
    pub fn gain(&self) -> f64 {
        self.treatment - self.baseline
    }
}

/// Seeds on which `holds` is true.
pub fn count_holding<T>(runs: &[T], holds: impl Fn(&T) -> bool) -> usize {
    runs.iter().filter(|r| holds(r)).count()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WspExperiment {
    pub synth: SynthConfig,
    /// Stills per class before the 60/40 split.
    pub images_per_class: usize,
    pub two_step: TwoStepConfig,
}

impl Default for WspExperiment {
    fn default() -> Self {
        let train = TrainingConfig {
            learning_rate: 0.003,
            batch_size: 8,
            epochs: 30,
            ..TrainingConfig::default()
        };
        Self {
            synth: SynthConfig::default(),
            images_per_class: 33,
            two_step: TwoStepConfig {
                scale: 0.125,
                patch_grid: 3,
                patch_size: 17,
                wsp: train.clone(),
                finetune: TrainingConfig {
                    learning_rate: 0.001,
                    ..train
                },
            },
        }
    }
}

fn seeded(cfg: &TrainingConfig, seed: u64) -> TrainingConfig {
    TrainingConfig {
        seed,
        ..cfg.clone()
    }
}

/// Depth-only mean class accuracy of from-scratch (baseline) versus
/// two-step (treatment) training on one corpus.
pub fn wsp_benefit(exp: &WspExperiment, seed: u64) -> Result<Paired> {
    let corpus = synthetic_corpus(&exp.synth, CorpusSize::images(exp.images_per_class), seed)?;
    let train = corpus.train.images(&corpus.classes, Modality::Depth)?;
    let test = corpus.test.images(&corpus.classes, Modality::Depth)?;
    let two = TwoStepConfig {
        wsp: seeded(&exp.two_step.wsp, seed),
        finetune: seeded(&exp.two_step.finetune, seed),
        ..exp.two_step.clone()
    };
    let scratch = TwoStepConfig {
        wsp: TrainingConfig {
            epochs: 0,
            ..two.wsp.clone()
        },
        ..two.clone()
    };
    let base = run_two_step_on_images(&train, "depth", &scratch)?;
    let treat = run_two_step_on_images(&train, "depth", &two)?;
    Ok(Paired {
        seed,
        baseline: evaluate_images(&base.dcnn, &test)?.mean_class_accuracy,
        treatment: evaluate_images(&treat.dcnn, &test)?.mean_class_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VideoExperiment {
    pub synth: SynthConfig,
    /// Videos per class before the 60/40 split.
    pub videos_per_class: usize,
    pub frame_cnn: TwoStepConfig,
    /// Temporal embedding over whole videos.
    pub temporal: TemporalConfig,
    /// Segment length of the short-context comparison arm.
    pub short_segment_len: usize,
    pub joint: TrainingConfig,
}

impl Default for VideoExperiment {
    fn default() -> Self {
        let frames = TrainingConfig {
            learning_rate: 0.01,
            batch_size: 8,
            epochs: 15,
            ..TrainingConfig::default()
        };
        Self {
            synth: SynthConfig {
                height: 23,
                width: 23,
                ..SynthConfig::default()
            },
            videos_per_class: 20,
            frame_cnn: TwoStepConfig {
                scale: 0.125,
                patch_grid: 3,
                patch_size: 15,
                wsp: TrainingConfig {
                    epochs: 0,
                    ..frames.clone()
                },
                finetune: frames,
            },
            temporal: TemporalConfig {
                segment_len: 9,
                hidden: 32,
                train: TrainingConfig {
                    learning_rate: 0.05,
                    batch_size: 4,
                    epochs: 40,
                    ..TrainingConfig::default()
                },
            },
            short_segment_len: 1,
            joint: TrainingConfig {
                learning_rate: 0.002,
                batch_size: 4,
                epochs: 5,
                ..TrainingConfig::default()
            },
        }
    }
}

/// Video-level mean class accuracies of one modality under every aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VideoRun {
    pub seed: u64,
    /// LSTM over segments of `short_segment_len` keyframes, scored per segment.
    pub short: f64,
    /// Averaged per-keyframe CNN probabilities.
    pub ave: f64,
    /// LSTM over whole-video segments on fixed CNN features.
    pub lstm: f64,
    /// The same model after joint end-to-end tuning.
    pub ete: f64,
}

/// Trains the per-frame CNN, both temporal heads and the end-to-end model for
/// one modality, and scores them on held-out videos.
pub fn video_benefit(exp: &VideoExperiment, modality: Modality, seed: u64) -> Result<VideoRun> {
    let corpus = synthetic_corpus(&exp.synth, CorpusSize::videos(exp.videos_per_class), seed)?;
    let train = modality_frames(&corpus.train.sequences, modality)?;
    let test = modality_frames(&corpus.test.sequences, modality)?;
    let frames = crate::train::procedures::frame_dataset(&corpus.classes, &train);
    let cnn_cfg = TwoStepConfig {
        wsp: seeded(&exp.frame_cnn.wsp, seed),
        finetune: seeded(&exp.frame_cnn.finetune, seed),
        ..exp.frame_cnn.clone()
    };
    let cnn = run_two_step_on_images(&frames, modality.as_str(), &cnn_cfg)?.dcnn;
    let long = TemporalConfig {
        train: seeded(&exp.temporal.train, seed),
        ..exp.temporal.clone()
    };
    let short = TemporalConfig {
        segment_len: exp.short_segment_len,
        ..long.clone()
    };
    let (short_model, _) = train_temporal(&cnn, &train, &short)?;
    let (long_model, _) = train_temporal(&cnn, &train, &long)?;
    let mut ete = long_model.clone();
    train_joint(
        &mut ete,
        &train,
        long.segment_len,
        &seeded(&exp.joint, seed),
    )?;
    Ok(VideoRun {
        seed,
        short: evaluate_video(&short_model, &test, short.segment_len)?.mean_class_accuracy,
        ave: evaluate_ave(&cnn, &test)?.mean_class_accuracy,
        lstm: evaluate_video(&long_model, &test, long.segment_len)?.mean_class_accuracy,
        ete: evaluate_video(&ete, &test, long.segment_len)?.mean_class_accuracy,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FusionExperiment {
    pub synth: SynthConfig,
    pub images_per_class: usize,
    pub rgb: TwoStepConfig,
    pub depth: TwoStepConfig,
    pub fusion_hidden: usize,
    pub joint: TrainingConfig,
}

impl Default for FusionExperiment {
    fn default() -> Self {
        let base = WspExperiment::default();
        Self {
            synth: base.synth,
            images_per_class: base.images_per_class,
            rgb: TwoStepConfig {
                wsp: TrainingConfig {
                    epochs: 0,
                    ..base.two_step.wsp.clone()
                },
                ..base.two_step.clone()
            },
            depth: base.two_step,
            fusion_hidden: 64,
            joint: TrainingConfig {
                learning_rate: 0.005,
                batch_size: 8,
                epochs: 10,
                ..TrainingConfig::default()
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FusionRun {
    pub seed: u64,
    pub rgb: f64,
    pub depth: f64,
    pub fused: f64,
}

/// Single-modality networks and the jointly tuned fused model on one corpus.
pub fn fusion_benefit(exp: &FusionExperiment, seed: u64) -> Result<FusionRun> {
    let corpus = synthetic_corpus(&exp.synth, CorpusSize::images(exp.images_per_class), seed)?;
    let classes = &corpus.classes;
    let mut nets = Vec::new();
    for (modality, cfg) in [(Modality::Rgb, &exp.rgb), (Modality::Depth, &exp.depth)] {
        let cfg = TwoStepConfig {
            wsp: seeded(&cfg.wsp, seed),
            finetune: seeded(&cfg.finetune, seed),
            ..cfg.clone()
        };
        let train = corpus.train.images(classes, modality)?;
        nets.push(run_two_step_on_images(&train, modality.as_str(), &cfg)?.dcnn);
    }
    let depth_net = nets.pop().unwrap();
    let rgb_net = nets.pop().unwrap();
    let score = |net, m| -> Result<f64> {
        Ok(evaluate_images(net, &corpus.test.images(classes, m)?)?.mean_class_accuracy)
    };
    let rgb = score(&rgb_net, Modality::Rgb)?;
    let depth = score(&depth_net, Modality::Depth)?;
    let mut fused =
        RgbdImageModel::new(rgb_net, depth_net, exp.fusion_hidden, seed.wrapping_add(4))?;
    train_fused_images(&mut fused, &corpus.train.stills, &seeded(&exp.joint, seed))?;
    Ok(FusionRun {
        seed,
        rgb,
        depth,
        fused: evaluate_rgbd_images(&fused, &corpus.test.stills)?.mean_class_accuracy,
    })
}
