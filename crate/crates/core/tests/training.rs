mod common;

use common::{random, rng, tiny_dcnn};
use depthscene::data::{synthetic_corpus, CorpusSize, Dataset, Sample, SynthConfig};
use depthscene::model::{build_dcnn, Model, Network};
use depthscene::train::{
    compute_class_weights, decode_checkpoint, run_three_step, run_two_step_on_images, train_linear,
    train_network, train_weighted_linear, AnyModel, TemporalConfig, ThreeStepConfig,
    TrainingConfig, TwoStepConfig,
};
use depthscene::Tensor;
use rand::Rng;

/// Horizontal against vertical stripes, with noise.
fn stripes(n_per_class: usize, seed: u64) -> Dataset {
    let mut r = rng(seed);
    let mut samples = Vec::new();
    for label in 0..2 {
        for _ in 0..n_per_class {
            let phase = r.gen_range(0..4);
            let mut data = Vec::with_capacity(3 * 15 * 15);
            for _ in 0..3 {
                for y in 0..15 {
                    for x in 0..15 {
                        let coord = if label == 0 { y } else { x };
                        let on = (coord + phase) / 2 % 2 == 0;
                        data.push(if on { 0.8 } else { 0.2 } + r.gen_range(-0.05..0.05));
                    }
                }
            }
            samples.push(Sample {
                input: Tensor::new(vec![3, 15, 15], data).unwrap(),
                label,
            });
        }
    }
    Dataset {
        classes: vec!["horizontal".into(), "vertical".into()],
        samples,
    }
}

#[test]
fn toy_loss_falls_below_a_tenth() {
    let ds = stripes(6, 1);
    let mut net = tiny_dcnn(2, 4);
    let cfg = TrainingConfig {
        learning_rate: 0.01,
        batch_size: 4,
        epochs: 60,
        ..TrainingConfig::default()
    };
    let logs = train_network(&mut net, &ds, &cfg).unwrap();
    let (first, last) = (logs[0].loss, logs.last().unwrap().loss);
    assert!(last < 0.1 * first, "loss {first} -> {last}");
    assert_eq!(logs.last().unwrap().mean_class_accuracy, 1.0);
}

#[test]
fn frozen_layers_stay_bitwise_constant() {
    let ds = stripes(3, 2);
    let mut net = tiny_dcnn(2, 5);
    let before = net.clone();
    let cfg = TrainingConfig {
        epochs: 3,
        freeze_mask: ["conv1".to_string(), "conv3.bias".to_string()].into(),
        ..TrainingConfig::default()
    };
    train_network(&mut net, &ds, &cfg).unwrap();
    for (name, t) in net.named_params() {
        let old = before.param(&name).unwrap();
        if name.starts_with("conv1.") || name == "conv3.bias" {
            assert_eq!(t, old, "{name} moved");
        } else {
            assert_ne!(t, old, "{name} did not move");
        }
    }
    // trainability flags are restored afterwards
    assert_eq!(net.spec(), before.spec());
}

fn blobs(counts: &[usize], spread: f64, seed: u64) -> (Vec<Tensor>, Vec<usize>) {
    let centres = [[1.0, 0.0], [-1.0, 0.2], [0.0, -1.0]];
    let mut r = rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for (label, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            let c = centres[label];
            x.push(Tensor::vector(vec![
                c[0] + spread * r.gen_range(-1.0..1.0),
                c[1] + spread * r.gen_range(-1.0..1.0),
            ]));
            y.push(label);
        }
    }
    (x, y)
}

#[test]
fn scaled_class_weights_give_identical_decisions() {
    let (x, y) = blobs(&[30, 12, 20], 0.9, 3);
    let w = compute_class_weights(&[30, 12, 20], 2.0).unwrap();
    let cfg = TrainingConfig {
        epochs: 15,
        ..TrainingConfig::default()
    };
    let (a, _) = train_weighted_linear(&x, &y, &w, &cfg).unwrap();
    let scaled: Vec<f64> = w.iter().map(|v| v * 7.5).collect();
    let (b, _) = train_weighted_linear(&x, &y, &scaled, &cfg).unwrap();
    for xi in &x {
        assert_eq!(a.predict(xi).unwrap(), b.predict(xi).unwrap());
    }
}

#[test]
fn weighting_raises_minority_recall() {
    let counts = [60, 6];
    let (x, y) = blobs(&counts, 1.3, 8);
    let cfg = TrainingConfig {
        epochs: 20,
        ..TrainingConfig::default()
    };
    let recall = |clf: &depthscene::train::LinearClassifier| {
        let idx: Vec<usize> = (0..y.len()).filter(|&i| y[i] == 1).collect();
        idx.iter()
            .filter(|&&i| clf.predict(&x[i]).unwrap() == 1)
            .count() as f64
            / idx.len() as f64
    };
    let (plain, _) = train_linear(&x, &y, 2, &cfg).unwrap();
    let w = compute_class_weights(&counts, 2.0).unwrap();
    let (weighted, _) = train_weighted_linear(&x, &y, &w, &cfg).unwrap();
    let (rp, rw) = (recall(&plain), recall(&weighted));
    assert!(rw >= rp, "weighted {rw} < unweighted {rp}");
    assert!(rw > 0.5);
}

fn tiny_corpus() -> (SynthConfig, depthscene::data::Corpus) {
    let cfg = SynthConfig {
        height: 17,
        width: 17,
        video_frames: 9,
        segment_len: 3,
        ..SynthConfig::default()
    };
    let size = CorpusSize {
        train_images: 2,
        test_images: 0,
        train_videos: 1,
        test_videos: 0,
    };
    let corpus = synthetic_corpus(&cfg, size, 11).unwrap();
    (cfg, corpus)
}

fn quick(epochs: usize) -> TrainingConfig {
    TrainingConfig {
        epochs,
        batch_size: 4,
        seed: 2,
        ..TrainingConfig::default()
    }
}

fn two_step(wsp_epochs: usize, finetune_epochs: usize) -> TwoStepConfig {
    TwoStepConfig {
        scale: 1.0 / 16.0,
        patch_grid: 2,
        patch_size: 15,
        wsp: quick(wsp_epochs),
        finetune: quick(finetune_epochs),
    }
}

#[test]
fn zero_pretraining_epochs_is_the_scratch_baseline() {
    let (_, corpus) = tiny_corpus();
    let images = corpus
        .train
        .images(&corpus.classes, depthscene::data::Modality::Depth)
        .unwrap();
    let out = run_two_step_on_images(&images, "depth", &two_step(0, 0)).unwrap();
    assert!(out.wsp.is_none());
    let fresh = Network::new(build_dcnn([3, 17, 17], 10, 1.0 / 16.0).unwrap(), 2 + 2).unwrap();
    assert_eq!(out.dcnn, fresh);
    assert_eq!(out.checkpoints.len(), 1);
    assert_eq!(out.checkpoints[0].0, "scratch");
}

#[test]
fn pretrained_stem_is_carried_into_the_dcnn() {
    let (_, corpus) = tiny_corpus();
    let images = corpus
        .train
        .images(&corpus.classes, depthscene::data::Modality::Depth)
        .unwrap();
    let out = run_two_step_on_images(&images, "depth", &two_step(1, 0)).unwrap();
    let (meta, decoded) = decode_checkpoint(&out.checkpoints[0].1).unwrap();
    assert_eq!(meta.stage, "wsp");
    let AnyModel::Image(wsp) = decoded else {
        panic!("wsp checkpoint is not an image model")
    };
    for layer in ["conv1", "conv2", "conv3", "conv4"] {
        for p in ["weight", "bias"] {
            let name = format!("{layer}.{p}");
            assert_eq!(wsp.param(&name), out.dcnn.param(&name), "{name}");
        }
    }
    let x = random(vec![3, 17, 17], &mut rng(0));
    let a = wsp.forward_to(&x, 9).unwrap();
    let b = out.dcnn.forward_to(&x, 9).unwrap();
    assert_eq!(a.output(), b.output());
}

#[test]
fn two_step_is_deterministic() {
    let (_, corpus) = tiny_corpus();
    let images = corpus
        .train
        .images(&corpus.classes, depthscene::data::Modality::Rgb)
        .unwrap();
    let a = run_two_step_on_images(&images, "rgb", &two_step(1, 1)).unwrap();
    let b = run_two_step_on_images(&images, "rgb", &two_step(1, 1)).unwrap();
    assert_eq!(a.checkpoints, b.checkpoints);
}

#[test]
fn three_step_produces_every_model() {
    let (_, corpus) = tiny_corpus();
    let cfg = ThreeStepConfig {
        rgb: two_step(0, 1),
        depth: two_step(1, 1),
        temporal: TemporalConfig {
            segment_len: 3,
            hidden: 4,
            train: quick(1),
        },
        joint: quick(1),
        fusion_hidden: 6,
        single_modality_joint: true,
    };
    let out = run_three_step(&corpus.classes, &corpus.train.sequences, &cfg).unwrap();
    assert!(out.rgb.frame_cnn.wsp.is_none());
    assert!(out.depth.frame_cnn.wsp.is_some());
    assert_eq!(out.fused_log.len(), 1);
    let (joint, _) = out.depth.joint.as_ref().unwrap();
    assert_ne!(joint, &out.depth.temporal);
    // fused branches start from the temporal models and then move
    assert_ne!(out.fused.depth.lstm, out.depth.temporal.branch.lstm);
    let seq = &corpus.train.sequences[0];
    let logits = out
        .fused
        .logits(seq.rgb.as_ref().unwrap(), seq.depth.as_ref().unwrap())
        .unwrap();
    assert_eq!(logits.len(), 10);
}
