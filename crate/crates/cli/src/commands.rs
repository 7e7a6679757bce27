use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;

use anyhow::Context;
use depthscene::analysis::{
    activation_rate, evaluate_ave, evaluate_images, evaluate_linear, evaluate_rgbd_images,
    evaluate_rgbd_video, evaluate_video, export_filter_grid, EvalReport,
};
use depthscene::data::{
    load_split, write_synthetic_corpus, CorpusSize, Dataset, Manifest, Modality, Role, SceneSample,
    SceneSplit, SynthConfig,
};
use depthscene::model::{
    build_dcnn, build_wsp_cnn, transfer_conv_weights, Network, RgbdImageModel, RgbdVideoModel,
};
use depthscene::train::{
    compute_class_weights, encode_checkpoint, load_checkpoint, modality_frames, patch_dataset,
    save_checkpoint, train_fused_images, train_joint, train_joint_fused, train_network,
    train_temporal, train_weighted_linear, AnyModel, CheckpointMeta, EpochLog, TemporalConfig,
    TrainingConfig,
};
use depthscene::Tensor;

use crate::config::Settings;
use crate::{
    usage, Aggregate, DiagArgs, EvalArgs, GenDataArgs, ModalityArg, SplitArg, Stage, TrainArgs,
};

fn create_dir(dir: &Path) -> anyhow::Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn load_manifest(path: &Path) -> anyhow::Result<Manifest> {
    let m = Manifest::load(path)?;
    m.validate()?;
    Ok(m)
}

fn role(split: SplitArg) -> Role {
    match split {
        SplitArg::Train => Role::Train,
        SplitArg::Test => Role::Test,
    }
}

fn single(m: ModalityArg) -> Option<Modality> {
    match m {
        ModalityArg::Rgb => Some(Modality::Rgb),
        ModalityArg::Depth => Some(Modality::Depth),
        ModalityArg::Rgbd => None,
    }
}

fn modality_of(meta: &CheckpointMeta) -> anyhow::Result<Option<Modality>> {
    match meta.modality.as_str() {
        "rgbd" => Ok(None),
        m => Ok(Some(m.parse()?)),
    }
}

/// Stills of `split`, or every keyframe when the split has no stills.
fn image_set(
    split: &SceneSplit,
    classes: &[String],
    modality: Modality,
) -> anyhow::Result<Dataset> {
    if split.stills.is_empty() {
        Ok(split.frames(classes, modality)?)
    } else {
        Ok(split.images(classes, modality)?)
    }
}

/// Stills of `split` with both modalities, or every keyframe pair.
fn rgbd_stills(split: &SceneSplit) -> Vec<SceneSample> {
    if !split.stills.is_empty() {
        return split.stills.clone();
    }
    let mut out = Vec::new();
    for s in &split.sequences {
        let (Some(r), Some(d)) = (&s.rgb, &s.depth) else {
            continue;
        };
        out.extend(r.iter().zip(d).map(|(r, d)| SceneSample {
            rgb: Some(r.clone()),
            depth: Some(d.clone()),
            label: s.label,
        }));
    }
    out
}

/// Videos of `split`, or each still as a one-frame video when there are none.
fn sequences(split: &SceneSplit, modality: Modality) -> anyhow::Result<Vec<(Vec<Tensor>, usize)>> {
    if split.sequences.is_empty() {
        return split
            .stills
            .iter()
            .map(|s| Ok((vec![s.get(modality)?.clone()], s.label)))
            .collect();
    }
    Ok(modality_frames(&split.sequences, modality)?)
}

/// `t`, shortened to the shortest sequence so that every video contributes.
fn segment_len(seqs: &[(Vec<Tensor>, usize)], t: usize) -> anyhow::Result<usize> {
    if t == 0 {
        return usage("segment length must be at least 1");
    }
    let Some(shortest) = seqs.iter().map(|s| s.0.len()).min() else {
        anyhow::bail!("the manifest split has no sequences");
    };
    if shortest < t {
        log::warn!(
            "sequences have as few as {shortest} keyframes; using T={}",
            shortest.max(1)
        );
        return Ok(shortest.max(1));
    }
    Ok(t)
}

fn check_classes(meta: &CheckpointMeta, classes: &[String], what: &Path) -> anyhow::Result<()> {
    if meta.classes != classes {
        return Err(depthscene::Error::Taxonomy(format!(
            "{} was trained on [{}], the manifest has [{}]",
            what.display(),
            meta.classes.join(", "),
            classes.join(", ")
        ))
        .into());
    }
    Ok(())
}

pub fn gen_data(a: GenDataArgs) -> anyhow::Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let base = SynthConfig::default();
    let classes = s.get("classes", a.classes, 10)?;
    let per_class = s.get("per_class", a.per_class, 20)?;
    let videos = s.get("videos_per_class", a.videos_per_class, 0)?;
    let cfg = SynthConfig {
        video_frames: s.get("video_frames", a.video_frames, base.video_frames)?,
        sensor_range_m: s.get("sensor_range", a.sensor_range, base.sensor_range_m)?,
        height: s.get("height", a.height, base.height)?,
        width: s.get("width", a.width, base.width)?,
        ..base
    };
    let seed = s.get("seed", a.seed, 0)?;
    let max = depthscene::data::class_names().len();
    if !(1..=max).contains(&classes) {
        return usage(format!("--classes must be between 1 and {max}"));
    }
    if per_class == 0 {
        return usage("--per-class must be at least 1");
    }
    if let Err(e) = cfg.validate() {
        return usage(e.to_string());
    }
    reject_unknown(&s)?;
    let stills = CorpusSize::images(per_class);
    let clips = CorpusSize::videos(videos);
    let size = CorpusSize {
        train_videos: clips.train_videos,
        test_videos: clips.test_videos,
        ..stills
    };
    create_dir(&a.out)?;
    let manifest = write_synthetic_corpus(&a.out, &cfg, size, classes, seed)?;
    s.echo(&a.out)?;
    let still_records = manifest
        .records
        .iter()
        .filter(|r| r.frame_index.is_none())
        .count();
    let frame_records = manifest.records.len() - still_records;
    println!(
        "classes {classes}  images {} ({} train, {} test)  files {}",
        still_records / 2,
        size.train_images * classes,
        size.test_images * classes,
        manifest.records.len()
    );
    println!(
        "videos {} ({} train, {} test)  keyframe files {frame_records}",
        videos * classes,
        size.train_videos * classes,
        size.test_videos * classes
    );
    Ok(())
}

fn reject_unknown(s: &Settings) -> anyhow::Result<()> {
    let unknown = s.unknown_keys();
    if unknown.is_empty() {
        Ok(())
    } else {
        usage(format!("unknown config keys: {}", unknown.join(", ")))
    }
}

struct Resolved {
    train: TrainingConfig,
    scale: f64,
    patch_grid: usize,
    patch_size: usize,
    hidden: usize,
    segment_len: usize,
    fusion_hidden: usize,
}

fn resolve(a: &TrainArgs, s: &mut Settings) -> anyhow::Result<Resolved> {
    let d = TrainingConfig::default();
    let freeze = s.get("freeze", a.freeze.clone(), String::new())?;
    let train = TrainingConfig {
        learning_rate: s.get("lr", a.lr, d.learning_rate)?,
        momentum: s.get("momentum", a.momentum, d.momentum)?,
        weight_decay: s.get("weight_decay", a.weight_decay, d.weight_decay)?,
        batch_size: s.get("batch_size", a.batch_size, d.batch_size)?,
        epochs: s.get("epochs", a.epochs, d.epochs)?,
        seed: s.get("seed", a.seed, d.seed)?,
        freeze_mask: freeze
            .split(',')
            .map(str::trim)
            .filter(|n| !n.is_empty())
            .map(String::from)
            .collect::<BTreeSet<_>>(),
    };
    if let Err(e) = train.validate() {
        return usage(e.to_string());
    }
    let r = Resolved {
        train,
        scale: s.get("scale", a.scale, 0.125)?,
        patch_grid: s.get("patch_grid", a.patch_grid, 3)?,
        patch_size: s.get("patch_size", a.patch_size, 17)?,
        hidden: s.get("hidden", a.hidden, 32)?,
        segment_len: s.get("segment_len", a.segment_len, 9)?,
        fusion_hidden: s.get("fusion_hidden", a.fusion_hidden, 64)?,
    };
    reject_unknown(s)?;
    Ok(r)
}

fn require_init<'a>(path: Option<&'a Path>, stage: Stage, prior: &str) -> anyhow::Result<&'a Path> {
    match path {
        Some(p) => Ok(p),
        None => usage(format!(
            "--stage {} needs --init <checkpoint written by {prior}>",
            stage.as_str()
        )),
    }
}

fn load_init(
    path: &Path,
    classes: &[String],
    modality: &str,
) -> anyhow::Result<(CheckpointMeta, AnyModel)> {
    let (meta, model) =
        load_checkpoint(path).with_context(|| format!("loading {}", path.display()))?;
    check_classes(&meta, classes, path)?;
    if meta.modality != modality {
        return usage(format!(
            "{} holds a {} model, expected {modality}",
            path.display(),
            meta.modality
        ));
    }
    Ok((meta, model))
}

fn image_net(model: AnyModel, path: &Path) -> anyhow::Result<Network> {
    match model {
        AnyModel::Image(n) => Ok(n),
        other => usage(format!(
            "{} holds a {:?} model, expected an image CNN",
            path.display(),
            kind(&other)
        )),
    }
}

fn kind(m: &AnyModel) -> &'static str {
    match m {
        AnyModel::Image(_) => "image",
        AnyModel::Video(_) => "video",
        AnyModel::RgbdImage(_) => "rgbd_image",
        AnyModel::RgbdVideo(_) => "rgbd_video",
    }
}

fn input_shape(ds: &Dataset) -> anyhow::Result<[usize; 3]> {
    let s = ds
        .samples
        .first()
        .context("no training images in the manifest")?;
    let (c, h, w) = s.input.chw()?;
    Ok([c, h, w])
}

fn log_lines(stage: &str, logs: &[EpochLog]) -> String {
    let mut out = String::new();
    for l in logs {
        let _ = writeln!(out, "metric\t{stage}.epoch{}.loss\t{:.6}", l.epoch, l.loss);
        let _ = writeln!(
            out,
            "metric\t{stage}.epoch{}.mean_class_accuracy\t{:.6}",
            l.epoch, l.mean_class_accuracy
        );
    }
    out
}

pub fn train(a: TrainArgs) -> anyhow::Result<()> {
    let mut s = Settings::load(a.config.as_deref())?;
    let r = resolve(&a, &mut s)?;
    let stage = a.stage;
    let init = match stage {
        Stage::Wsp | Stage::Scratch => None,
        Stage::Finetune => Some(require_init(a.init.as_deref(), stage, "--stage wsp")?),
        Stage::Temporal => Some(require_init(
            a.init.as_deref(),
            stage,
            "--stage finetune or --stage scratch",
        )?),
        Stage::Joint => Some(require_init(
            a.init.as_deref(),
            stage,
            "--stage temporal (or finetune for rgbd images)",
        )?),
    };
    let modality = single(a.modality);
    if modality.is_none() && stage != Stage::Joint {
        return usage(format!(
            "--stage {} trains one modality; fuse trained branches with --stage joint --modality rgbd",
            stage.as_str()
        ));
    }
    if modality.is_none() && a.init_rgb.is_none() {
        return usage("--stage joint --modality rgbd needs --init <depth checkpoint> and --init-rgb <rgb checkpoint>");
    }
    let manifest = load_manifest(&a.manifest)?;
    let (classes, train_split) = load_split(&manifest, Role::Train)?;
    let (_, test_split) = load_split(&manifest, Role::Test)?;
    s.record("stage", stage.as_str());
    s.record("modality", a.modality.as_str());
    s.record("manifest", a.manifest.display());
    if let Some(p) = init {
        s.record("init", p.display());
    }
    if let Some(p) = &a.init_rgb {
        s.record("init_rgb", p.display());
    }
    create_dir(&a.out)?;
    s.echo(&a.out)?;

    let name = stage.as_str();
    let cfg = &r.train;
    let (model, logs, test) = match (stage, modality) {
        (Stage::Wsp, Some(m)) => {
            let images = image_set(&train_split, &classes, m)?;
            let patches = patch_dataset(&images, r.patch_grid, r.patch_size)?;
            let mut net = Network::new(
                build_wsp_cnn(input_shape(&patches)?, classes.len(), r.scale)?,
                cfg.seed.wrapping_add(1),
            )?;
            let logs = train_network(&mut net, &patches, cfg)?;
            let test = image_report(&net, &test_split, &classes, m)?;
            (AnyModel::Image(net), logs, test)
        }
        (Stage::Scratch | Stage::Finetune, Some(m)) => {
            let images = image_set(&train_split, &classes, m)?;
            let mut net = Network::new(
                build_dcnn(input_shape(&images)?, classes.len(), r.scale)?,
                cfg.seed.wrapping_add(2),
            )?;
            if let Some(p) = init {
                let wsp = image_net(load_init(p, &classes, m.as_str())?.1, p)?;
                transfer_conv_weights(&wsp, &mut net)?;
            }
            let logs = train_network(&mut net, &images, cfg)?;
            let test = image_report(&net, &test_split, &classes, m)?;
            (AnyModel::Image(net), logs, test)
        }
        (Stage::Temporal, Some(m)) => {
            let p = init.unwrap();
            let cnn = image_net(load_init(p, &classes, m.as_str())?.1, p)?;
            let seqs = sequences(&train_split, m)?;
            let t = segment_len(&seqs, r.segment_len)?;
            let tc = TemporalConfig {
                segment_len: t,
                hidden: r.hidden,
                train: cfg.clone(),
            };
            let (model, logs) = train_temporal(&cnn, &seqs, &tc)?;
            let test = video_report(&model, &test_split, m, t)?;
            (AnyModel::Video(model), logs, test)
        }
        (Stage::Joint, Some(m)) => {
            let p = init.unwrap();
            let AnyModel::Video(mut model) = load_init(p, &classes, m.as_str())?.1 else {
                return usage(format!("{} is not a temporal checkpoint", p.display()));
            };
            let seqs = sequences(&train_split, m)?;
            let t = segment_len(&seqs, r.segment_len)?;
            let logs = train_joint(&mut model, &seqs, t, cfg)?;
            let test = video_report(&model, &test_split, m, t)?;
            (AnyModel::Video(model), logs, test)
        }
        (_, None) => {
            let dp = init.unwrap();
            let rp = a.init_rgb.as_deref().unwrap();
            let depth = load_init(dp, &classes, "depth")?.1;
            let rgb = load_init(rp, &classes, "rgb")?.1;
            let seed = cfg.seed.wrapping_add(4);
            match (rgb, depth) {
                (AnyModel::Image(rn), AnyModel::Image(dn)) => {
                    let mut fused = RgbdImageModel::new(rn, dn, r.fusion_hidden, seed)?;
                    let logs = train_fused_images(&mut fused, &rgbd_stills(&train_split), cfg)?;
                    let test_samples = rgbd_stills(&test_split);
                    let test = if test_samples.is_empty() {
                        None
                    } else {
                        Some(evaluate_rgbd_images(&fused, &test_samples)?)
                    };
                    (AnyModel::RgbdImage(fused), logs, test)
                }
                (AnyModel::Video(rv), AnyModel::Video(dv)) => {
                    let rs = sequences(&train_split, Modality::Rgb)?;
                    let ds = sequences(&train_split, Modality::Depth)?;
                    let t = segment_len(&ds, r.segment_len)?;
                    let mut fused = RgbdVideoModel::from_branches(rv, dv, r.fusion_hidden, seed)?;
                    let logs = train_joint_fused(&mut fused, &rs, &ds, t, cfg)?;
                    let test = if test_split.sequences.is_empty() && test_split.stills.is_empty() {
                        None
                    } else {
                        let rs = sequences(&test_split, Modality::Rgb)?;
                        let ds = sequences(&test_split, Modality::Depth)?;
                        Some(evaluate_rgbd_video(&fused, &rs, &ds, t)?)
                    };
                    (AnyModel::RgbdVideo(fused), logs, test)
                }
                (rgb, depth) => {
                    return usage(format!(
                        "cannot fuse a {} rgb checkpoint with a {} depth checkpoint",
                        kind(&rgb),
                        kind(&depth)
                    ))
                }
            }
        }
    };

    let bytes = encode_checkpoint(&model, &classes, a.modality.as_str(), name)?;
    let ckpt = a.out.join(format!("{name}.dsc"));
    save_checkpoint(&ckpt, &bytes)?;
    let mut metrics = log_lines(name, &logs);
    if let Some(rep) = &test {
        metrics.push_str(&rep.to_metric_lines(&format!("{name}.test."), &classes));
    }
    let log_path = a.out.join(format!("{name}.metrics.tsv"));
    std::fs::write(&log_path, &metrics)
        .with_context(|| format!("writing {}", log_path.display()))?;
    println!("checkpoint {}", ckpt.display());
    if let Some(rep) = &test {
        print!("{}", rep.to_table(&classes));
    }
    Ok(())
}

fn image_report(
    net: &Network,
    split: &SceneSplit,
    classes: &[String],
    m: Modality,
) -> anyhow::Result<Option<EvalReport>> {
    let ds = image_set(split, classes, m)?;
    if ds.is_empty() {
        return Ok(None);
    }
    Ok(Some(evaluate_images(net, &ds)?))
}

fn video_report(
    model: &depthscene::model::VideoModel,
    split: &SceneSplit,
    m: Modality,
    t: usize,
) -> anyhow::Result<Option<EvalReport>> {
    if split.sequences.is_empty() && split.stills.is_empty() {
        return Ok(None);
    }
    let seqs = sequences(split, m)?;
    Ok(Some(evaluate_video(model, &seqs, segment_len(&seqs, t)?)?))
}

pub fn eval(a: EvalArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let (meta, model) = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let classes = manifest.classes();
    check_classes(&meta, &classes, &a.checkpoint)?;
    let (_, split) = load_split(&manifest, role(a.split))?;
    let modality = modality_of(&meta)?;
    if a.wsvm_p.is_some() && a.aggregate != Aggregate::None {
        return usage(
            "--wsvm-p replaces the classifier of single images; use it with --aggregate none",
        );
    }
    let report = match (&model, a.aggregate, modality) {
        (AnyModel::Image(net), Aggregate::None, Some(m)) => match a.wsvm_p {
            Some(p) => {
                let (_, train_split) = load_split(&manifest, Role::Train)?;
                wsvm_report(
                    net,
                    &image_set(&train_split, &classes, m)?,
                    &image_set(&split, &classes, m)?,
                    p,
                    &a,
                )?
            }
            None => evaluate_images(net, &image_set(&split, &classes, m)?)?,
        },
        (AnyModel::Video(v), Aggregate::None, Some(m)) => {
            evaluate_images(&v.branch.cnn, &image_set(&split, &classes, m)?)?
        }
        (AnyModel::Image(net), Aggregate::Ave, Some(m)) => {
            evaluate_ave(net, &sequences(&split, m)?)?
        }
        (AnyModel::Video(v), Aggregate::Ave, Some(m)) => {
            evaluate_ave(&v.branch.cnn, &sequences(&split, m)?)?
        }
        (AnyModel::Video(v), Aggregate::Lstm, Some(m)) => {
            let seqs = sequences(&split, m)?;
            evaluate_video(v, &seqs, segment_len(&seqs, a.segment_len)?)?
        }
        (AnyModel::RgbdImage(f), Aggregate::None, None) => {
            evaluate_rgbd_images(f, &rgbd_stills(&split))?
        }
        (AnyModel::RgbdVideo(f), Aggregate::Lstm, None) => {
            let rs = sequences(&split, Modality::Rgb)?;
            let ds = sequences(&split, Modality::Depth)?;
            evaluate_rgbd_video(f, &rs, &ds, segment_len(&ds, a.segment_len)?)?
        }
        (m, agg, _) => {
            return usage(format!(
                "--aggregate {} does not apply to a {} checkpoint",
                format!("{agg:?}").to_lowercase(),
                kind(m)
            ))
        }
    };
    print!("{}", report.to_table(&classes));
    let prefix = format!("{}.", format!("{:?}", a.aggregate).to_lowercase());
    print!("{}", report.to_metric_lines(&prefix, &classes));
    Ok(())
}

fn wsvm_report(
    net: &Network,
    train: &Dataset,
    test: &Dataset,
    p: f64,
    a: &EvalArgs,
) -> anyhow::Result<EvalReport> {
    if !p.is_finite() {
        return usage(format!("--wsvm-p {p} is not finite"));
    }
    let feats = train
        .samples
        .iter()
        .map(|s| net.features(&s.input))
        .collect::<depthscene::Result<Vec<_>>>()?;
    let weights = compute_class_weights(&train.class_counts(), p)?;
    let cfg = TrainingConfig {
        learning_rate: a.svm_lr,
        epochs: a.svm_epochs,
        seed: a.seed,
        ..TrainingConfig::default()
    };
    let (clf, _) = train_weighted_linear(&feats, &train.labels(), &weights, &cfg)?;
    Ok(evaluate_linear(net, &clf, test)?)
}

pub fn diag(a: DiagArgs) -> anyhow::Result<()> {
    let manifest = load_manifest(&a.manifest)?;
    let (meta, model) = load_checkpoint(&a.checkpoint)
        .with_context(|| format!("loading {}", a.checkpoint.display()))?;
    let classes = manifest.classes();
    check_classes(&meta, &classes, &a.checkpoint)?;
    let Some(branch) = single(a.branch) else {
        return usage("--branch must be rgb or depth");
    };
    let (net, own) = match &model {
        AnyModel::Image(n) => (n, modality_of(&meta)?),
        AnyModel::Video(v) => (&v.branch.cnn, modality_of(&meta)?),
        AnyModel::RgbdImage(f) => (
            if branch == Modality::Rgb {
                &f.rgb
            } else {
                &f.depth
            },
            Some(branch),
        ),
        AnyModel::RgbdVideo(f) => (
            if branch == Modality::Rgb {
                &f.rgb.cnn
            } else {
                &f.depth.cnn
            },
            Some(branch),
        ),
    };
    let conv = net.spec().conv_layer_names();
    if !conv.contains(&a.layer.as_str()) {
        return usage(format!(
            "unknown conv layer `{}`; available: {}",
            a.layer,
            conv.join(", ")
        ));
    }
    let probe = match a.modality {
        Some(m) => single(m).context("--modality must be rgb or depth")?,
        None => own.context("unreachable: checkpoint without a modality")?,
    };
    let (_, split) = load_split(&manifest, role(a.split))?;
    let inputs: Vec<Tensor> = image_set(&split, &classes, probe)?
        .samples
        .into_iter()
        .map(|s| s.input)
        .collect();
    let profile = activation_rate(net, &a.layer, probe.as_str(), &inputs)?;
    create_dir(&a.out)?;
    let mut s = Settings::default();
    s.record("checkpoint", a.checkpoint.display());
    s.record("manifest", a.manifest.display());
    s.record("layer", &a.layer);
    s.record("modality", probe.as_str());
    s.record("split", format!("{:?}", a.split).to_lowercase());
    s.echo(&a.out)?;
    let table = a.out.join(format!("activation_{}.tsv", a.layer));
    std::fs::write(&table, profile.to_table())
        .with_context(|| format!("writing {}", table.display()))?;
    let grid = a.out.join(format!("filters_{}.ppm", a.layer));
    export_filter_grid(net, &a.layer, &grid)?;
    println!(
        "metric\t{}.{}.gini\t{:.6}",
        a.layer,
        probe.as_str(),
        profile.gini()
    );
    println!("table {}", table.display());
    println!("filters {}", grid.display());
    Ok(())
}
