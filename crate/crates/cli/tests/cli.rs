use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn run(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_depthscene"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("spawn depthscene")
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed:\n{}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn gen(dir: &Path, extra: &[&str]) -> PathBuf {
    let mut args = vec!["gen-data", "--out", p(dir), "--seed", "5"];
    args.extend_from_slice(extra);
    ok(&args);
    dir.join("manifest.tsv")
}

fn train(manifest: &Path, out: &Path, stage: &str, modality: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "train",
        "--stage",
        stage,
        "--modality",
        modality,
        "--manifest",
        p(manifest),
        "--out",
        p(out),
    ];
    args.extend_from_slice(extra);
    run(&args)
}

fn metric(text: &str, name: &str) -> f64 {
    text.lines()
        .filter_map(|l| l.strip_prefix("metric\t"))
        .find_map(|l| l.strip_prefix(&format!("{name}\t")))
        .unwrap_or_else(|| panic!("no metric {name} in\n{text}"))
        .parse()
        .unwrap()
}

fn crc_of_dir(dir: &Path) -> Vec<(String, u32)> {
    let mut files: Vec<(String, u32)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (
                e.file_name().to_string_lossy().into_owned(),
                crc32fast::hash(&std::fs::read(e.path()).unwrap()),
            )
        })
        .collect();
    files.sort();
    files
}

#[test]
fn gen_data_counts_image_records() {
    let dir = tempfile::tempdir().unwrap();
    let out = gen(dir.path(), &["--classes", "10", "--per-class", "20"]);
    let text = std::fs::read_to_string(out).unwrap();
    let records: Vec<&str> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .collect();
    let rgb = records
        .iter()
        .filter(|l| l.split('\t').nth(2) == Some("rgb"))
        .count();
    let depth = records
        .iter()
        .filter(|l| l.split('\t').nth(2) == Some("depth"))
        .count();
    assert_eq!(rgb, 200);
    assert_eq!(depth, 200);
}

#[test]
fn gen_data_is_deterministic() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let flags = [
        "--classes",
        "3",
        "--per-class",
        "2",
        "--videos-per-class",
        "1",
        "--video-frames",
        "12",
    ];
    gen(a.path(), &flags);
    gen(b.path(), &flags);
    assert_eq!(crc_of_dir(a.path()), crc_of_dir(b.path()));
}

#[test]
fn gen_data_rejects_bad_flags() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(
        run(&["gen-data", "--per-class", "0", "--out", p(dir.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["gen-data", "--classes", "11", "--out", p(dir.path())])
            .status
            .code(),
        Some(2)
    );
    assert_eq!(
        run(&["gen-data", "--per-class", "x", "--out", p(dir.path())])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn gen_data_io_failure_exits_1() {
    let dir = tempfile::tempdir().unwrap();
    let blocker = dir.path().join("file");
    std::fs::write(&blocker, "x").unwrap();
    let out = run(&[
        "gen-data",
        "--per-class",
        "1",
        "--out",
        p(&blocker.join("sub")),
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn train_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "2"],
    );
    let out = dir.path().join("run");
    assert_eq!(
        train(&m, &out, "pretrain", "depth", &[]).status.code(),
        Some(2)
    );
    let missing = train(&m, &out, "finetune", "depth", &[]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(
        stderr(&missing).contains("--stage wsp"),
        "{}",
        stderr(&missing)
    );
    let missing = train(&m, &out, "temporal", "depth", &[]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("finetune"));
    let missing = train(&m, &out, "joint", "rgb", &[]);
    assert_eq!(missing.status.code(), Some(2));
    assert!(stderr(&missing).contains("temporal"));
    assert_eq!(
        train(&m, &out, "scratch", "rgbd", &[]).status.code(),
        Some(2)
    );
    assert_eq!(
        train(&m, &out, "scratch", "depth", &["--lr", "-1"])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn scratch_and_two_step_chain_give_comparable_logs() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "3", "--per-class", "4"],
    );
    let common = ["--epochs", "2", "--seed", "3"];
    let scratch = dir.path().join("scratch");
    ok_train(&m, &scratch, "scratch", "depth", &common);
    let chain = dir.path().join("chain");
    ok_train(&m, &chain, "wsp", "depth", &common);
    let wsp = chain.join("wsp.dsc");
    let mut ft = common.to_vec();
    ft.extend(["--init", p(&wsp)]);
    ok_train(&m, &chain, "finetune", "depth", &ft);

    let a = std::fs::read_to_string(scratch.join("scratch.metrics.tsv")).unwrap();
    let b = std::fs::read_to_string(chain.join("finetune.metrics.tsv")).unwrap();
    for log in [&a, &b] {
        let stage = if std::ptr::eq(log, &a) {
            "scratch"
        } else {
            "finetune"
        };
        for e in 0..2 {
            assert!(metric(log, &format!("{stage}.epoch{e}.loss")).is_finite());
        }
        let acc = metric(log, &format!("{stage}.test.mean_class_accuracy"));
        assert!((0.0..=1.0).contains(&acc));
    }
    assert!(chain.join("wsp.metrics.tsv").exists());
    let cfg = std::fs::read_to_string(chain.join("config.txt")).unwrap();
    assert!(cfg.contains("stage=finetune"));
    assert!(cfg.contains("epochs=2"));
}

fn ok_train(m: &Path, out: &Path, stage: &str, modality: &str, extra: &[&str]) {
    let o = train(m, out, stage, modality, extra);
    assert!(o.status.success(), "{stage}: {}", stderr(&o));
}

#[test]
fn repeated_training_gives_identical_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "3"],
    );
    let mut crcs = Vec::new();
    for run in ["a", "b"] {
        let out = dir.path().join(run);
        ok_train(
            &m,
            &out,
            "scratch",
            "rgb",
            &["--epochs", "2", "--seed", "9"],
        );
        let bytes = std::fs::read(out.join("scratch.dsc")).unwrap();
        crcs.push(crc32fast::hash(&bytes));
    }
    assert_eq!(crcs[0], crcs[1]);
}

#[test]
fn config_file_values_apply_and_flags_override() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "2"],
    );
    let cfg = dir.path().join("run.cfg");
    std::fs::write(&cfg, "# tiny run\nepochs = 1\nlr = 0.02\nseed = 4\n").unwrap();
    let out = dir.path().join("run");
    ok_train(
        &m,
        &out,
        "scratch",
        "depth",
        &["--config", p(&cfg), "--lr", "0.005"],
    );
    let echo = std::fs::read_to_string(out.join("config.txt")).unwrap();
    assert!(echo.contains("epochs=1\n"));
    assert!(echo.contains("lr=0.005\n"));
    assert!(echo.contains("seed=4\n"));

    std::fs::write(&cfg, "epoch = 1\n").unwrap();
    assert_eq!(
        train(&m, &out, "scratch", "depth", &["--config", p(&cfg)])
            .status
            .code(),
        Some(2)
    );
}

#[test]
fn memorized_toy_set_scores_perfectly() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "4"],
    );
    let out = dir.path().join("run");
    ok_train(
        &m,
        &out,
        "scratch",
        "rgb",
        &["--epochs", "60", "--lr", "0.003", "--batch-size", "2"],
    );
    let ckpt = out.join("scratch.dsc");
    let o = ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&m),
        "--split",
        "train",
    ]);
    assert_eq!(metric(&stdout(&o), "none.mean_class_accuracy"), 1.0);
}

#[test]
fn eval_aggregation_and_taxonomy() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "4"],
    );
    let out = dir.path().join("run");
    ok_train(&m, &out, "scratch", "depth", &["--epochs", "2"]);
    let ckpt = out.join("scratch.dsc");
    let eval = |extra: &[&str]| {
        let mut args = vec!["eval", "--checkpoint", p(&ckpt), "--manifest", p(&m)];
        args.extend_from_slice(extra);
        run(&args)
    };

    // stills are one-frame sequences, so averaging changes nothing
    let none = stdout(&eval(&[]));
    let ave = stdout(&eval(&["--aggregate", "ave"]));
    assert_eq!(
        metric(&none, "none.mean_class_accuracy"),
        metric(&ave, "ave.mean_class_accuracy")
    );
    assert!(none.contains("mean"));

    let w = eval(&["--wsvm-p", "2"]);
    assert!(w.status.success(), "{}", stderr(&w));
    assert!((0.0..=1.0).contains(&metric(&stdout(&w), "none.mean_class_accuracy")));

    assert_eq!(eval(&["--aggregate", "lstm"]).status.code(), Some(2));
    assert_eq!(eval(&["--aggregate", "mean"]).status.code(), Some(2));

    let other = gen(
        &dir.path().join("other"),
        &["--classes", "3", "--per-class", "2"],
    );
    let o = run(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&other)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("taxonomy"));
}

#[test]
fn video_stages_with_single_frame_sequences() {
    let dir = tempfile::tempdir().unwrap();
    // at most five raw frames leave one keyframe per video
    let m = gen(
        &dir.path().join("data"),
        &[
            "--classes",
            "2",
            "--per-class",
            "2",
            "--videos-per-class",
            "2",
            "--video-frames",
            "4",
        ],
    );
    let out = dir.path().join("run");
    let quick = ["--epochs", "1", "--hidden", "4"];
    ok_train(&m, &out, "scratch", "depth", &quick);
    let mut t = quick.to_vec();
    let cnn = out.join("scratch.dsc");
    t.extend(["--init", p(&cnn)]);
    let o = train(&m, &out, "temporal", "depth", &t);
    assert!(o.status.success(), "{}", stderr(&o));
    let mut j = quick.to_vec();
    let temporal = out.join("temporal.dsc");
    j.extend(["--init", p(&temporal), "--segment-len", "9"]);
    let o = train(&m, &out, "joint", "depth", &j);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stderr(&o).contains("T=1"), "{}", stderr(&o));
    let joint = out.join("joint.dsc");
    let o = ok(&[
        "eval",
        "--checkpoint",
        p(&joint),
        "--manifest",
        p(&m),
        "--aggregate",
        "lstm",
    ]);
    assert!(metric(&stdout(&o), "lstm.count") > 0.0);

    // fuse the rgb and depth temporal models
    let rgb = dir.path().join("rgb");
    ok_train(&m, &rgb, "scratch", "rgb", &quick);
    let mut t = quick.to_vec();
    let rgb_cnn = rgb.join("scratch.dsc");
    t.extend(["--init", p(&rgb_cnn)]);
    ok_train(&m, &rgb, "temporal", "rgb", &t);
    let fused = dir.path().join("fused");
    let rgb_temporal = rgb.join("temporal.dsc");
    ok_train(
        &m,
        &fused,
        "joint",
        "rgbd",
        &[
            "--epochs",
            "1",
            "--init",
            p(&temporal),
            "--init-rgb",
            p(&rgb_temporal),
        ],
    );
    let ckpt = fused.join("joint.dsc");
    ok(&[
        "eval",
        "--checkpoint",
        p(&ckpt),
        "--manifest",
        p(&m),
        "--aggregate",
        "lstm",
    ]);
}

#[test]
fn fused_image_model_from_two_cnns() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "3"],
    );
    let (rgb, depth) = (dir.path().join("rgb"), dir.path().join("depth"));
    ok_train(&m, &rgb, "scratch", "rgb", &["--epochs", "1"]);
    ok_train(&m, &depth, "scratch", "depth", &["--epochs", "1"]);
    let fused = dir.path().join("fused");
    let (r, d) = (rgb.join("scratch.dsc"), depth.join("scratch.dsc"));
    ok_train(
        &m,
        &fused,
        "joint",
        "rgbd",
        &["--epochs", "1", "--init", p(&d), "--init-rgb", p(&r)],
    );
    let ckpt = fused.join("joint.dsc");
    let o = ok(&["eval", "--checkpoint", p(&ckpt), "--manifest", p(&m)]);
    assert!((0.0..=1.0).contains(&metric(&stdout(&o), "none.mean_class_accuracy")));
    // modalities swapped
    let o = train(
        &m,
        &fused,
        "joint",
        "rgbd",
        &["--init", p(&r), "--init-rgb", p(&d)],
    );
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn diag_writes_sorted_profile_and_filter_grid() {
    let dir = tempfile::tempdir().unwrap();
    let m = gen(
        &dir.path().join("data"),
        &["--classes", "2", "--per-class", "3"],
    );
    let out = dir.path().join("run");
    ok_train(&m, &out, "scratch", "rgb", &["--epochs", "1"]);
    let ckpt = out.join("scratch.dsc");
    let diag = |dest: &Path, layer: &str| {
        run(&[
            "diag",
            "--checkpoint",
            p(&ckpt),
            "--manifest",
            p(&m),
            "--layer",
            layer,
            "--out",
            p(dest),
            "--modality",
            "depth",
        ])
    };
    let bad = diag(&dir.path().join("d0"), "conv9");
    assert_eq!(bad.status.code(), Some(2));
    assert!(
        stderr(&bad).contains("conv1, conv2, conv3, conv4"),
        "{}",
        stderr(&bad)
    );

    let (d1, d2) = (dir.path().join("d1"), dir.path().join("d2"));
    for d in [&d1, &d2] {
        let o = diag(d, "conv1");
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(crc_of_dir(&d1), crc_of_dir(&d2));
    let table = std::fs::read_to_string(d1.join("activation_conv1.tsv")).unwrap();
    let rates: Vec<f64> = table
        .lines()
        .skip(2)
        .map(|l| l.split('\t').nth(2).unwrap().parse().unwrap())
        .collect();
    assert_eq!(rates.len(), 12);
    assert!(rates.windows(2).all(|w| w[0] >= w[1]));
    assert!(std::fs::read(d1.join("filters_conv1.ppm"))
        .unwrap()
        .starts_with(b"P6"));
}
