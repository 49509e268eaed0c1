use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

fn exreg(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_exreg"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn text(b: &[u8]) -> String {
    String::from_utf8_lossy(b).into_owned()
}

fn ok(args: &[&str]) -> Output {
    let out = exreg(args);
    assert_eq!(out.status.code(), Some(0), "{args:?} failed:\n{}", text(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

#[test]
fn unknown_flag_is_a_user_error_with_usage() {
    let out = exreg(&["train", "--no-such-flag"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("Usage"), "{}", text(&out.stderr));
}

#[test]
fn missing_required_setting_is_a_user_error() {
    let out = exreg(&["correct", "--in", "x.png", "--out", "y.png"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(text(&out.stderr).contains("--ckpt"), "{}", text(&out.stderr));
}

#[test]
fn missing_input_file_is_a_user_error() {
    let dir = tempfile::tempdir().unwrap();
    let ck = dir.path().join("nope.exrg");
    let out = exreg(&["generate", "--ckpt", p(&ck), "--in", "x.png", "--out", "y.png", "--ev", "1"]);
    assert_eq!(out.status.code(), Some(1), "{}", text(&out.stderr));
}

#[test]
fn zero_threads_is_rejected() {
    let out = exreg(&["--threads", "0", "selftest"]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn help_exits_zero() {
    let out = exreg(&["--help"]);
    assert_eq!(out.status.code(), Some(0));
    for sub in ["make-dataset", "train", "correct", "generate", "evaluate", "gradcheck", "selftest"] {
        assert!(text(&out.stdout).contains(sub), "help lists {sub}");
    }
}

#[test]
fn selftest_passes_quickly() {
    let t = Instant::now();
    let out = ok(&["selftest"]);
    assert!(t.elapsed() < Duration::from_secs(60));
    assert!(text(&out.stdout).contains("selftest passed"));
}

#[test]
fn config_file_layers_under_flags() {
    let dir = tempfile::tempdir().unwrap();
    let conf = dir.path().join("run.conf");
    std::fs::write(&conf, "seed = 5\nmake-dataset.scenes = 3\nmake-dataset.size = 16\ntrain.epochs = 99\n").unwrap();
    let data = dir.path().join("data");
    ok(&["--config", p(&conf), "make-dataset", "--out", p(&data), "--seed", "6"]);
    let resolved = std::fs::read_to_string(data.join("resolved.conf")).unwrap();
    assert!(resolved.contains("make-dataset.scenes = 3"), "{resolved}");
    assert!(resolved.contains("make-dataset.seed = 6"), "{resolved}");
    assert!(!resolved.contains("epochs"), "{resolved}");

    // The echoed file replays the same run.
    let again = dir.path().join("again");
    ok(&["--config", p(&data.join("resolved.conf")), "make-dataset", "--out", p(&again)]);
    let a = std::fs::read(data.join("train.tsv")).unwrap();
    let b = std::fs::read(again.join("train.tsv")).unwrap();
    assert_eq!(a, b);

    std::fs::write(&conf, "make-dataset.scenez = 3\n").unwrap();
    let out = exreg(&["--config", p(&conf), "make-dataset", "--out", p(&again)]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn dataset_train_correct_generate_evaluate() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let data = d.join("data");
    ok(&["make-dataset", "--out", p(&data), "--scenes", "20", "--size", "16", "--seed", "2"]);
    assert!(data.join("train.tsv").is_file() && data.join("test.tsv").is_file());

    let micro = ["--profile", "micro", "--epochs", "1", "--batch-size", "2", "--patch-size", "16"];
    let meg = d.join("meg");
    let mut args = vec!["train", "--stage", "megnet", "--data", p(&data), "--out", p(&meg)];
    args.extend(micro);
    ok(&args);
    assert!(meg.join("checkpoint.exrg").is_file());
    assert!(meg.join("train_log.csv").is_file());
    assert!(meg.join("resolved.conf").is_file());

    let reg = d.join("reg");
    let mut args = vec!["train", "--stage", "regnet", "--data", p(&data), "--out", p(&reg), "--init", p(&meg)];
    args.extend(micro);
    args.extend(["--set", "val_every=1"]);
    ok(&args);

    let no_init = d.join("bad");
    let mut args = vec!["train", "--stage", "regnet", "--data", p(&data), "--out", p(&no_init)];
    args.extend(micro);
    assert_eq!(exreg(&args).status.code(), Some(1));

    let input = data.join("images").join("scene_0000_ev-1.00.png");
    let fixed = d.join("fixed.png");
    let emap = d.join("emap.png");
    ok(&["correct", "--ckpt", p(&reg), "--in", p(&input), "--out", p(&fixed), "--dump-exposure-map", p(&emap)]);
    assert!(fixed.is_file() && emap.is_file());

    let brighter = d.join("brighter.png");
    ok(&["generate", "--ckpt", p(&meg), "--in", p(&input), "--out", p(&brighter), "--ev", "-0.5"]);
    assert!(brighter.is_file());

    let ev = d.join("eval");
    ok(&["evaluate", "--ckpt", p(&reg), "--data", p(&data), "--out", p(&ev), "--generation", "true"]);
    let report = std::fs::read_to_string(ev.join("report.csv")).unwrap();
    assert!(report.lines().count() > 1, "{report}");
    assert!(ev.join("summary.txt").is_file());
    let generation = std::fs::read_to_string(ev.join("generation.csv")).unwrap();
    assert_eq!(generation.lines().count(), 5, "{generation}");

    let base = d.join("identity");
    ok(&["evaluate", "--corrector", "identity", "--data", p(&data), "--out", p(&base)]);
    assert!(std::fs::read_to_string(base.join("summary.txt")).unwrap().contains("PSNR-Var"));
}
