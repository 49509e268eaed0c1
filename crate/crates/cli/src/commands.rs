use std::path::{Path, PathBuf};
use std::time::Instant;

use exreg::dataset::{generate_latent, render_ev, synthesize_dataset, DatasetManifest, Scene, SynthConfig};
use exreg::image::{save_gray16, BitDepth, Image};
use exreg::metrics::{evaluate, evaluate_generation, read_pi_scores, Corrector, EvalOptions, Variance};
use exreg::model::{megnet_from_checkpoint, network_gradchecks, ExReg};
use exreg::regnet::EXPOSURE_LIMIT;
use exreg::training::{parse_list, train, train_manifest, Checkpoint, Profile, Stage, TrainConfig};
use exreg::Real;
use log::info;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::app::{self, Cli, Command};
use crate::config::{checkpoint_path, read_file, Resolved};

pub const CHECKPOINT_FILE: &str = "checkpoint.exrg";

#[derive(Debug)]
pub enum CliError {
    /// Bad input from the user: exit code 1.
    User(String),
    /// Internal fault or failed self-check: exit code 2.
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 1,
            CliError::Internal(_) => 2,
        }
    }

    pub fn io(path: &Path, e: std::io::Error) -> Self {
        CliError::User(format!("{}: {e}", path.display()))
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(m) | CliError::Internal(m) => f.write_str(m),
        }
    }
}

impl From<exreg::Error> for CliError {
    fn from(e: exreg::Error) -> Self {
        if e.is_user_error() {
            CliError::User(e.to_string())
        } else {
            CliError::Internal(e.to_string())
        }
    }
}

type Res<T = ()> = Result<T, CliError>;

fn threads(flag: Option<usize>) -> Res<usize> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("EXREG_THREADS") {
            Ok(v) => v
                .trim()
                .parse()
                .map_err(|_| CliError::User(format!("EXREG_THREADS: cannot parse {v:?}")))?,
            Err(_) => 1,
        },
    };
    if n == 0 {
        return Err(CliError::User("thread count must be at least 1".into()));
    }
    Ok(n)
}

pub fn run(cli: Cli) -> Res {
    let n = threads(cli.threads)?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Internal(e.to_string()))?;
    let file = read_file(cli.config.as_deref())?;
    match cli.command {
        Command::MakeDataset(a) => make_dataset(a, &file),
        Command::Train(a) => train_cmd(a, &file),
        Command::Correct(a) => correct(a, &file),
        Command::Generate(a) => generate(a, &file),
        Command::Evaluate(a) => evaluate_cmd(a, &file),
        Command::Gradcheck(a) => gradcheck(a, &file),
        Command::Selftest(a) => selftest(a, &file),
    }
}

type File = std::collections::BTreeMap<String, String>;

fn ev_list(v: &[Real]) -> String {
    v.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
}

fn make_dataset(a: app::MakeDataset, file: &File) -> Res {
    let d = SynthConfig::default();
    let r = Resolved::layer(
        "make-dataset",
        &[
            ("out", String::new()),
            ("scenes", d.n_scenes.to_string()),
            ("size", d.image_size.to_string()),
            ("seed", d.seed.to_string()),
            ("illumination", d.illumination_stops.to_string()),
            ("ev_set", ev_list(&d.ev_set)),
            ("bit_depth", "8".into()),
        ],
        file,
        &[
            ("out", a.out),
            ("scenes", a.scenes),
            ("size", a.size),
            ("seed", a.seed),
            ("illumination", a.illumination),
            ("ev_set", a.ev_set),
            ("bit_depth", a.bit_depth),
        ],
    )?;
    let out = PathBuf::from(r.require("out")?);
    r.echo("make-dataset", Some(&out))?;
    let cfg = SynthConfig {
        n_scenes: r.parse("scenes")?,
        image_size: r.parse("size")?,
        ev_set: parse_list("ev_set", r.get("ev_set"))?,
        seed: r.parse("seed")?,
        illumination_stops: r.parse("illumination")?,
        bit_depth: match r.get("bit_depth") {
            "8" => BitDepth::Eight,
            "16" => BitDepth::Sixteen,
            v => return Err(CliError::User(format!("bit_depth must be 8 or 16, got {v:?}"))),
        },
    };
    let t = Instant::now();
    let ds = synthesize_dataset(&cfg, &out)?;
    info!(
        "wrote {} train and {} test scenes to {} in {:.1?}",
        ds.train.len(),
        ds.test.len(),
        out.display(),
        t.elapsed()
    );
    Ok(())
}

fn manifest_path(r: &Resolved, split_file: &str) -> Res<PathBuf> {
    if let Some(m) = r.optional("manifest") {
        return Ok(PathBuf::from(m));
    }
    match r.optional("data") {
        Some(d) => Ok(Path::new(d).join(split_file)),
        None => Err(CliError::User("--data or --manifest is required".into())),
    }
}

fn train_cmd(a: app::Train, file: &File) -> Res {
    let stage_text = a
        .stage
        .clone()
        .or_else(|| file.get("train.stage").or_else(|| file.get("stage")).cloned())
        .ok_or_else(|| CliError::User("--stage is required".into()))?;
    let stage: Stage = stage_text.parse()?;
    let mut defaults: Vec<(&str, String)> = vec![
        ("data", String::new()),
        ("manifest", String::new()),
        ("out", String::new()),
        ("init", String::new()),
    ];
    let base = exreg::training::parse_key_values(&TrainConfig::for_stage(stage).to_text())?;
    let keys: Vec<String> = base.keys().cloned().collect();
    for k in &keys {
        defaults.push((k.as_str(), base[k].clone()));
    }
    let mut flags = vec![
        ("stage", Some(stage_text)),
        ("data", a.data),
        ("manifest", a.manifest),
        ("out", a.out),
        ("init", a.init),
        ("epochs", a.epochs),
        ("learning_rate", a.learning_rate),
        ("batch_size", a.batch_size),
        ("patch_size", a.patch_size),
        ("seed", a.seed),
        ("profile", a.profile),
        ("ev_set", a.ev_set),
    ];
    let mut extra = Vec::new();
    for kv in &a.set {
        let (k, v) = kv
            .split_once('=')
            .ok_or_else(|| CliError::User(format!("--set expects KEY=VALUE, got {kv:?}")))?;
        let k = if k.trim() == "lr" { "learning_rate" } else { k.trim() };
        extra.push((k.to_string(), v.trim().to_string()));
    }
    for (k, v) in &extra {
        flags.push((k.as_str(), Some(v.clone())));
    }
    let r = Resolved::layer("train", &defaults, file, &flags)?;
    let out = PathBuf::from(r.require("out")?);
    let manifest = manifest_path(&r, "train.tsv")?;
    let mut cfg = TrainConfig::for_stage(stage);
    for k in &keys {
        cfg.set(k, r.get(k))?;
    }
    cfg.validate()?;
    r.echo("train", Some(&out))?;

    let init = match r.optional("init") {
        Some(p) => Some(Checkpoint::load(&checkpoint_path(p))?),
        None => None,
    };
    let manifest = DatasetManifest::load(&manifest)?;
    let t = Instant::now();
    let outcome = train_manifest(&cfg, &manifest, init.as_ref(), Some(&out.join("train_log.csv")))?;
    let ckpt = out.join(CHECKPOINT_FILE);
    outcome.checkpoint.save(&ckpt)?;
    info!(
        "{} stage finished in {:.1?}; best validation PSNR {}; checkpoint {}",
        stage.as_str(),
        t.elapsed(),
        outcome
            .best_val_psnr
            .map_or("n/a".to_string(), |p| format!("{p:.3} dB")),
        ckpt.display()
    );
    Ok(())
}

fn load_input(path: &str) -> Res<Image> {
    Ok(Image::load_png(Path::new(path))?)
}

fn correct(a: app::Correct, file: &File) -> Res {
    let r = Resolved::layer(
        "correct",
        &[
            ("ckpt", String::new()),
            ("in", String::new()),
            ("out", String::new()),
            ("dump_exposure_map", String::new()),
        ],
        file,
        &[
            ("ckpt", a.ckpt),
            ("in", a.input),
            ("out", a.out),
            ("dump_exposure_map", a.dump_exposure_map),
        ],
    )?;
    let (ckpt, input, out) = (r.require("ckpt")?, r.require("in")?, r.require("out")?);
    r.echo("correct", None)?;
    let ckpt = Checkpoint::load(&checkpoint_path(ckpt))?;
    if !ExReg::is_trained(&ckpt) {
        log::warn!("checkpoint has not completed the regnet stage");
    }
    let model = ExReg::from_checkpoint(&ckpt)?;
    let img = load_input(input)?;
    let (y, e) = model.correct(&img)?;
    y.save_png(Path::new(out), BitDepth::Eight)?;
    if let Some(p) = r.optional("dump_exposure_map") {
        save_gray16(Path::new(p), img.height(), img.width(), e.data(), -EXPOSURE_LIMIT, EXPOSURE_LIMIT)?;
    }
    Ok(())
}

fn generate(a: app::Generate, file: &File) -> Res {
    let r = Resolved::layer(
        "generate",
        &[
            ("ckpt", String::new()),
            ("in", String::new()),
            ("out", String::new()),
            ("ev", String::new()),
        ],
        file,
        &[("ckpt", a.ckpt), ("in", a.input), ("out", a.out), ("ev", a.ev)],
    )?;
    let (ckpt, input, out) = (r.require("ckpt")?, r.require("in")?, r.require("out")?);
    r.require("ev")?;
    let ev: Real = r.parse("ev")?;
    if !ev.is_finite() {
        return Err(CliError::User(format!("--ev must be finite, got {ev}")));
    }
    r.echo("generate", None)?;
    let megnet = megnet_from_checkpoint(&Checkpoint::load(&checkpoint_path(ckpt))?)?;
    let y = megnet.generate(&load_input(input)?, ev)?;
    y.save_png(Path::new(out), BitDepth::Eight)?;
    Ok(())
}

fn evaluate_cmd(a: app::Evaluate, file: &File) -> Res {
    let r = Resolved::layer(
        "evaluate",
        &[
            ("ckpt", String::new()),
            ("corrector", "exreg".into()),
            ("data", String::new()),
            ("manifest", String::new()),
            ("out", String::new()),
            ("pi_scores", String::new()),
            ("variance", "population".into()),
            ("include_zero_ev", "true".into()),
            ("generation", "false".into()),
        ],
        file,
        &[
            ("ckpt", a.ckpt),
            ("corrector", a.corrector),
            ("data", a.data),
            ("manifest", a.manifest),
            ("out", a.out),
            ("pi_scores", a.pi_scores),
            ("variance", a.variance),
            ("include_zero_ev", a.include_zero_ev),
            ("generation", a.generation),
        ],
    )?;
    let out = PathBuf::from(r.require("out")?);
    let manifest = manifest_path(&r, "test.tsv")?;
    let options = EvalOptions {
        variance: match r.get("variance") {
            "population" => Variance::Population,
            "sample" => Variance::Sample,
            v => return Err(CliError::User(format!("variance must be population or sample, got {v:?}"))),
        },
        include_zero_ev: r.flag("include_zero_ev")?,
        pi_scores: r.optional("pi_scores").map(|p| read_pi_scores(Path::new(p))).transpose()?,
    };
    let with_generation = r.flag("generation")?;
    let corrector_name = r.get("corrector").to_string();
    let ckpt = r.optional("ckpt").map(|p| Checkpoint::load(&checkpoint_path(p))).transpose()?;
    if !matches!(corrector_name.as_str(), "exreg" | "identity" | "ground-truth") {
        return Err(CliError::User(format!(
            "corrector must be exreg, identity or ground-truth, got {corrector_name:?}"
        )));
    }
    if (corrector_name == "exreg" || with_generation) && ckpt.is_none() {
        return Err(CliError::User("--ckpt is required for this evaluation".into()));
    }
    r.echo("evaluate", Some(&out))?;

    let scenes = DatasetManifest::load(&manifest)?.load_scenes()?;
    let model = match (&ckpt, corrector_name.as_str()) {
        (Some(c), "exreg") => Some(ExReg::from_checkpoint(c)?),
        _ => None,
    };
    let corrector = match (corrector_name.as_str(), &model) {
        ("identity", _) => Corrector::Identity,
        ("ground-truth", _) => Corrector::GroundTruth,
        (_, Some(m)) => Corrector::Model(m),
        _ => unreachable!("corrector validated above"),
    };
    let t = Instant::now();
    let report = evaluate(&scenes, corrector, &options)?;
    write(&out.join("report.csv"), report.to_csv())?;
    let summary = report.summary();
    write(&out.join("summary.txt"), summary.clone())?;
    print!("{summary}");
    if with_generation {
        let megnet = megnet_from_checkpoint(ckpt.as_ref().expect("checked above"))?;
        let g = evaluate_generation(&megnet, &scenes, &[0.0, 0.5, 1.0, 1.5])?;
        write(&out.join("generation.csv"), g.to_csv())?;
        print!("{}", g.to_csv());
    }
    info!("evaluated {} scenes in {:.1?}", scenes.len(), t.elapsed());
    Ok(())
}

fn write(path: &Path, text: String) -> Res {
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

fn gradcheck(a: app::Gradcheck, file: &File) -> Res {
    let r = Resolved::layer(
        "gradcheck",
        &[("seed", "1".into()), ("max_entries", "48".into())],
        file,
        &[("seed", a.seed), ("max_entries", a.max_entries)],
    )?;
    r.echo("gradcheck", None)?;
    let seed: u64 = r.parse("seed")?;
    let t = Instant::now();
    let mut reports = exreg::autodiff::gradcheck::op_suite(seed)?;
    reports.extend(network_gradchecks(seed, r.parse("max_entries")?)?);
    let mut failed = Vec::new();
    for rep in &reports {
        let status = if rep.passed() { "ok" } else { "FAIL" };
        println!("{status:4} {:24} max_rel_err {:.3e} over {} entries", rep.name, rep.max_rel_err, rep.checked);
        if !rep.passed() {
            failed.push(rep.name.clone());
        }
    }
    println!("{} checks in {:.1?}", reports.len(), t.elapsed());
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Internal(format!("gradient check failed for {}", failed.join(", "))))
    }
}

/// Synthetic in-memory scenes of side `size`.
fn toy_scenes(n: usize, size: usize, seed: u64) -> Res<Vec<Scene>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let latent = generate_latent(size, 0.5, &mut rng);
            let lit = latent.lit();
            let renditions = exreg::dataset::DEFAULT_EV_SET
                .iter()
                .map(|&e| Ok((e, render_ev(&lit, e)?)))
                .collect::<Res<Vec<_>>>()?;
            Ok(Scene {
                id: format!("toy_{i}"),
                ground_truth: latent.ground_truth(),
                renditions,
            })
        })
        .collect()
}

fn check(cond: bool, what: &str) -> Res {
    if cond {
        println!("ok   {what}");
        Ok(())
    } else {
        Err(CliError::Internal(format!("selftest failed: {what}")))
    }
}

fn selftest(a: app::Selftest, file: &File) -> Res {
    let r = Resolved::layer("selftest", &[("seed", "0".into())], file, &[("seed", a.seed)])?;
    r.echo("selftest", None)?;
    let seed: u64 = r.parse("seed")?;
    let t = Instant::now();

    let ops = exreg::autodiff::gradcheck::op_suite(seed)?;
    check(ops.iter().all(|o| o.passed()), "op gradient checks")?;

    let scenes = toy_scenes(4, 16, seed)?;
    let (fit, val) = scenes.split_at(3);
    let mut ckpt: Option<Checkpoint> = None;
    for stage in [Stage::Megnet, Stage::Regnet, Stage::Cotrain] {
        let mut cfg = TrainConfig::for_stage(stage);
        cfg.profile = Profile::Micro;
        cfg.epochs = 1;
        cfg.batch_size = 2;
        cfg.patch_size = 16;
        cfg.samples_per_scene = 1;
        cfg.val_every = 1;
        cfg.seed = seed;
        let outcome = train(&cfg, fit, val, ckpt.as_ref())?;
        check(
            outcome.log.iter().filter_map(|l| l.loss).all(Real::is_finite),
            &format!("{} stage trains with finite loss", stage.as_str()),
        )?;
        ckpt = Some(outcome.checkpoint);
    }
    let ckpt = ckpt.expect("three stages ran");
    let restored = Checkpoint::from_bytes(&ckpt.to_bytes())?;
    check(restored == ckpt, "checkpoint round trip")?;

    let model = ExReg::from_checkpoint(&restored)?;
    let input = &val[0].renditions[0].1;
    let (y, e) = model.correct(input)?;
    check(
        y.same_size(input) && y.pixels().iter().all(|v| (0.0..=1.0).contains(v)),
        "corrected image is a valid image",
    )?;
    check(
        e.data().iter().all(|v| v.abs() <= EXPOSURE_LIMIT),
        "exposure map within limits",
    )?;
    let report = evaluate(val, Corrector::Model(&model), &EvalOptions::default())?;
    check(report.scenes.len() == 1, "evaluation report")?;
    println!("selftest passed in {:.1?}", t.elapsed());
    Ok(())
}
