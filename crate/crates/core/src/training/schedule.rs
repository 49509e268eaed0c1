//! The staged training loop: generator alone, regressor with a frozen
//! generator, then both jointly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use crate::autodiff::{Tape, Var};
use crate::dataset::{DatasetManifest, PairKind, PatchPair, PatchSampler, Scene};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::megnet::Megnet;
use crate::metrics::psnr;
use crate::model::ExReg;
use crate::params::Params;
use crate::regnet::Regnet;
use crate::rng::derive_seed;
use crate::tensor::{Real, Tensor};

use super::adam::{clip_global_norm, Adam};
use super::checkpoint::{Checkpoint, OptimizerState};
use super::config::{Stage, TrainConfig};
use super::losses::{charbonnier_loss, l1_loss};

/// PSNR values are capped here before averaging so an exact match does not
/// turn the mean infinite.
const PSNR_CAP: Real = 100.0;

#[derive(Clone, Debug, PartialEq)]
pub struct LogRow {
    pub step: u64,
    pub stage: Stage,
    /// Mean training loss since the previous row.
    pub loss: Option<Real>,
    pub val_psnr: Option<Real>,
}

/// CSV with header `step,stage,loss,val_psnr`; missing values are empty.
pub fn log_csv(rows: &[LogRow]) -> String {
    let mut out = String::from("step,stage,loss,val_psnr\n");
    let opt = |v: Option<Real>| v.map(|x| format!("{x:.6}")).unwrap_or_default();
    for r in rows {
        let _ = writeln!(out, "{},{},{},{}", r.step, r.stage, opt(r.loss), opt(r.val_psnr));
    }
    out
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: Checkpoint,
    pub log: Vec<LogRow>,
    /// Validation PSNR before the first step, if there is a validation set.
    pub initial_val_psnr: Option<Real>,
    /// Best validation PSNR reached; its parameters are the checkpoint's.
    pub best_val_psnr: Option<Real>,
}

type StackKey = (usize, i64);
type TensorStack = Vec<(Real, Tensor)>;

fn ev_key(ev: Real) -> i64 {
    (ev * 1000.0).round() as i64
}

fn capped_psnr(a: &Image, b: &Image) -> Result<Real> {
    Ok(psnr(a, b)?.min(PSNR_CAP))
}

fn mean(values: &[Real]) -> Option<Real> {
    (!values.is_empty()).then(|| values.iter().sum::<Real>() / values.len() as Real)
}

fn image_stack(megnet: &Megnet, input: &Image, ev_set: &[Real]) -> Result<TensorStack> {
    Ok(megnet
        .generate_stack(input, ev_set)?
        .entries
        .into_iter()
        .map(|(ev, img)| (ev, img.to_tensor()))
        .collect())
}

/// Frozen-generator stacks for every rendition of every scene.
fn build_stacks(megnet: &Megnet, scenes: &[Scene], ev_set: &[Real]) -> Result<HashMap<StackKey, TensorStack>> {
    let jobs: Vec<(usize, Real, &Image)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.renditions.iter().map(move |(ev, img)| (i, *ev, img)))
        .collect();
    let stacks = jobs
        .par_iter()
        .map(|&(i, ev, img)| Ok(((i, ev_key(ev)), image_stack(megnet, img, ev_set)?)))
        .collect::<Result<Vec<_>>>()?;
    Ok(stacks.into_iter().collect())
}

/// Mean generation PSNR over every rendition pair whose shift is in `deltas`.
pub fn megnet_val_psnr(megnet: &Megnet, scenes: &[Scene], deltas: &[Real]) -> Result<Option<Real>> {
    let jobs: Vec<(&Image, &Image, Real)> = scenes
        .iter()
        .flat_map(|s| {
            s.renditions.iter().flat_map(move |(e, img)| {
                deltas
                    .iter()
                    .filter_map(move |d| s.rendition(e + d).map(|t| (img, t, *d)))
            })
        })
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(x, t, d)| capped_psnr(&megnet.generate(x, d)?, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&scores))
}

fn regnet_val_psnr(regnet: &Regnet, scenes: &[Scene], stacks: &HashMap<StackKey, TensorStack>) -> Result<Option<Real>> {
    let jobs: Vec<(usize, Real)> = scenes
        .iter()
        .enumerate()
        .flat_map(|(i, s)| s.renditions.iter().map(move |(ev, _)| (i, *ev)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(i, ev)| {
            let stack = &stacks[&(i, ev_key(ev))];
            let entries = stack
                .iter()
                .map(|(e, t)| Ok((*e, Image::from_tensor(t, crate::image::ColorSpace::Srgb)?)))
                .collect::<Result<_>>()?;
            let (y, _) = regnet.correct(&crate::megnet::ExposureStack { entries })?;
            capped_psnr(&y, &scenes[i].ground_truth)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&scores))
}

/// Mean corrected-vs-ground-truth PSNR over every rendition.
pub fn exreg_val_psnr(model: &ExReg, scenes: &[Scene]) -> Result<Option<Real>> {
    let jobs: Vec<(&Image, &Image)> = scenes
        .iter()
        .flat_map(|s| s.renditions.iter().map(move |(_, img)| (img, &s.ground_truth)))
        .collect();
    let scores = jobs
        .par_iter()
        .map(|&(x, gt)| capped_psnr(&model.correct(x)?.0, gt))
        .collect::<Result<Vec<_>>>()?;
    Ok(mean(&scores))
}

/// One sample's loss and gradients for the generator and the regressor.
type SampleGrads = (Real, Vec<Tensor>, Vec<Tensor>);

/// Runs `f` over `items` (in parallel when a pool is available) and
/// reduces in item order, so results do not depend on the thread count.
fn reduce_batch<T: Sync>(items: &[T], f: impl Fn(&T) -> Result<SampleGrads> + Sync + Send) -> Result<SampleGrads> {
    let parts = items.par_iter().map(f).collect::<Result<Vec<_>>>()?;
    let n = parts.len() as Real;
    let mut it = parts.into_iter();
    let (mut loss, mut gm, mut gr) = it.next().ok_or_else(|| Error::InvalidArgument("empty batch".into()))?;
    for (l, m, r) in it {
        loss += l;
        for (a, b) in gm.iter_mut().zip(&m) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
        for (a, b) in gr.iter_mut().zip(&r) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }
    for t in gm.iter_mut().chain(gr.iter_mut()) {
        t.data_mut().iter_mut().for_each(|x| *x /= n);
    }
    Ok((loss / n, gm, gr))
}

fn stack_vars<'t>(tape: &'t Tape, stack: &TensorStack) -> Vec<(Real, Var<'t>)> {
    stack.iter().map(|(e, t)| (*e, tape.constant(t.clone()))).collect()
}

struct Item {
    scene: usize,
    pair: PatchPair,
}

fn draw_epoch(sampler: &mut PatchSampler<'_>, kind: PairKind, per_scene: usize) -> Result<Vec<Item>> {
    let order = sampler.epoch_order();
    let mut items = Vec::with_capacity(order.len() * per_scene);
    for i in order {
        for _ in 0..per_scene {
            items.push(Item {
                scene: i,
                pair: sampler.pair(i, kind)?,
            });
        }
    }
    Ok(items)
}

fn snapshot_best(best: &mut Option<(Real, Params, Option<Params>)>, val: Option<Real>, m: &Params, r: Option<&Params>) {
    if let Some(v) = val {
        if best.as_ref().map_or(true, |b| v > b.0) {
            *best = Some((v, m.clone(), r.cloned()));
        }
    }
}

/// Trains one stage. `init` must hold a trained generator for the
/// regressor stage and a trained regressor for joint training.
pub fn train(config: &TrainConfig, train_scenes: &[Scene], val_scenes: &[Scene], init: Option<&Checkpoint>) -> Result<TrainOutcome> {
    config.validate()?;
    let stage = config.stage;
    let profile = config.profile;
    let mut model = ExReg::new(profile, &config.ev_set, config.seed)?;
    let mut step = 0u64;
    let mut stages = Vec::new();
    match (stage, init) {
        (Stage::Megnet, None) => {}
        (_, Some(ckpt)) => {
            if ckpt.config.profile != profile {
                return Err(Error::InvalidArgument(format!(
                    "checkpoint profile {} differs from requested {}",
                    ckpt.config.profile.as_str(),
                    profile.as_str()
                )));
            }
            model.megnet.params.load_from(&ckpt.megnet)?;
            if let Some(r) = &ckpt.regnet {
                model.regnet.params.load_from(r)?;
            }
            step = ckpt.step;
            stages = ckpt.stages.clone();
        }
        (_, None) => {}
    }
    let need = match stage {
        Stage::Megnet => None,
        Stage::Regnet => Some(Stage::Megnet),
        Stage::Cotrain => Some(Stage::Regnet),
    };
    if let Some(need) = need {
        let ok = init.is_some_and(|c| c.has_stage(need) || (need == Stage::Regnet && c.has_stage(Stage::Cotrain)));
        if !ok {
            return Err(Error::Missing(format!(
                "the {stage} stage needs a checkpoint that completed the {need} stage"
            )));
        }
    }

    let kind = if stage == Stage::Megnet { PairKind::Megnet } else { PairKind::Regnet };
    let patch = config.patch_size;
    let mut sampler = PatchSampler::new(train_scenes, patch, &config.megnet_deltas, derive_seed(config.seed, stage.as_str()))?;
    let full_size = train_scenes.iter().all(|s| s.ground_truth.height() == patch && s.ground_truth.width() == patch);

    let frozen_train = if stage == Stage::Regnet && full_size {
        build_stacks(&model.megnet, train_scenes, &config.ev_set)?
    } else {
        HashMap::new()
    };
    let frozen_val = if stage == Stage::Regnet {
        build_stacks(&model.megnet, val_scenes, &config.ev_set)?
    } else {
        HashMap::new()
    };
    let validate = |model: &ExReg| -> Result<Option<Real>> {
        match stage {
            Stage::Megnet => megnet_val_psnr(&model.megnet, val_scenes, &config.megnet_deltas),
            Stage::Regnet => regnet_val_psnr(&model.regnet, val_scenes, &frozen_val),
            Stage::Cotrain => exreg_val_psnr(model, val_scenes),
        }
    };

    let mut log = Vec::new();
    let initial_val_psnr = validate(&model)?;
    if initial_val_psnr.is_some() {
        log.push(LogRow { step, stage, loss: None, val_psnr: initial_val_psnr });
    }
    let mut adam_m = Adam::new(config.adam(), &model.megnet.params);
    let mut adam_r = Adam::new(config.adam(), &model.regnet.params);
    let mut best: Option<(Real, Params, Option<Params>)> = None;

    for epoch in 0..config.epochs {
        let items = draw_epoch(&mut sampler, kind, config.samples_per_scene)?;
        let mut losses = Vec::new();
        for batch in items.chunks(config.batch_size) {
            let (loss, mut gm, mut gr) = match stage {
                Stage::Megnet => reduce_batch(batch, |it| {
                    let tape = Tape::new();
                    let b = model.megnet.params.bind(&tape, true);
                    let y = model.megnet.forward(&b, tape.constant(it.pair.input.to_tensor()), it.pair.delta_ev)?;
                    let loss = l1_loss(y, tape.constant(it.pair.target.to_tensor()))?;
                    tape.backward(loss)?;
                    Ok((loss.value().item(), b.grads(), Vec::new()))
                })?,
                Stage::Regnet => reduce_batch(batch, |it| {
                    let computed;
                    let stack = match frozen_train.get(&(it.scene, ev_key(it.pair.input_ev))) {
                        Some(s) => s,
                        None => {
                            computed = image_stack(&model.megnet, &it.pair.input, &config.ev_set)?;
                            &computed
                        }
                    };
                    let tape = Tape::new();
                    let b = model.regnet.params.bind(&tape, true);
                    let (y, _) = model.regnet.forward(&b, &stack_vars(&tape, stack))?;
                    let loss = charbonnier_loss(y, tape.constant(it.pair.target.to_tensor()), config.charbonnier_epsilon)?;
                    tape.backward(loss)?;
                    Ok((loss.value().item(), Vec::new(), b.grads()))
                })?,
                Stage::Cotrain => reduce_batch(batch, |it| {
                    let tape = Tape::new();
                    let bm = model.megnet.params.bind(&tape, true);
                    let br = model.regnet.params.bind(&tape, true);
                    let x = tape.constant(it.pair.input.to_tensor());
                    let stack = model.megnet.forward_stack(&bm, x, &config.ev_set)?;
                    let (y, _) = model.regnet.forward(&br, &stack)?;
                    let loss = charbonnier_loss(y, tape.constant(it.pair.target.to_tensor()), config.charbonnier_epsilon)?;
                    tape.backward(loss)?;
                    Ok((loss.value().item(), bm.grads(), br.grads()))
                })?,
            };
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("{stage} loss at step {}", step + 1)));
            }
            clip_global_norm(&mut [&mut gm, &mut gr], config.clip_norm);
            if !gm.is_empty() {
                adam_m.step(&mut model.megnet.params, &gm)?;
            }
            if !gr.is_empty() {
                adam_r.step(&mut model.regnet.params, &gr)?;
            }
            step += 1;
            losses.push(loss);
        }
        let last = epoch + 1 == config.epochs;
        let val = if (epoch + 1) % config.val_every == 0 || last {
            validate(&model)?
        } else {
            None
        };
        let trains_regnet = stage != Stage::Megnet;
        snapshot_best(&mut best, val, &model.megnet.params, trains_regnet.then_some(&model.regnet.params));
        let loss = mean(&losses);
        log::info!(
            "{stage} epoch {}/{} step {step} loss {:.6}{}",
            epoch + 1,
            config.epochs,
            loss.unwrap_or(Real::NAN),
            val.map(|v| format!(" val_psnr {v:.3}")).unwrap_or_default()
        );
        log.push(LogRow { step, stage, loss, val_psnr: val });
    }

    let best_val_psnr = best.as_ref().map(|b| b.0);
    if let Some((_, m, r)) = best {
        model.megnet.params = m;
        if let Some(r) = r {
            model.regnet.params = r;
        }
    }
    let optimizer = match stage {
        Stage::Megnet => OptimizerState::from_adam(&adam_m, &model.megnet.params),
        Stage::Regnet => OptimizerState::from_adam(&adam_r, &model.regnet.params),
        Stage::Cotrain => OptimizerState::merge(&[
            OptimizerState::from_adam(&adam_m, &model.megnet.params),
            OptimizerState::from_adam(&adam_r, &model.regnet.params),
        ]),
    };
    stages.push(stage);
    let has_regnet = stages.iter().any(|s| *s != Stage::Megnet);
    Ok(TrainOutcome {
        checkpoint: Checkpoint {
            config: config.clone(),
            step,
            stages,
            megnet: model.megnet.params,
            regnet: has_regnet.then_some(model.regnet.params),
            optimizer: Some(optimizer),
        },
        log,
        initial_val_psnr,
        best_val_psnr,
    })
}

/// Loads the manifest's scenes, holds out `config.val_bucket` for
/// validation, trains, and writes the CSV log to `log_path` if given.
pub fn train_manifest(
    config: &TrainConfig,
    manifest: &DatasetManifest,
    init: Option<&Checkpoint>,
    log_path: Option<&Path>,
) -> Result<TrainOutcome> {
    let (rest, held) = manifest.partition_bucket(config.val_bucket);
    let (train_m, val_m) = if rest.is_empty() { (manifest.clone(), rest) } else { (rest, held) };
    let train_scenes = train_m.load_scenes()?;
    let val_scenes = val_m.load_scenes()?;
    let outcome = train(config, &train_scenes, &val_scenes, init)?;
    if let Some(p) = log_path {
        fs::write(p, log_csv(&outcome.log)).map_err(|e| Error::io(p, e))?;
    }
    Ok(outcome)
}
