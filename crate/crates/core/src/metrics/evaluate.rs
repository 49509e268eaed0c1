use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rayon::prelude::*;

use super::quality::{perceptual_index, psnr, psnr_variance, ssim, SceneScores, Variance};
use crate::dataset::Scene;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::megnet::Megnet;
use crate::model::ExReg;
use crate::tensor::Real;

/// What produces the corrected image for each input.
#[derive(Clone, Copy)]
pub enum Corrector<'a> {
    /// Output equals input.
    Identity,
    /// Output equals the ground truth.
    GroundTruth,
    Model(&'a ExReg),
}

impl Corrector<'_> {
    pub fn apply(&self, input: &Image, gt: &Image) -> Result<Image> {
        match self {
            Corrector::Identity => Ok(input.clone()),
            Corrector::GroundTruth => Ok(gt.clone()),
            Corrector::Model(m) => Ok(m.correct(input)?.0),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Corrector::Identity => "identity",
            Corrector::GroundTruth => "ground-truth",
            Corrector::Model(_) => "exreg",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub enum EvGroup {
    /// Relative EV below 0.
    Under,
    /// Relative EV of 0 or above.
    Over,
}

impl EvGroup {
    pub fn of(ev: Real) -> Self {
        if ev < 0.0 {
            EvGroup::Under
        } else {
            EvGroup::Over
        }
    }
}

#[derive(Clone, Debug)]
pub struct EvalOptions {
    pub variance: Variance,
    /// Whether the 0-EV rendition enters the PSNR variance.
    pub include_zero_ev: bool,
    pub pi_scores: Option<Vec<PiScore>>,
}

impl Default for EvalOptions {
    fn default() -> Self {
        EvalOptions {
            variance: Variance::Population,
            include_zero_ev: true,
            pi_scores: None,
        }
    }
}

/// Externally computed no-reference scores for one image.
#[derive(Clone, Debug, PartialEq)]
pub struct PiScore {
    pub image: String,
    pub ma: Real,
    pub niqe: Real,
}

/// Reads a CSV with header `image,ma,niqe`.
pub fn read_pi_scores(path: &Path) -> Result<Vec<PiScore>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    match lines.next().map(str::trim) {
        Some("image,ma,niqe") => {}
        other => {
            return Err(Error::Format(format!(
                "{}: expected header image,ma,niqe, found {other:?}",
                path.display()
            )))
        }
    }
    lines
        .enumerate()
        .map(|(n, l)| {
            let f: Vec<&str> = l.split(',').map(str::trim).collect();
            let num = |s: &str| {
                s.parse::<Real>()
                    .map_err(|_| Error::Format(format!("{} row {}: bad number {s:?}", path.display(), n + 2)))
            };
            match f[..] {
                [image, ma, niqe] => Ok(PiScore {
                    image: image.to_string(),
                    ma: num(ma)?,
                    niqe: num(niqe)?,
                }),
                _ => Err(Error::Format(format!("{} row {}: expected 3 fields", path.display(), n + 2))),
            }
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct GroupSummary {
    pub group: EvGroup,
    pub count: usize,
    pub mean_psnr: Real,
    pub mean_ssim: Real,
}

#[derive(Clone, Debug)]
pub struct EvalReport {
    pub corrector: String,
    pub options: EvalOptions,
    /// Sorted by scene id.
    pub scenes: Vec<SceneScores>,
    pub groups: Vec<GroupSummary>,
    /// Mean over scenes whose variance is defined.
    pub mean_psnr_var: Option<Real>,
    pub mean_pi: Option<Real>,
}

fn fmt_db(v: Real) -> String {
    if v.is_infinite() {
        "inf".to_string()
    } else {
        format!("{v:.6}")
    }
}

impl EvalReport {
    pub fn group(&self, g: EvGroup) -> Option<&GroupSummary> {
        self.groups.iter().find(|s| s.group == g)
    }

    /// `scene_id,ev,psnr_db,ssim`, one row per scene and EV.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("scene_id,ev,psnr_db,ssim\n");
        for s in &self.scenes {
            for (k, p) in &s.psnr {
                let ev = SceneScores::key_ev(*k);
                let _ = writeln!(out, "{},{ev},{},{:.6}", s.scene_id, fmt_db(*p), s.ssim[k]);
            }
        }
        out
    }

    pub fn summary(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "corrector: {}", self.corrector);
        let _ = writeln!(out, "scenes: {}", self.scenes.len());
        let _ = writeln!(out, "PSNR/SSIM computed on sRGB-encoded values in [0, 1]");
        let var = match self.options.variance {
            Variance::Population => "population (divide by n)",
            Variance::Sample => "sample (divide by n - 1)",
        };
        let zero = if self.options.include_zero_ev { "included" } else { "excluded" };
        let _ = writeln!(out, "PSNR-Var: {var} variance, 0-EV rendition {zero}");
        let _ = writeln!(out, "{:<8} {:>6} {:>10} {:>8}", "group", "n", "PSNR(dB)", "SSIM");
        for g in &self.groups {
            let name = match g.group {
                EvGroup::Under => "under",
                EvGroup::Over => "over",
            };
            let _ = writeln!(out, "{name:<8} {:>6} {:>10} {:>8.4}", g.count, fmt_db(g.mean_psnr), g.mean_ssim);
        }
        match self.mean_psnr_var {
            Some(v) => {
                let _ = writeln!(out, "PSNR-Var: {v:.4}");
            }
            None => {
                let _ = writeln!(out, "PSNR-Var: undefined");
            }
        }
        if let Some(pi) = self.mean_pi {
            let _ = writeln!(out, "PI: {pi:.4}");
        }
        out
    }
}

fn scene_variance(psnrs: &[Real], kind: Variance) -> Option<Real> {
    if psnrs.len() >= 2 && psnrs.iter().all(|p| p.is_infinite() && *p > 0.0) {
        return Some(0.0);
    }
    psnr_variance(psnrs, kind).ok().map(|(_, v)| v)
}

/// Scores `corrector` on every rendition of every scene.
pub fn evaluate(scenes: &[Scene], corrector: Corrector<'_>, options: &EvalOptions) -> Result<EvalReport> {
    let mut scores = scenes
        .par_iter()
        .map(|scene| -> Result<SceneScores> {
            let mut s = SceneScores {
                scene_id: scene.id.clone(),
                psnr: BTreeMap::new(),
                ssim: BTreeMap::new(),
                psnr_var: None,
            };
            for (ev, input) in &scene.renditions {
                let out = corrector.apply(input, &scene.ground_truth)?;
                let k = SceneScores::ev_key(*ev);
                s.psnr.insert(k, psnr(&out, &scene.ground_truth)?);
                s.ssim.insert(k, ssim(&out, &scene.ground_truth)?);
            }
            let used: Vec<Real> = s
                .psnr
                .iter()
                .filter(|(k, _)| options.include_zero_ev || **k != 0)
                .map(|(_, p)| *p)
                .collect();
            s.psnr_var = scene_variance(&used, options.variance);
            Ok(s)
        })
        .collect::<Result<Vec<_>>>()?;
    scores.sort_by(|a, b| a.scene_id.cmp(&b.scene_id));

    let mut groups = Vec::new();
    for g in [EvGroup::Under, EvGroup::Over] {
        let (mut p, mut q, mut n) = (0.0, 0.0, 0usize);
        for s in &scores {
            for (k, v) in &s.psnr {
                if EvGroup::of(SceneScores::key_ev(*k)) == g {
                    p += v;
                    q += s.ssim[k];
                    n += 1;
                }
            }
        }
        if n > 0 {
            groups.push(GroupSummary {
                group: g,
                count: n,
                mean_psnr: p / n as Real,
                mean_ssim: q / n as Real,
            });
        }
    }
    let vars: Vec<Real> = scores.iter().filter_map(|s| s.psnr_var).collect();
    let mean_psnr_var = (!vars.is_empty()).then(|| vars.iter().sum::<Real>() / vars.len() as Real);
    let mean_pi = match &options.pi_scores {
        Some(rows) if !rows.is_empty() => {
            let pis = rows
                .iter()
                .map(|r| perceptual_index(r.ma, r.niqe))
                .collect::<Result<Vec<_>>>()?;
            Some(pis.iter().sum::<Real>() / pis.len() as Real)
        }
        _ => None,
    };
    Ok(EvalReport {
        corrector: corrector.name().to_string(),
        options: options.clone(),
        scenes: scores,
        groups,
        mean_psnr_var,
        mean_pi,
    })
}

/// Generation quality for one exposure-shift magnitude.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerationRow {
    pub abs_delta: Real,
    pub pairs: usize,
    pub mean_psnr: Real,
    pub mean_ssim: Real,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenerationReport {
    pub rows: Vec<GenerationRow>,
}

impl GenerationReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("abs_delta_ev,pairs,psnr_db,ssim\n");
        for r in &self.rows {
            let _ = writeln!(out, "{},{},{},{:.6}", r.abs_delta, r.pairs, fmt_db(r.mean_psnr), r.mean_ssim);
        }
        out
    }
}

/// For each `|delta|`, regenerates every rendition pair that far apart and
/// scores the result against the real rendition.
pub fn evaluate_generation(megnet: &Megnet, scenes: &[Scene], abs_deltas: &[Real]) -> Result<GenerationReport> {
    let rows = abs_deltas
        .iter()
        .map(|&d| -> Result<GenerationRow> {
            let jobs: Vec<(&Image, &Image, Real)> = scenes
                .iter()
                .flat_map(|s| {
                    s.renditions.iter().flat_map(move |(e, src)| {
                        s.renditions
                            .iter()
                            .filter(move |(t, _)| ((t - e).abs() - d).abs() < 1e-9)
                            .map(move |(t, tgt)| (src, tgt, t - e))
                    })
                })
                .collect();
            let scores = jobs
                .par_iter()
                .map(|&(src, tgt, delta)| {
                    let out = megnet.generate(src, delta)?;
                    Ok((psnr(&out, tgt)?, ssim(&out, tgt)?))
                })
                .collect::<Result<Vec<_>>>()?;
            if scores.is_empty() {
                return Err(Error::InvalidArgument(format!("no rendition pairs differ by {d} EV")));
            }
            let n = scores.len() as Real;
            Ok(GenerationRow {
                abs_delta: d,
                pairs: scores.len(),
                mean_psnr: scores.iter().map(|s| s.0).sum::<Real>() / n,
                mean_ssim: scores.iter().map(|s| s.1).sum::<Real>() / n,
            })
        })
        .collect::<Result<_>>()?;
    Ok(GenerationReport { rows })
}
