//! Procedural scenes and the exposure rendering model.
//!
//! A latent scene is a linear reflectance image plus a smooth log2
//! illumination field. The correctly exposed target is the reflectance
//! rendered at 0 EV; inputs are the illuminated scene rendered at each
//! relative EV. Rendering is `clip(v * 2^ev, 0, 1)` followed by gamma
//! encoding, so inputs lose highlights to saturation and the correction
//! needed varies across the frame.

use std::fs;
use std::path::{Path, PathBuf};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::manifest::{split_bucket, DatasetManifest, SceneRecord, Split};
use crate::error::{Error, Result};
use crate::image::{encode, BitDepth, ColorSpace, Image};
use crate::rng::derive_indexed;
use crate::tensor::Real;

/// Relative EVs rendered per scene by default.
pub const DEFAULT_EV_SET: [Real; 5] = [-1.5, -1.0, 0.0, 1.0, 1.5];

/// Mean linear luminance of a correctly exposed reflectance image.
const TARGET_LUMINANCE: Real = 0.2;

/// Renders a linear image at `delta_ev` stops: gain, clip, gamma-encode.
pub fn render_ev(base: &Image, delta_ev: Real) -> Result<Image> {
    if base.space() != ColorSpace::Linear {
        return Err(Error::InvalidArgument("render_ev expects a linear image".into()));
    }
    let gain = (2.0 as Real).powf(delta_ev);
    Ok(base.map(ColorSpace::Srgb, |v| encode((v * gain).clamp(0.0, 1.0))))
}

/// Linear reflectance plus a per-pixel log2 illumination gain.
#[derive(Clone, Debug)]
pub struct LatentScene {
    pub reflectance: Image,
    pub illumination: Vec<Real>,
}

impl LatentScene {
    /// Reflectance under the illumination field, still linear.
    pub fn lit(&self) -> Image {
        let w = self.reflectance.width();
        let illum = &self.illumination;
        Image::from_fn(self.reflectance.height(), w, ColorSpace::Linear, |y, x, c| {
            self.reflectance.get(y, x, c) * (2.0 as Real).powf(illum[y * w + x])
        })
    }

    pub fn ground_truth(&self) -> Image {
        render_ev(&self.reflectance, 0.0).expect("reflectance is linear")
    }

    pub fn rendition(&self, ev: Real) -> Image {
        render_ev(&self.lit(), ev).expect("lit scene is linear")
    }
}

fn luminance(r: Real, g: Real, b: Real) -> Real {
    0.2126 * r + 0.7152 * g + 0.0722 * b
}

enum Shape {
    Disc { r: Real },
    Box { hx: Real, hy: Real },
    Ellipse { a: Real, b: Real },
}

struct Blob {
    shape: Shape,
    cx: Real,
    cy: Real,
    color: [Real; 3],
    stripes: Option<(Real, Real, Real)>,
}

impl Blob {
    fn random(rng: &mut ChaCha8Rng) -> Blob {
        let shape = match rng.gen_range(0..3) {
            0 => Shape::Disc {
                r: rng.gen_range(0.08..0.3),
            },
            1 => Shape::Box {
                hx: rng.gen_range(0.06..0.3),
                hy: rng.gen_range(0.06..0.3),
            },
            _ => Shape::Ellipse {
                a: rng.gen_range(0.08..0.3),
                b: rng.gen_range(0.08..0.3),
            },
        };
        Blob {
            shape,
            cx: rng.gen_range(0.0..1.0),
            cy: rng.gen_range(0.0..1.0),
            color: [
                rng.gen_range(0.03..0.9),
                rng.gen_range(0.03..0.9),
                rng.gen_range(0.03..0.9),
            ],
            stripes: rng.gen_bool(0.4).then(|| {
                (
                    rng.gen_range(3.0..8.0),
                    rng.gen_range(0.0..std::f64::consts::PI as Real),
                    rng.gen_range(0.1..0.3),
                )
            }),
        }
    }

    /// Signed distance to the boundary in pixels (negative inside).
    fn distance_px(&self, u: Real, v: Real, size: Real) -> Real {
        let (du, dv) = (u - self.cx, v - self.cy);
        match self.shape {
            Shape::Disc { r } => ((du * du + dv * dv).sqrt() - r) * size,
            Shape::Box { hx, hy } => (du.abs() - hx).max(dv.abs() - hy) * size,
            Shape::Ellipse { a, b } => {
                (((du / a).powi(2) + (dv / b).powi(2)).sqrt() - 1.0) * a.min(b) * size
            }
        }
    }

    fn color_at(&self, u: Real, v: Real, c: usize) -> Real {
        match self.stripes {
            Some((freq, angle, depth)) => {
                let phase = (u * angle.cos() + v * angle.sin()) * freq * 2.0 * std::f64::consts::PI as Real;
                self.color[c] * (1.0 + depth * phase.sin())
            }
            None => self.color[c],
        }
    }
}

/// Procedurally generates one latent scene of `size x size` pixels.
pub fn generate_latent(size: usize, illumination_stops: Real, rng: &mut ChaCha8Rng) -> LatentScene {
    let s = size as Real;
    let norm = |i: usize| if size > 1 { i as Real / (size - 1) as Real } else { 0.5 };
    let base: [Real; 3] = [
        rng.gen_range(0.15..0.6),
        rng.gen_range(0.15..0.6),
        rng.gen_range(0.15..0.6),
    ];
    let grad: [(Real, Real); 3] = std::array::from_fn(|_| (rng.gen_range(-0.2..0.2), rng.gen_range(-0.2..0.2)));
    let blobs: Vec<Blob> = (0..rng.gen_range(3..=7)).map(|_| Blob::random(rng)).collect();

    let mut raw = vec![0.0; size * size * 3];
    for y in 0..size {
        for x in 0..size {
            let (u, v) = (norm(x), norm(y));
            let mut px: [Real; 3] =
                std::array::from_fn(|c| (base[c] + grad[c].0 * (u - 0.5) + grad[c].1 * (v - 0.5)).max(0.02));
            for blob in &blobs {
                let alpha = (0.5 - blob.distance_px(u, v, s) / 2.0).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    for c in 0..3 {
                        px[c] = px[c] * (1.0 - alpha) + blob.color_at(u, v, c) * alpha;
                    }
                }
            }
            raw[(y * size + x) * 3..(y * size + x) * 3 + 3].copy_from_slice(&px);
        }
    }
    let mean_lum = raw
        .chunks_exact(3)
        .map(|p| luminance(p[0], p[1], p[2]))
        .sum::<Real>()
        / (size * size) as Real;
    let k = TARGET_LUMINANCE / mean_lum.max(1e-6);
    let reflectance = Image::from_fn(size, size, ColorSpace::Linear, |y, x, c| {
        (raw[(y * size + x) * 3 + c] * k).clamp(0.005, 1.0)
    });

    // Illumination: a tilted ramp plus one soft light or shadow blob,
    // normalised to zero mean and unit peak before scaling to stops.
    let theta: Real = rng.gen_range(0.0..2.0 * std::f64::consts::PI as Real);
    let ramp_w: Real = rng.gen_range(0.3..1.0);
    let (bx, by): (Real, Real) = (rng.gen_range(0.1..0.9), rng.gen_range(0.1..0.9));
    let sigma: Real = rng.gen_range(0.15..0.35);
    let blob_w: Real = if rng.gen_bool(0.5) { 1.0 } else { -1.0 } * rng.gen_range(0.5..1.0);
    let mut field: Vec<Real> = (0..size * size)
        .map(|i| {
            let (u, v) = (norm(i % size) - 0.5, norm(i / size) - 0.5);
            let ramp = u * theta.cos() + v * theta.sin();
            let d2 = (u + 0.5 - bx).powi(2) + (v + 0.5 - by).powi(2);
            ramp_w * ramp + blob_w * (-d2 / (2.0 * sigma * sigma)).exp()
        })
        .collect();
    let mean = field.iter().sum::<Real>() / field.len() as Real;
    field.iter_mut().for_each(|f| *f -= mean);
    let peak = field.iter().fold(0.0 as Real, |m, f| m.max(f.abs()));
    let scale = if peak > 0.0 { illumination_stops / peak } else { 0.0 };
    field.iter_mut().for_each(|f| *f *= scale);

    LatentScene {
        reflectance,
        illumination: field,
    }
}

#[derive(Clone, Debug)]
pub struct SynthConfig {
    pub n_scenes: usize,
    pub image_size: usize,
    pub ev_set: Vec<Real>,
    pub seed: u64,
    /// Peak magnitude of the log2 illumination field.
    pub illumination_stops: Real,
    pub bit_depth: BitDepth,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            n_scenes: 200,
            image_size: 64,
            ev_set: DEFAULT_EV_SET.to_vec(),
            seed: 0,
            illumination_stops: 0.5,
            bit_depth: BitDepth::Eight,
        }
    }
}

/// Train and test manifests of one synthesized dataset.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub train: DatasetManifest,
    pub test: DatasetManifest,
}

fn ev_tag(ev: Real) -> String {
    format!("{ev:+.2}")
}

/// Generates `cfg.n_scenes` scenes under `out`, writing PNGs to
/// `out/images/` and manifests to `out/train.tsv` and `out/test.tsv`.
/// Scenes whose id hashes to bucket 0 of 10 form the test split.
pub fn synthesize_dataset(cfg: &SynthConfig, out: &Path) -> Result<Dataset> {
    if cfg.n_scenes == 0 {
        return Err(Error::InvalidArgument("n_scenes must be at least 1".into()));
    }
    if cfg.image_size < 8 {
        return Err(Error::InvalidArgument(format!(
            "image_size {} is below the minimum of 8",
            cfg.image_size
        )));
    }
    let mut evs = cfg.ev_set.clone();
    evs.sort_by(|a, b| a.total_cmp(b));
    if evs.windows(2).any(|w| w[0] == w[1]) || evs.is_empty() {
        return Err(Error::InvalidArgument(format!("ev_set {:?} must be non-empty and unique", cfg.ev_set)));
    }
    let images = out.join("images");
    fs::create_dir_all(&images).map_err(|e| Error::io(&images, e))?;

    let records: Vec<SceneRecord> = (0..cfg.n_scenes)
        .into_par_iter()
        .map(|i| -> Result<SceneRecord> {
            let id = format!("scene_{i:04}");
            let mut rng = ChaCha8Rng::seed_from_u64(derive_indexed(cfg.seed, "scene", i as u64));
            let latent = generate_latent(cfg.image_size, cfg.illumination_stops, &mut rng);
            let gt_rel = PathBuf::from("images").join(format!("{id}_gt.png"));
            latent.ground_truth().save_png(&out.join(&gt_rel), cfg.bit_depth)?;
            let lit = latent.lit();
            let mut renditions = Vec::with_capacity(evs.len());
            for &ev in &evs {
                let rel = PathBuf::from("images").join(format!("{id}_ev{}.png", ev_tag(ev)));
                render_ev(&lit, ev)?.save_png(&out.join(&rel), cfg.bit_depth)?;
                renditions.push((ev, rel));
            }
            Ok(SceneRecord {
                scene_id: id,
                ground_truth: gt_rel,
                renditions,
            })
        })
        .collect::<Result<_>>()?;

    let (test, train): (Vec<_>, Vec<_>) = records
        .into_iter()
        .partition(|r| split_bucket(&r.scene_id) == 0);
    let train = DatasetManifest::new(out.to_path_buf(), Split::Train, train)?;
    let test = DatasetManifest::new(out.to_path_buf(), Split::Test, test)?;
    train.save(&out.join("train.tsv"))?;
    test.save(&out.join("test.tsv"))?;
    Ok(Dataset { train, test })
}
