//! Co-located patch pairs for generator and regressor training.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::manifest::Scene;
use crate::error::{Error, Result};
use crate::image::Image;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PairKind {
    /// Input rendition at `e`, target rendition at `e + delta_ev`.
    Megnet,
    /// Input rendition at any EV, target is the ground truth.
    Regnet,
}

#[derive(Clone, Debug)]
pub struct PatchPair {
    pub scene_id: String,
    pub input: Image,
    pub target: Image,
    pub input_ev: Real,
    /// Target EV minus input EV (generator pairs); zero for regressor pairs.
    pub delta_ev: Real,
}

pub struct PatchSampler<'a> {
    scenes: &'a [Scene],
    patch_size: usize,
    deltas: Vec<Real>,
    rng: ChaCha8Rng,
}

impl<'a> PatchSampler<'a> {
    pub fn new(scenes: &'a [Scene], patch_size: usize, deltas: &[Real], seed: u64) -> Result<Self> {
        let first = scenes
            .first()
            .ok_or_else(|| Error::InvalidArgument("cannot sample from an empty dataset".into()))?;
        let min_side = scenes
            .iter()
            .map(|s| s.ground_truth.height().min(s.ground_truth.width()))
            .min()
            .unwrap_or(0);
        if patch_size == 0 || patch_size > min_side {
            return Err(Error::InvalidArgument(format!(
                "patch size {patch_size} exceeds smallest image side {min_side} (scene {})",
                first.id
            )));
        }
        if deltas.is_empty() {
            return Err(Error::InvalidArgument("empty delta-EV set".into()));
        }
        Ok(PatchSampler {
            scenes,
            patch_size,
            deltas: deltas.to_vec(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    /// Scene indices in a fresh random order, one epoch's worth.
    pub fn epoch_order(&mut self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.scenes.len()).collect();
        order.shuffle(&mut self.rng);
        order
    }

    /// Draws one pair from scene `index`.
    pub fn pair(&mut self, index: usize, kind: PairKind) -> Result<PatchPair> {
        let scene = &self.scenes[index];
        let (input_idx, target, delta) = match kind {
            PairKind::Regnet => {
                let i = self.rng.gen_range(0..scene.renditions.len());
                (i, &scene.ground_truth, 0.0)
            }
            PairKind::Megnet => {
                let evs: Vec<Real> = scene.renditions.iter().map(|r| r.0).collect();
                let valid: Vec<Real> = self
                    .deltas
                    .iter()
                    .copied()
                    .filter(|d| evs.iter().any(|e| scene.rendition(e + d).is_some()))
                    .collect();
                if valid.is_empty() {
                    return Err(Error::InvalidArgument(format!(
                        "scene {} has no rendition pair for any delta in {:?}",
                        scene.id, self.deltas
                    )));
                }
                let d = valid[self.rng.gen_range(0..valid.len())];
                let inputs: Vec<usize> = (0..evs.len())
                    .filter(|&i| scene.rendition(evs[i] + d).is_some())
                    .collect();
                let i = inputs[self.rng.gen_range(0..inputs.len())];
                let target = scene.rendition(evs[i] + d).expect("filtered above");
                (i, target, d)
            }
        };
        let (input_ev, input) = &scene.renditions[input_idx];
        let p = self.patch_size;
        let top = self.rng.gen_range(0..=input.height() - p);
        let left = self.rng.gen_range(0..=input.width() - p);
        Ok(PatchPair {
            scene_id: scene.id.clone(),
            input: input.crop(top, left, p, p)?,
            target: target.crop(top, left, p, p)?,
            input_ev: *input_ev,
            delta_ev: delta,
        })
    }
}

/// Draws `batch` pairs from uniformly chosen scenes.
pub fn sample_patch_pairs(
    scenes: &[Scene],
    kind: PairKind,
    patch_size: usize,
    batch: usize,
    deltas: &[Real],
    seed: u64,
) -> Result<Vec<PatchPair>> {
    let mut sampler = PatchSampler::new(scenes, patch_size, deltas, seed)?;
    (0..batch)
        .map(|_| {
            let i = sampler.rng.gen_range(0..scenes.len());
            sampler.pair(i, kind)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{generate_latent, DEFAULT_EV_SET};

    fn scenes(n: usize, size: usize) -> Vec<Scene> {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        (0..n)
            .map(|i| {
                let l = generate_latent(size, 0.5, &mut rng);
                Scene {
                    id: format!("s{i}"),
                    ground_truth: l.ground_truth(),
                    renditions: DEFAULT_EV_SET.iter().map(|&e| (e, l.rendition(e))).collect(),
                }
            })
            .collect()
    }

    #[test]
    fn full_size_patch_is_whole_image() {
        let s = scenes(2, 16);
        for p in sample_patch_pairs(&s, PairKind::Regnet, 16, 5, &DEFAULT_EV_SET, 1).unwrap() {
            let scene = s.iter().find(|x| x.id == p.scene_id).unwrap();
            assert_eq!(&p.target, &scene.ground_truth);
            assert_eq!(Some(&p.input), scene.rendition(p.input_ev));
        }
    }

    #[test]
    fn fixed_seed_repeats() {
        let s = scenes(3, 16);
        let a = sample_patch_pairs(&s, PairKind::Megnet, 8, 20, &DEFAULT_EV_SET, 42).unwrap();
        let b = sample_patch_pairs(&s, PairKind::Megnet, 8, 20, &DEFAULT_EV_SET, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.input, y.input);
            assert_eq!(x.target, y.target);
            assert_eq!(x.delta_ev, y.delta_ev);
        }
    }

    #[test]
    fn generator_pairs_are_colocated_and_consistent() {
        let s = scenes(2, 16);
        for p in sample_patch_pairs(&s, PairKind::Megnet, 8, 200, &DEFAULT_EV_SET, 3).unwrap() {
            let scene = s.iter().find(|x| x.id == p.scene_id).unwrap();
            let target_full = scene.rendition(p.input_ev + p.delta_ev).unwrap();
            let input_full = scene.rendition(p.input_ev).unwrap();
            // Find the crop offset from the input and check the target matches there.
            let found = (0..=8).flat_map(|t| (0..=8).map(move |l| (t, l))).any(|(t, l)| {
                input_full.crop(t, l, 8, 8).unwrap() == p.input
                    && target_full.crop(t, l, 8, 8).unwrap() == p.target
            });
            assert!(found);
        }
    }

    #[test]
    fn rejects_oversized_patch_and_empty_set() {
        let s = scenes(1, 16);
        assert!(PatchSampler::new(&s, 17, &DEFAULT_EV_SET, 0).is_err());
        assert!(PatchSampler::new(&[], 8, &DEFAULT_EV_SET, 0).is_err());
    }
}
