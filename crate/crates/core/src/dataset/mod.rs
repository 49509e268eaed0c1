//! Paired exposure datasets: the synthetic exposure model, on-disk
//! manifests, and patch-pair sampling for both networks.

mod manifest;
mod sampler;
mod synth;

pub use manifest::{split_bucket, DatasetManifest, Scene, SceneRecord, Split};
pub use sampler::{sample_patch_pairs, PairKind, PatchPair, PatchSampler};
pub use synth::{
    generate_latent, render_ev, synthesize_dataset, Dataset, LatentScene, SynthConfig,
    DEFAULT_EV_SET,
};
