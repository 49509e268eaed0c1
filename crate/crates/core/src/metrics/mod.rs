//! Full-reference image metrics, exposure-consistency variance, the
//! perceptual-index combination, and dataset evaluation.

mod evaluate;
mod quality;

pub use evaluate::{
    evaluate, evaluate_generation, read_pi_scores, Corrector, EvGroup, EvalOptions, EvalReport,
    GenerationReport, GenerationRow, GroupSummary, PiScore,
};

pub use quality::{
    perceptual_index, psnr, psnr_var, psnr_variance, ssim, SceneScores, Variance, SSIM_WINDOW,
};
