//! Exposure correction as multi-dimensional regression over
//! (row, column, exposure).
//!
//! The crate is organised bottom-up:
//!
//! * [`tensor`], [`autodiff`]: dense tensors and a reverse-mode tape.
//! * [`image`], [`dataset`]: RGB rasters, the synthetic exposure model and
//!   paired-patch sampling.
//! * [`megnet`]: the conditional multi-exposure generator.
//! * [`regnet`]: exposure-map prediction, cross-attention regression over
//!   the token grid, and the decoder with adjusted skip features.
//! * [`training`]: losses, Adam, checkpoints and the staged schedule.
//! * [`metrics`]: PSNR, SSIM, PSNR variance across exposures and the
//!   perceptual-index combination, plus dataset evaluation.

pub mod autodiff;
pub mod dataset;
pub mod error;
pub mod image;
mod kernels;
pub mod megnet;
pub mod metrics;
pub mod model;
pub mod params;
pub mod regnet;
pub mod rng;
pub mod tensor;
pub mod training;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use tensor::{Real, Tensor};
