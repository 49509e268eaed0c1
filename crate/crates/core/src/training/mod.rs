//! Losses, optimizer, checkpoints and the staged schedule.

mod adam;
mod checkpoint;
mod config;
mod losses;
mod schedule;

pub use adam::{clip_global_norm, Adam, AdamConfig};
pub use checkpoint::{Checkpoint, OptimizerState, FORMAT_VERSION, MAGIC};
pub use config::{parse_key_values, parse_list, Profile, Stage, TrainConfig};
pub use losses::{charbonnier, charbonnier_loss, l1, l1_loss, CHARBONNIER_EPS};
pub use schedule::{exreg_val_psnr, log_csv, megnet_val_psnr, train, train_manifest, LogRow, TrainOutcome};
