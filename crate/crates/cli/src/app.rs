use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

/// Exposure correction by regression over (row, column, exposure).
///
/// Settings resolve as built-in defaults, then `--config` file entries,
/// then flags. Config files hold `key = value` lines; a key may be scoped
/// to one subcommand as `train.epochs = 10`.
#[derive(Parser, Debug)]
#[command(name = "exreg", version)]
pub struct Cli {
    /// Layered `key = value` configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,

    /// Worker threads; falls back to EXREG_THREADS, then 1.
    #[arg(long, global = true)]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Synthesize a paired exposure dataset.
    MakeDataset(MakeDataset),
    /// Train one stage (megnet, regnet or cotrain).
    Train(Train),
    /// Correct one image with a trained checkpoint.
    Correct(Correct),
    /// Re-render one image at a relative exposure with the generator alone.
    Generate(Generate),
    /// Score a corrector on a dataset manifest.
    Evaluate(Evaluate),
    /// Finite-difference gradient checks of every op and both networks.
    Gradcheck(Gradcheck),
    /// Quick in-memory end-to-end check.
    Selftest(Selftest),
}

#[derive(Args, Debug, Default)]
pub struct MakeDataset {
    /// Output directory.
    #[arg(long)]
    pub out: Option<String>,
    #[arg(long)]
    pub scenes: Option<String>,
    /// Image side length in pixels.
    #[arg(long)]
    pub size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// Peak magnitude of the illumination field, in stops.
    #[arg(long)]
    pub illumination: Option<String>,
    /// Comma-separated relative EVs to render.
    #[arg(long, allow_hyphen_values = true)]
    pub ev_set: Option<String>,
    /// 8 or 16.
    #[arg(long)]
    pub bit_depth: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct Train {
    /// megnet, regnet or cotrain.
    #[arg(long)]
    pub stage: Option<String>,
    /// Dataset directory containing train.tsv.
    #[arg(long)]
    pub data: Option<String>,
    /// Explicit manifest path (overrides --data).
    #[arg(long)]
    pub manifest: Option<String>,
    /// Output directory for checkpoint.exrg, train_log.csv and resolved.conf.
    #[arg(long)]
    pub out: Option<String>,
    /// Checkpoint from the previous stage (file or output directory).
    #[arg(long)]
    pub init: Option<String>,
    #[arg(long)]
    pub epochs: Option<String>,
    #[arg(long)]
    pub learning_rate: Option<String>,
    #[arg(long)]
    pub batch_size: Option<String>,
    #[arg(long)]
    pub patch_size: Option<String>,
    #[arg(long)]
    pub seed: Option<String>,
    /// desk, full or micro.
    #[arg(long)]
    pub profile: Option<String>,
    /// Generated exposures, comma-separated, without 0.
    #[arg(long, allow_hyphen_values = true)]
    pub ev_set: Option<String>,
    /// Any other training key, as key=value. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Args, Debug, Default)]
pub struct Correct {
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long = "in")]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Also write E* as a 16-bit grayscale PNG mapped from [-1.5, 1.5].
    #[arg(long)]
    pub dump_exposure_map: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct Generate {
    #[arg(long)]
    pub ckpt: Option<String>,
    #[arg(long = "in")]
    pub input: Option<String>,
    #[arg(long)]
    pub out: Option<String>,
    /// Relative exposure shift in stops.
    #[arg(long, allow_hyphen_values = true)]
    pub ev: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct Evaluate {
    /// Trained checkpoint; omit with --corrector identity.
    #[arg(long)]
    pub ckpt: Option<String>,
    /// exreg, identity or ground-truth.
    #[arg(long)]
    pub corrector: Option<String>,
    /// Dataset directory containing test.tsv.
    #[arg(long)]
    pub data: Option<String>,
    #[arg(long)]
    pub manifest: Option<String>,
    /// Output directory for report.csv and summary.txt.
    #[arg(long)]
    pub out: Option<String>,
    /// CSV `image,ma,niqe` of externally computed no-reference scores.
    #[arg(long)]
    pub pi_scores: Option<String>,
    /// population or sample.
    #[arg(long)]
    pub variance: Option<String>,
    /// true or false.
    #[arg(long)]
    pub include_zero_ev: Option<String>,
    /// Also score generator output per |delta EV| into generation.csv.
    #[arg(long)]
    pub generation: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct Gradcheck {
    #[arg(long)]
    pub seed: Option<String>,
    /// Entries differenced per tensor in the network checks.
    #[arg(long)]
    pub max_entries: Option<String>,
}

#[derive(Args, Debug, Default)]
pub struct Selftest {
    #[arg(long)]
    pub seed: Option<String>,
}
