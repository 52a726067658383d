use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Declares a command's flag set (every option optional, so omitted flags
/// fall through to the config file) and its resolved configuration.
macro_rules! options {
    ($flags:ident, $conf:ident { $( $(#[$attr:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)? }) => {
        #[derive(Debug, Clone, clap::Args, serde::Serialize)]
        pub struct $flags {
            /// JSON file of option values; explicit flags take precedence.
            #[arg(long)]
            #[serde(skip)]
            pub config: Option<PathBuf>,
            $( $(#[$attr])* #[arg(long)] pub $field: Option<$ty>, )*
        }

        #[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
        #[serde(default, deny_unknown_fields)]
        pub struct $conf {
            $( pub $field: $ty, )*
        }

        impl Default for $conf {
            fn default() -> Self {
                Self { $( $field: $default, )* }
            }
        }
    };
}

options!(GenFlags, GenConfig {
    /// neutral, ho_triple_pairs, ho_attribute_pairs or ho_triples.
    regime: String = "neutral".into(),
    /// Training problems.
    train: usize = 1000,
    /// Validation problems.
    val: usize = 100,
    /// Test problems.
    test: usize = 200,
    /// Panel resolution in pixels (40 or 80).
    res: usize = 40,
    seed: u64 = 0,
    threads: usize = 1,
    /// Output directory.
    out: PathBuf = PathBuf::new(),
});

options!(TrainVaeFlags, TrainVaeConfig {
    /// Dataset directory written by `gen`.
    data: PathBuf = PathBuf::new(),
    epochs: usize = 10,
    lr: f64 = 3e-4,
    /// Problems per batch (16 panels each).
    batch: usize = 32,
    beta_start: f64 = 0.5,
    beta_end: f64 = 4.0,
    /// Fraction of training spent ramping β.
    ramp: f64 = 0.5,
    /// linear, cosine or steps:N.
    ramp_shape: String = "linear".into(),
    latent_dim: usize = 64,
    seed: u64 = 0,
    threads: usize = 1,
    /// Checkpoint path.
    out: PathBuf = PathBuf::new(),
});

options!(TrainWrenFlags, TrainWrenConfig {
    data: PathBuf = PathBuf::new(),
    /// VAE checkpoint for the vae variants.
    embedder: PathBuf = PathBuf::new(),
    /// vae_frozen, vae_finetune or cnn_baseline.
    variant: String = "vae_frozen".into(),
    frozen_epochs: usize = 6,
    finetune_epochs: usize = 2,
    lr: f64 = 3e-4,
    /// Problems per batch.
    batch: usize = 32,
    g_width: usize = 512,
    g_layers: usize = 3,
    f_width: usize = 256,
    dropout: f64 = 0.5,
    seed: u64 = 0,
    threads: usize = 1,
    out: PathBuf = PathBuf::new(),
});

options!(EvalFlags, EvalConfig {
    data: PathBuf = PathBuf::new(),
    /// WReN checkpoint (head and backbone).
    wren: PathBuf = PathBuf::new(),
    /// Optional VAE checkpoint the frozen backbone must match.
    embedder: PathBuf = PathBuf::new(),
    /// val, test or both.
    split: String = "both".into(),
    threads: usize = 1,
    /// Report JSON path.
    out: PathBuf = PathBuf::new(),
});

options!(TraverseFlags, TraverseConfig {
    vae: PathBuf = PathBuf::new(),
    /// Dataset directory supplying probe and source panels.
    data: PathBuf = PathBuf::new(),
    /// Split the panels come from.
    split: String = "train".into(),
    /// Panel index within the split (problem × 16 + slot).
    image: usize = 0,
    /// Comma-separated latent dimensions; defaults to the eight highest-KL ones.
    #[arg(value_delimiter = ',')]
    dims: Vec<usize> = Vec::new(),
    steps: usize = 10,
    /// Panels passed through the encoder to estimate the support.
    probe_count: usize = 5000,
    /// Dimensions for the histogram plots; defaults to the two highest-KL ones.
    #[arg(value_delimiter = ',')]
    hist_dims: Vec<usize> = Vec::new(),
    bins: usize = 40,
    seed: u64 = 0,
    threads: usize = 1,
    /// Grid PNG path.
    out: PathBuf = PathBuf::new(),
});

options!(ProbeFlags, ProbeConfigArgs {
    /// VAE or WReN checkpoint whose panel features are probed.
    embedder: PathBuf = PathBuf::new(),
    data: PathBuf = PathBuf::new(),
    /// Training panels used for the probe.
    panels: usize = 2000,
    epochs: usize = 10,
    batch: usize = 64,
    lr: f64 = 1e-3,
    /// Panels shown in the reconstruction strip.
    strip: usize = 8,
    seed: u64 = 0,
    threads: usize = 1,
    out: PathBuf = PathBuf::new(),
});

#[derive(Debug, Clone, clap::Args)]
pub struct ReportFlags {
    /// Regime report files written by `eval`.
    #[arg(required = true)]
    pub reports: Vec<PathBuf>,
    /// Also write the table here.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Parser)]
#[command(name = "ravenforge", version, about = "Matrix-reasoning puzzles, β-VAE and WReN training and diagnostics")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset for one generalization regime.
    Gen(GenFlags),
    /// Train a β-VAE on dataset panels.
    TrainVae(TrainVaeFlags),
    /// Train a WReN head over a panel embedder.
    TrainWren(TrainWrenFlags),
    /// Score a WReN checkpoint on validation and test splits.
    Eval(EvalFlags),
    /// Render latent traversals and latent histograms of a VAE.
    Traverse(TraverseFlags),
    /// Train a decoder on frozen panel features.
    Probe(ProbeFlags),
    /// Tabulate regime reports.
    Report(ReportFlags),
}
