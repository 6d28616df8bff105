use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};

#[derive(Debug, Parser)]
#[command(name = "guardrail", version, about = "Deployment-time token-shortcut debiasing")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

/// Options shared by commands that read a run configuration.
#[derive(Debug, Args, Clone, Default)]
pub struct ConfigArgs {
    /// JSON run configuration; defaults apply to missing fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the train, test and support splits.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: `<out_dir>/data`).
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Train the classifier by empirical risk minimization.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        train_file: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        batch_size: Option<usize>,
    },
    /// Score token importance and write the top-k positions per input.
    Attribute {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        input_file: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit a LoRA adapter on unlabeled test inputs.
    Adapt {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        test_file: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        #[arg(long)]
        tau: Option<f64>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        rank: Option<usize>,
        #[arg(long)]
        out: PathBuf,
        /// Loss trace (default: next to `--out`).
        #[arg(long)]
        trace_out: Option<PathBuf>,
    },
    /// Choose the blending strength on a labeled support set.
    Calibrate {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: PathBuf,
        #[arg(long)]
        support_file: PathBuf,
        /// Calibrated adapter checkpoint; the input adapter is left as is.
        #[arg(long)]
        out: PathBuf,
        /// Per-α support accuracies (default: next to `--out`).
        #[arg(long)]
        csv: Option<PathBuf>,
    },
    /// Evaluate group accuracies and MSTPS.
    Eval {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        adapter: Option<PathBuf>,
        /// Blending strength (default: the adapter's calibrated value).
        #[arg(long)]
        alpha: Option<f64>,
        #[arg(long)]
        test_file: PathBuf,
        #[arg(long, default_value_t = 10)]
        k: usize,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Check the identification bounds on random exact chains.
    TheorySim {
        #[arg(long, default_value_t = 200)]
        num_chains: usize,
        #[arg(long, default_value_t = 8)]
        alphabet_max: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value = "identity")]
        rho: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run gen-data, train, adapt, calibrate and eval end to end.
    Pipeline {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}
