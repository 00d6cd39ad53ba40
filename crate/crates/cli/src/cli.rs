use std::path::PathBuf;

use clap::{Parser, Subcommand};

/// Multi-modal graph convolutional action segmentation: synthetic data,
/// training, evaluation and sweeps.
///
/// `--config` takes a preset name (`default`, `paper`) or a JSON file.
/// `MMGCN_THREADS` caps the worker count.
#[derive(Debug, Parser)]
#[command(name = "mmgcn", version)]
pub struct Cli {
    /// Seed for this command's randomness: dataset generation, training,
    /// node dropout or label mixing.
    #[arg(long, global = true)]
    pub seed: Option<u64>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    Generate {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a model; writes weights.bin, history.csv and config.json.
    Train {
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Score a model; writes report.json, report.csv, predictions.csv and
    /// timeline.svg.
    Eval {
        #[arg(long, required_unless_present = "identity_predictor")]
        weights: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Class whose segments F1@k ignores.
        #[arg(long)]
        ignore_class: Option<usize>,
        /// Sequences drawn in the timeline plot.
        #[arg(long, default_value_t = 8)]
        timeline_sequences: usize,
        /// Predict the ground truth (test hook).
        #[arg(long, hide = true)]
        identity_predictor: bool,
    },
    /// Show label smoothing and mixing on two sequences; writes labels.csv.
    Augment {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = "default")]
        config: String,
        #[arg(long)]
        out: PathBuf,
        /// Indices of the two sequences to mix.
        #[arg(long, value_delimiter = ',', default_value = "0,1")]
        pair: Vec<usize>,
    },
    /// Drop motion nodes at random and save the noisy dataset.
    Perturb {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        rate: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Accuracy and F1 against node-dropout rate; writes robustness.csv.
    Robustness {
        #[arg(long)]
        weights: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_delimiter = ',', default_value = "0,0.05,0.1,0.15,0.2,0.25")]
        rates: Vec<f64>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        ignore_class: Option<usize>,
    },
    /// Train and score every cell of an ablation grid (`full` or a grid
    /// file); writes runs.csv and summary.csv.
    Ablate {
        #[arg(long)]
        grid: String,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Multiply-accumulate counts at visual:motion ratios 1:30, 2:30, 30:30.
    Flops {
        #[arg(long, default_value = "default")]
        config: String,
        /// Also write flops.csv here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print a resolved config as JSON.
    Config {
        #[arg(long, default_value = "default")]
        config: String,
    },
}
