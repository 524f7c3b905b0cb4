use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::Budget;

#[derive(Debug, Parser)]
#[command(name = "gendistill", version, about = "Distill a dataset into a conditional generator and evaluate it")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Command>,

    /// Print the resolved configuration as TOML and exit.
    #[arg(long, global = true)]
    pub show_config: bool,

    /// Flat TOML file with configuration keys.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Schedule preset applied below the config file and flags.
    #[arg(long, global = true, value_enum)]
    pub budget: Option<Budget>,

    #[command(flatten)]
    pub flags: ConfigFlags,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Subcommand)]
#[serde(rename_all = "lowercase")]
pub enum Command {
    /// Stage 1: train the conditional GAN.
    Pretrain {
        #[arg(long, default_value = "runs/pretrain")]
        out: PathBuf,
    },
    /// Stage 2: refine a pretrained generator by global and local matching.
    Distill {
        /// Stage-1 checkpoint file or run directory.
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "runs/distill")]
        out: PathBuf,
    },
    /// Stage 3: write a distilled set of `--ipc` images per class.
    Generate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "runs/generate")]
        out: PathBuf,
        /// `archive` or `archive+grid`.
        #[arg(long, default_value = "archive")]
        format: String,
    },
    /// Train `--eval-arch` from scratch on fresh distilled sets and test it.
    Evaluate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "runs/evaluate")]
        out: PathBuf,
    },
    /// Evaluate several architectures on the same distilled sets.
    Crossarch {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "runs/crossarch")]
        out: PathBuf,
    },
    /// Sweep the local-loss weight from a stage-1 checkpoint.
    Ablate {
        #[arg(long)]
        ckpt: PathBuf,
        #[arg(long, default_value = "runs/ablate")]
        out: PathBuf,
    },
    /// Render a class-by-sample PNG grid.
    Grid {
        /// Distilled archive to render.
        #[arg(long, conflicts_with = "ckpt", required_unless_present = "ckpt")]
        archive: Option<PathBuf>,
        /// Generate from this checkpoint with `--ipc` and `--seed` instead.
        #[arg(long)]
        ckpt: Option<PathBuf>,
        /// Columns per class; defaults to min(ipc, 10).
        #[arg(long)]
        cols: Option<usize>,
        /// Integer pixel replication factor.
        #[arg(long, default_value_t = 1)]
        scale: usize,
        #[arg(long, default_value = "grid.png")]
        out: PathBuf,
    },
    /// Markdown tables from per-repeat CSVs.
    Tables {
        #[arg(long, required = true, num_args = 1..)]
        csv: Vec<PathBuf>,
        #[arg(long, default_value = "tables.md")]
        out: PathBuf,
    },
    /// SVG ablation plot from a per-repeat ablation CSV.
    Plot {
        #[arg(long)]
        csv: PathBuf,
        #[arg(long, default_value = "ablation.svg")]
        out: PathBuf,
    },
    /// Repeat a recorded run.
    Run {
        #[arg(long)]
        from_manifest: PathBuf,
        /// Write outputs here instead of the recorded location.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Pretrain { .. } => "pretrain",
            Command::Distill { .. } => "distill",
            Command::Generate { .. } => "generate",
            Command::Evaluate { .. } => "evaluate",
            Command::Crossarch { .. } => "crossarch",
            Command::Ablate { .. } => "ablate",
            Command::Grid { .. } => "grid",
            Command::Tables { .. } => "tables",
            Command::Plot { .. } => "plot",
            Command::Run { .. } => "run",
        }
    }

    pub fn out(&self) -> Option<&PathBuf> {
        match self {
            Command::Pretrain { out }
            | Command::Distill { out, .. }
            | Command::Generate { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Crossarch { out, .. }
            | Command::Ablate { out, .. }
            | Command::Grid { out, .. }
            | Command::Tables { out, .. }
            | Command::Plot { out, .. } => Some(out),
            Command::Run { out, .. } => out.as_ref(),
        }
    }

    pub fn with_out(mut self, new: PathBuf) -> Self {
        match &mut self {
            Command::Pretrain { out }
            | Command::Distill { out, .. }
            | Command::Generate { out, .. }
            | Command::Evaluate { out, .. }
            | Command::Crossarch { out, .. }
            | Command::Ablate { out, .. }
            | Command::Grid { out, .. }
            | Command::Tables { out, .. }
            | Command::Plot { out, .. } => *out = new,
            Command::Run { out, .. } => *out = Some(new),
        }
        self
    }
}

/// Configuration flags; each mirrors the config key of the same name.
#[derive(Debug, Clone, Default, Args, Serialize)]
pub struct ConfigFlags {
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dataset: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<PathBuf>,
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub deterministic: Option<bool>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub noise_dim: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gen_width: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_width: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan_epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan_iters: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan_batch: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan_lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gan_loss: Option<String>,

    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_g: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_l: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub batch_per_class: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub lr: Option<f64>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub disc_lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub adv_batch: Option<usize>,
    /// Comma-separated matcher architectures.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pool: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub reinit_every: Option<usize>,
    /// Width overrides, e.g. `convnet3=32,resnet18=16`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub widths: Option<String>,
    /// Tap overrides, e.g. `resnet10=conv2`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub taps: Option<String>,

    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ipc: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_arch: Option<String>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_epochs: Option<usize>,
    #[arg(long, global = true, allow_negative_numbers = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_lr: Option<f64>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub eval_batch: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub repeats: Option<usize>,
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub patience: Option<usize>,
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub augment: Option<bool>,
    #[arg(long, global = true, num_args = 0..=1, require_equals = true, default_missing_value = "true")]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub fixed_set: Option<bool>,
    /// Comma-separated architectures for `crossarch`.
    #[arg(long, global = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub archs: Option<String>,
    /// Comma-separated ω_l values for `ablate`.
    #[arg(long, global = true, allow_hyphen_values = true)]
    #[serde(skip_serializing_if = "Option::is_none")]
    pub omega_l_values: Option<String>,
}

impl ConfigFlags {
    pub fn to_table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("flags serialize")
    }
}
