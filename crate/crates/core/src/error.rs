use std::path::PathBuf;

use gendistill_nn::NnError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("unsupported dataset '{0}' (expected mnist, fashion_mnist or cifar10)")]
    UnsupportedDataset(String),

    #[error("failed to load {}: {msg}", path.display())]
    Load { path: PathBuf, msg: String },

    #[error("class {class} has {available} examples but {requested} were requested")]
    InsufficientSamples { class: usize, requested: usize, available: usize },

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("unsupported architecture '{0}'")]
    UnsupportedArch(String),

    #[error("invalid configuration: {field}: {msg}")]
    Config { field: String, msg: String },

    #[error("numerical divergence at epoch {epoch}, iteration {iter}: {what}")]
    Divergence { epoch: usize, iter: usize, what: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("distilled archive: {0}")]
    Archive(String),

    #[error("layout: {0}")]
    Layout(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error(transparent)]
    Nn(#[from] NnError),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error("png: {0}")]
    Png(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn config_err<T>(field: &str, msg: impl Into<String>) -> Result<T> {
    Err(Error::Config { field: field.to_string(), msg: msg.into() })
}
