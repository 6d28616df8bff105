use thiserror::Error;

use crate::diffcore::DiffError;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Diff(#[from] DiffError),
    #[error("text is empty")]
    EmptyText,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("token id {id} out of range for vocabulary of {vocab}")]
    TokenOutOfRange { id: usize, vocab: usize },
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("input {index} has no maskable tokens")]
    NoEligibleTokens { index: usize },
    #[error("example {index} is missing a label")]
    MissingLabel { index: usize },
    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("unsupported format version {found} (expected {expected})")]
    FormatVersion { found: u32, expected: u32 },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
