//! Experiment orchestration: datasets, configuration, base training, sweeps
//! and report emission.

pub mod config;
pub mod data;
pub mod experiment;
pub mod idx;
pub mod report;

use thiserror::Error;

pub use config::{DatasetConfig, ExperimentConfig, OmegaGrid};
pub use data::{generate_synthetic, Dataset, Provenance, SyntheticKind, SyntheticSpec};
pub use experiment::{base_train, run_experiment, ExperimentOutcome};
pub use idx::{load_idx, IdxError};
pub use report::{report, Summary};

use crate::linearize::LinearizeError;
use crate::network::NetworkError;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid dataset: {0}")]
    InvalidDataset(String),
    #[error("idx: {0}")]
    Idx(#[from] idx::IdxError),
    #[error("config: {0}")]
    Config(String),
    #[error("io: {0}")]
    Io(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Linearize(#[from] LinearizeError),
}
