//! Pair construction, objectives, training loops, metrics and split
//! auditing.

pub mod eval;
pub mod index;
pub mod loss;
pub mod metrics;
pub mod mining;
pub mod pairs;
pub mod splits;
pub mod trainer;

use std::fs;
use std::path::{Path, PathBuf};

use thiserror::Error;

use crate::diff::TensorError;
use crate::gmn::GmnError;

pub use eval::{
    detect_clones, evaluate_retrieval, rank_candidates, tune_threshold, GmnScorer, PairScorer, Prediction, VectorScorer,
};
pub use index::{EmbeddingIndex, IndexMeta};
pub use loss::{clone_loss, retrieval_loss, CloneLossForm};
pub use metrics::Metrics;
pub use mining::{mine_hard_negatives, MiningSource};
pub use pairs::{GraphMeta, PairExample, PairSource, RetrievalExample};
pub use splits::{check_split_integrity, make_splits, AuditReport, Split, SplitManifest, SplitRatios};
pub use trainer::{train, LogEntry, MiningKind, NegativeKind, Objective, TrainConfig, TrainHooks, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("{found} tasks; at least {need} are needed to split")]
    TooFewTasks { found: usize, need: usize },
    #[error("invalid split ratios {0}")]
    BadRatios(String),
    #[error("unknown graph {0}")]
    UnknownGraph(String),
    #[error("{0} split is empty")]
    EmptySplit(Split),
    #[error("non-finite loss at step {step}: {diagnostic}")]
    NonFiniteLoss { step: usize, diagnostic: String },
    #[error(transparent)]
    Gmn(#[from] GmnError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: i/o error: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl TrainError {
    /// Whether the error is a non-finite intermediate value.
    pub fn is_non_finite(&self) -> bool {
        matches!(
            self,
            TrainError::Tensor(TensorError::NonFiniteValue { .. })
                | TrainError::Gmn(GmnError::Tensor(TensorError::NonFiniteValue { .. }))
        )
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), TrainError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| TrainError::Io { path: dir.to_path_buf(), source: e })?;
    }
    fs::write(path, bytes).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })
}

pub(crate) fn read_file(path: &Path) -> Result<String, TrainError> {
    fs::read_to_string(path).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })
}
