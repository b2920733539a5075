//! Merged configuration: flags (or their `ASTBRIDGE_*` variables) over the
//! JSON config file over built-in defaults.

use std::fs;
use std::path::{Path, PathBuf};

use clap::Args;
use serde::{Deserialize, Serialize};

use crate::Failure;

/// Every module's knobs. All optional here; defaults are applied where a
/// value is consumed, so the echoed view shows what the user actually set.
#[derive(Args, Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Knobs {
    /// Corpus root: <corpus>/<task>/<language>/<snippet>.json.
    #[arg(long, global = true, env = "ASTBRIDGE_CORPUS")]
    pub corpus: Option<PathBuf>,
    /// Directory of per-language grammar schemas.
    #[arg(long, global = true, env = "ASTBRIDGE_SCHEMAS")]
    pub schemas: Option<PathBuf>,
    /// Universal label set file.
    #[arg(long, global = true, env = "ASTBRIDGE_LABELS")]
    pub labels: Option<PathBuf>,
    /// Key-node policy: JSON list of universal label names.
    #[arg(long, global = true, env = "ASTBRIDGE_POLICY")]
    pub policy: Option<PathBuf>,
    /// Directory of enhanced graphs.
    #[arg(long, global = true, env = "ASTBRIDGE_GRAPHS")]
    pub graphs: Option<PathBuf>,
    /// Split manifest file.
    #[arg(long, global = true, env = "ASTBRIDGE_SPLITS")]
    pub splits: Option<PathBuf>,
    /// Model checkpoint.
    #[arg(long, global = true, env = "ASTBRIDGE_MODEL")]
    pub model: Option<PathBuf>,
    /// Fraction of deletable edges to prune.
    #[arg(long, global = true, env = "ASTBRIDGE_RATIO")]
    pub ratio: Option<f64>,
    #[arg(long, global = true, env = "ASTBRIDGE_SEED")]
    pub seed: Option<u64>,
    /// clone or retrieval.
    #[arg(long, global = true, env = "ASTBRIDGE_TASK")]
    pub task: Option<String>,
    #[arg(long = "neg-k", global = true, env = "ASTBRIDGE_NEG_K")]
    pub neg_k: Option<usize>,
    #[arg(long, global = true, env = "ASTBRIDGE_TAU")]
    pub tau: Option<f64>,
    #[arg(long, global = true, env = "ASTBRIDGE_MARGIN")]
    pub margin: Option<f64>,
    #[arg(long, global = true, env = "ASTBRIDGE_EPOCHS")]
    pub epochs: Option<usize>,
    /// Stop after this many optimizer steps.
    #[arg(long = "max-steps", global = true, env = "ASTBRIDGE_MAX_STEPS")]
    pub max_steps: Option<usize>,
    #[arg(long, global = true, env = "ASTBRIDGE_BATCH")]
    pub batch: Option<usize>,
    #[arg(long, global = true, env = "ASTBRIDGE_LR")]
    pub lr: Option<f64>,
    /// Clustering threshold for `unify`; decision threshold (a number or
    /// `auto`) for `detect` and `eval`.
    #[arg(long, global = true, env = "ASTBRIDGE_THRESHOLD")]
    pub threshold: Option<String>,
    /// Base URL of an external embedding service for `unify`.
    #[arg(long, global = true, env = "ASTBRIDGE_ENDPOINT")]
    pub endpoint: Option<String>,
    /// Ranking cutoff.
    #[arg(long, global = true, env = "ASTBRIDGE_K")]
    pub k: Option<usize>,
    /// Number of tasks generated by `synth`.
    #[arg(long, global = true, env = "ASTBRIDGE_TASKS")]
    pub tasks: Option<usize>,
    #[arg(long, global = true, env = "ASTBRIDGE_OUT")]
    pub out: Option<PathBuf>,
    /// Caps worker threads.
    #[arg(long, global = true, env = "ASTBRIDGE_JOBS")]
    pub jobs: Option<usize>,
}

macro_rules! overlay {
    ($top:expr, $base:expr, $($f:ident),+) => {
        Knobs { $($f: $top.$f.or($base.$f)),+ }
    };
}

impl Knobs {
    /// Values set in `self` win; gaps are filled from `base`.
    pub fn over(self, base: Knobs) -> Knobs {
        overlay!(
            self, base, corpus, schemas, labels, policy, graphs, splits, model, ratio, seed, task, neg_k, tau, margin, epochs,
            max_steps, batch, lr, threshold, endpoint, k, tasks, out, jobs
        )
    }

    pub fn from_file(path: &Path) -> Result<Knobs, Failure> {
        let text = fs::read_to_string(path).map_err(|e| Failure::Invalid(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::Usage(format!("config {}: {e}", path.display())))
    }

    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("knobs serialize")
    }
}

/// Unwraps a required path or reports which flag is missing.
pub fn need<'a>(v: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, Failure> {
    v.as_deref().ok_or_else(|| Failure::Usage(format!("--{flag} is required (flag, ASTBRIDGE_{} or config file)", env_name(flag))))
}

fn env_name(flag: &str) -> String {
    flag.replace('-', "_").to_ascii_uppercase()
}
