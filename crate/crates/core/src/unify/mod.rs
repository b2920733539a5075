//! Universal label set construction.
//!
//! Pipeline: grammar schemas (completed from the corpus) → node signatures
//! → thresholded similarity graph → union-find components → structural
//! merging → Other mapping of rare or context-heterogeneous types.

pub mod cluster;
pub mod labels;
pub mod schema;
pub mod signature;
pub mod similarity;

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cluster::{cluster_labels, merge_equivalent_clusters, Partition, UnionFind};
pub use labels::{
    apply_mapping, key_stats, map_rare_to_other, KeyStats, LabeledNode, LabeledTree, UniversalLabelSet, GLOBAL_ROOT_ID,
    OTHER_ID,
};
pub use schema::{complete_schemas, load_schema, load_schema_dir, GrammarSchema, NodeSpec};
pub use signature::{build_signature, cosine, NodeSignature, SignatureWeights};
pub use similarity::{ProviderKind, SimilarityProvider};

use crate::interchange::ParseTree;

pub const DEFAULT_THRESHOLD: f64 = 0.75;
pub const DEFAULT_F_MIN: u64 = 10;
pub const DEFAULT_H_MAX: f64 = 0.9;

#[derive(Debug, Error)]
pub enum UnifyError {
    #[error("{path}: i/o error: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Schema { path: PathBuf, message: String },
    #[error("signature of {0} is empty")]
    EmptySignature(LabelKey),
    #[error("similarity provider unavailable: {0}")]
    ProviderUnavailable(String),
    #[error("threshold {0} outside (0, 1]")]
    BadThreshold(f64),
}

impl UnifyError {
    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }

    pub(crate) fn schema(path: &Path, e: impl fmt::Display) -> Self {
        Self::Schema { path: path.to_path_buf(), message: e.to_string() }
    }
}

/// A language-specific node type.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LabelKey {
    pub language: String,
    pub type_name: String,
}

impl LabelKey {
    pub fn new(language: &str, type_name: &str) -> Self {
        Self { language: language.to_string(), type_name: type_name.to_string() }
    }
}

impl fmt::Display for LabelKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.language, self.type_name)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UnifyConfig {
    pub threshold: f64,
    /// Centroid threshold for structural merging; defaults to `threshold`.
    pub merge_threshold: Option<f64>,
    pub f_min: u64,
    pub h_max: f64,
    pub weights: SignatureWeights,
    /// Base URL of an external embedding service.
    pub endpoint: Option<String>,
}

impl Default for UnifyConfig {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            merge_threshold: None,
            f_min: DEFAULT_F_MIN,
            h_max: DEFAULT_H_MAX,
            weights: SignatureWeights::default(),
            endpoint: None,
        }
    }
}

/// Intermediate results of [`build_label_set`], kept for inspection.
#[derive(Clone, Debug)]
pub struct BuildReport {
    pub signatures: Vec<NodeSignature>,
    pub clusters: Partition,
    pub merged: Partition,
    pub stats: BTreeMap<LabelKey, KeyStats>,
    pub provider: ProviderKind,
}

/// Builtin cosine of two signatures.
pub fn pairwise_similarity(a: &NodeSignature, b: &NodeSignature) -> f64 {
    if a.key == b.key {
        return 1.0;
    }
    cosine(&a.feature_vector, &b.feature_vector)
}

/// Builds the label set. `all_trees` fixes the key universe (with the
/// schemas); frequencies and heterogeneity are counted on `freq_trees`
/// (the training split).
pub fn build_label_set(
    all_trees: &[ParseTree],
    freq_trees: &[ParseTree],
    schemas: &BTreeMap<String, GrammarSchema>,
    cfg: &UnifyConfig,
) -> Result<(UniversalLabelSet, BuildReport), UnifyError> {
    if !(cfg.threshold > 0.0 && cfg.threshold <= 1.0) {
        return Err(UnifyError::BadThreshold(cfg.threshold));
    }
    let mut schemas = schemas.clone();
    complete_schemas(&mut schemas, all_trees);
    let mut keys = Vec::new();
    let mut specs = Vec::new();
    for (lang, s) in &schemas {
        for (ty, spec) in &s.node_specs {
            keys.push(LabelKey::new(lang, ty));
            specs.push(spec.clone());
        }
    }
    let signatures: Vec<NodeSignature> =
        keys.iter().zip(&specs).map(|(k, s)| build_signature(k, s, cfg.weights)).collect::<Result<_, _>>()?;
    let vectors: Vec<Vec<f64>> = signatures.iter().map(|s| s.feature_vector.clone()).collect();
    let texts: Vec<String> = keys.iter().zip(&specs).map(|(k, s)| signature::describe(k, s)).collect();

    let mut provider = match &cfg.endpoint {
        Some(url) => SimilarityProvider::external(url.clone()),
        None => SimilarityProvider::builtin(),
    };
    if let Err(e) = provider.prepare(&keys, &vectors, &texts) {
        log::warn!("{e}; falling back to builtin signatures");
        provider = SimilarityProvider::builtin();
        provider.prepare(&keys, &vectors, &texts)?;
    }

    let clusters = cluster_labels(&keys, |i, j| provider.similarity(&keys[i], &keys[j]), cfg.threshold);
    let space: HashMap<LabelKey, Vec<f64>> =
        keys.iter().map(|k| (k.clone(), provider.vector(k).expect("prepared").to_vec())).collect();
    let arity: HashMap<LabelKey, (usize, Option<usize>)> =
        keys.iter().zip(&specs).map(|(k, s)| (k.clone(), s.arity())).collect();
    let merged = merge_equivalent_clusters(&clusters, &space, &arity, cfg.merge_threshold.unwrap_or(cfg.threshold));
    let stats = key_stats(freq_trees, &merged);
    let labels = map_rare_to_other(&merged, &stats, cfg.f_min, cfg.h_max, cfg.threshold);
    log::info!(
        "{} node types → {} clusters → {} merged → {} labels",
        keys.len(),
        clusters.len(),
        merged.len(),
        labels.len()
    );
    let report = BuildReport { signatures, clusters, merged, stats, provider: provider.kind().clone() };
    Ok((labels, report))
}
