//! Pairwise similarity between node-type signatures.
//!
//! The builtin provider is the cosine of the hashed signatures. The external
//! provider sends type descriptions to an HTTP embedding service
//! (`POST <endpoint>/embed`, `{"texts": [...]}` → `{"vectors": [[...]]}`)
//! and compares the returned vectors locally.

use std::collections::HashMap;
use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::signature::cosine;
use super::{LabelKey, UnifyError};

pub const EXTERNAL_TIMEOUT: Duration = Duration::from_secs(5);

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ProviderKind {
    Builtin,
    External { endpoint: String },
}

#[derive(Serialize)]
struct EmbedRequest<'a> {
    texts: &'a [String],
}

#[derive(Deserialize)]
struct EmbedResponse {
    vectors: Vec<Vec<f64>>,
}

/// Calls the embedding service once for all `texts`.
pub fn embed_remote(endpoint: &str, texts: &[String], timeout: Duration) -> Result<Vec<Vec<f64>>, UnifyError> {
    let url = format!("{}/embed", endpoint.trim_end_matches('/'));
    let agent = ureq::AgentBuilder::new().timeout(timeout).build();
    let resp = agent
        .post(&url)
        .send_json(EmbedRequest { texts })
        .map_err(|e| UnifyError::ProviderUnavailable(format!("{url}: {e}")))?;
    let body: EmbedResponse = resp
        .into_json()
        .map_err(|e| UnifyError::ProviderUnavailable(format!("{url}: bad response body: {e}")))?;
    if body.vectors.len() != texts.len() {
        return Err(UnifyError::ProviderUnavailable(format!(
            "{url}: {} vectors for {} texts",
            body.vectors.len(),
            texts.len()
        )));
    }
    let dim = body.vectors.first().map_or(0, Vec::len);
    if dim == 0 || body.vectors.iter().any(|v| v.len() != dim || v.iter().any(|x| !x.is_finite())) {
        return Err(UnifyError::ProviderUnavailable(format!("{url}: ragged or non-finite vectors")));
    }
    Ok(body.vectors)
}

/// Similarity oracle over a fixed set of keys with a symmetric score cache.
pub struct SimilarityProvider {
    kind: ProviderKind,
    vectors: HashMap<LabelKey, Vec<f64>>,
    cache: HashMap<(LabelKey, LabelKey), f64>,
}

impl SimilarityProvider {
    pub fn builtin() -> Self {
        Self { kind: ProviderKind::Builtin, vectors: HashMap::new(), cache: HashMap::new() }
    }

    pub fn external(endpoint: impl Into<String>) -> Self {
        Self { kind: ProviderKind::External { endpoint: endpoint.into() }, vectors: HashMap::new(), cache: HashMap::new() }
    }

    pub fn kind(&self) -> &ProviderKind {
        &self.kind
    }

    /// Registers the vectors to compare. For the builtin provider `vectors`
    /// are the signatures themselves; for the external provider `texts` are
    /// embedded remotely and `vectors` are ignored.
    pub fn prepare(&mut self, keys: &[LabelKey], vectors: &[Vec<f64>], texts: &[String]) -> Result<(), UnifyError> {
        self.cache.clear();
        let vs = match &self.kind {
            ProviderKind::Builtin => vectors.to_vec(),
            ProviderKind::External { endpoint } => embed_remote(endpoint, texts, EXTERNAL_TIMEOUT)?,
        };
        self.vectors = keys.iter().cloned().zip(vs).collect();
        Ok(())
    }

    /// Vector used for `key` (signature or remote embedding).
    pub fn vector(&self, key: &LabelKey) -> Option<&[f64]> {
        self.vectors.get(key).map(Vec::as_slice)
    }

    pub fn similarity(&mut self, a: &LabelKey, b: &LabelKey) -> f64 {
        if a == b {
            return 1.0;
        }
        let pair = if a < b { (a.clone(), b.clone()) } else { (b.clone(), a.clone()) };
        if let Some(&s) = self.cache.get(&pair) {
            return s;
        }
        let s = match (self.vectors.get(a), self.vectors.get(b)) {
            (Some(x), Some(y)) => cosine(x, y),
            _ => 0.0,
        };
        self.cache.insert(pair, s);
        s
    }

    /// Cached entries as `(a, b, score)` with `a < b`.
    pub fn cached(&self) -> impl Iterator<Item = (&LabelKey, &LabelKey, f64)> {
        self.cache.iter().map(|((a, b), &s)| (a, b, s))
    }
}
