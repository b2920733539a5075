//! Provenance records embedded in every written artifact.
//!
//! Records carry no timestamps: identical inputs and seed must reproduce
//! byte-identical files.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub const TOOL_VERSION: &str = concat!("astbridge ", env!("CARGO_PKG_VERSION"));

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_version: String,
    pub config_hash: String,
    pub seed: u64,
    /// Input name → SHA-256 hex digest of its content.
    pub input_hashes: BTreeMap<String, String>,
}

impl Provenance {
    pub fn new(config: &serde_json::Value, seed: u64) -> Self {
        Self { tool_version: TOOL_VERSION.to_string(), config_hash: config_hash(config), seed, input_hashes: BTreeMap::new() }
    }

    pub fn with_input(mut self, name: impl Into<String>, digest: String) -> Self {
        self.input_hashes.insert(name.into(), digest);
        self
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn hash_file(path: &Path) -> std::io::Result<String> {
    Ok(sha256_hex(&fs::read(path)?))
}

/// Order-independent digest of a set of files, keyed by their names
/// relative to `root`.
pub fn hash_tree<'a>(root: &Path, files: impl IntoIterator<Item = &'a Path>) -> std::io::Result<String> {
    let mut parts = BTreeMap::new();
    for f in files {
        let rel = f.strip_prefix(root).unwrap_or(f).to_string_lossy().replace('\\', "/");
        parts.insert(rel, hash_file(f)?);
    }
    let mut hasher = Sha256::new();
    for (name, digest) in &parts {
        hasher.update(name.as_bytes());
        hasher.update([0]);
        hasher.update(digest.as_bytes());
        hasher.update([b'\n']);
    }
    Ok(hasher.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Digest of a configuration with filesystem paths removed, so that the
/// same settings hash equally from any working directory. Keys named
/// `*path*`, `*dir*`, `out`, `config` or `corpus`/`schemas`/`labels`/`policy`
/// are dropped at every nesting level; object keys are hashed in sorted order.
pub fn config_hash(config: &serde_json::Value) -> String {
    sha256_hex(canonical_json(&strip_paths(config)).as_bytes())
}

fn is_path_key(k: &str) -> bool {
    let k = k.to_ascii_lowercase();
    k.contains("path")
        || k.contains("dir")
        || matches!(k.as_str(), "out" | "config" | "corpus" | "schemas" | "labels" | "policy" | "graphs" | "splits" | "model" | "index" | "pairs" | "log" | "jobs")
}

fn strip_paths(v: &serde_json::Value) -> serde_json::Value {
    match v {
        serde_json::Value::Object(m) => serde_json::Value::Object(
            m.iter().filter(|(k, _)| !is_path_key(k)).map(|(k, v)| (k.clone(), strip_paths(v))).collect(),
        ),
        serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(strip_paths).collect()),
        other => other.clone(),
    }
}

/// JSON text with object keys sorted recursively.
pub fn canonical_json(v: &serde_json::Value) -> String {
    fn sorted(v: &serde_json::Value) -> serde_json::Value {
        match v {
            serde_json::Value::Object(m) => {
                let b: BTreeMap<_, _> = m.iter().map(|(k, v)| (k.clone(), sorted(v))).collect();
                serde_json::Value::Object(b.into_iter().collect())
            }
            serde_json::Value::Array(a) => serde_json::Value::Array(a.iter().map(sorted).collect()),
            other => other.clone(),
        }
    }
    serde_json::to_string(&sorted(v)).expect("json values always serialize")
}

/// Mixes a global seed with a string identifier into a per-item seed.
pub fn derive_seed(seed: u64, id: &str) -> u64 {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(id.as_bytes());
    let d = h.finalize();
    u64::from_le_bytes(d[..8].try_into().expect("digest has 32 bytes"))
}
