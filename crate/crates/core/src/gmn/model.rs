//! Model configuration, parameters, vocabulary and persistence.

use std::collections::{BTreeMap, HashMap};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter};
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::diff::{read_checkpoint, write_checkpoint, CheckpointError, ParamId, ParamSet, Real, Tensor, TensorError};
use crate::enhance::UnifiedAst;
use crate::provenance::{sha256_hex, Provenance};

pub const PAD_TOKEN: &str = "<pad>";
pub const OOV_TOKEN: &str = "<oov>";

#[derive(Debug, Error)]
pub enum GmnError {
    #[error("node label {label} outside the label table of size {size}")]
    UnknownLabel { label: usize, size: usize },
    #[error("graph {0} has no nodes")]
    EmptyGraph(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("{path}: i/o error: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(#[from] CheckpointError),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GmnConfig {
    pub d_t: usize,
    pub d_a: usize,
    /// Width of the first MLP layer.
    pub hidden: usize,
    pub rounds: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub ln_eps: f64,
}

impl Default for GmnConfig {
    fn default() -> Self {
        Self { d_t: 50, d_a: 50, hidden: 100, rounds: 4, dropout: 0.1, leaky_slope: 0.2, ln_eps: 1e-5 }
    }
}

impl GmnConfig {
    pub fn d(&self) -> usize {
        self.d_t + self.d_a
    }

    /// Compact configuration with `d = 2·half` (hidden width `d`).
    pub fn small(half: usize) -> Self {
        Self { d_t: half, d_a: half, hidden: 2 * half, ..Self::default() }
    }
}

/// Attribute-token vocabulary; row 0 is padding, row 1 out-of-vocabulary.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    pub tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn new(mut tokens: Vec<String>) -> Self {
        tokens.retain(|t| t != PAD_TOKEN && t != OOV_TOKEN);
        tokens.sort();
        tokens.dedup();
        let mut all = vec![PAD_TOKEN.to_string(), OOV_TOKEN.to_string()];
        all.extend(tokens);
        let mut v = Self { tokens: all, index: HashMap::new() };
        v.reindex();
        v
    }

    fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
    }

    /// Tokens occurring at least `min_count` times across `graphs`.
    pub fn from_graphs<'a>(graphs: impl IntoIterator<Item = &'a UnifiedAst>, min_count: usize) -> Self {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for g in graphs {
            for n in &g.nodes {
                for t in &n.attr_tokens {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        Self::new(counts.into_iter().filter(|&(_, c)| c >= min_count).map(|(t, _)| t.to_string()).collect())
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(1)
    }

    pub fn hash(&self) -> String {
        sha256_hex(self.tokens.join("\n").as_bytes())
    }
}

/// Handles of every trainable tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ParamIds {
    pub e_type: ParamId,
    pub e_attr: ParamId,
    pub w1: ParamId,
    pub b1: ParamId,
    pub w2: ParamId,
    pub b2: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
    /// Attention vector `a` (2d×1); rows `[0, d)` score the attending node.
    pub att: ParamId,
    pub w_r: ParamId,
    pub u_r: ParamId,
    pub b_r: ParamId,
    pub w_z: ParamId,
    pub u_z: ParamId,
    pub b_z: ParamId,
    pub w_h: ParamId,
    pub u_h: ParamId,
    pub b_h: ParamId,
    pub pool: ParamId,
}

impl ParamIds {
    fn resolve<T: Real>(p: &ParamSet<T>) -> Option<Self> {
        let g = |n: &str| p.id_of(n);
        Some(Self {
            e_type: g("e_type")?,
            e_attr: g("e_attr")?,
            w1: g("w1")?,
            b1: g("b1")?,
            w2: g("w2")?,
            b2: g("b2")?,
            ln_gain: g("ln_gain")?,
            ln_bias: g("ln_bias")?,
            att: g("att")?,
            w_r: g("w_r")?,
            u_r: g("u_r")?,
            b_r: g("b_r")?,
            w_z: g("w_z")?,
            u_z: g("u_z")?,
            b_z: g("b_z")?,
            w_h: g("w_h")?,
            u_h: g("u_h")?,
            b_h: g("b_h")?,
            pool: g("pool")?,
        })
    }
}

/// Expected shape of every named parameter.
pub fn param_shapes(cfg: &GmnConfig, num_labels: usize, vocab_len: usize) -> Vec<(&'static str, (usize, usize))> {
    let d = cfg.d();
    vec![
        ("e_type", (num_labels, cfg.d_t)),
        ("e_attr", (vocab_len, cfg.d_a)),
        ("w1", (d, cfg.hidden)),
        ("b1", (1, cfg.hidden)),
        ("w2", (cfg.hidden, d)),
        ("b2", (1, d)),
        ("ln_gain", (1, d)),
        ("ln_bias", (1, d)),
        ("att", (2 * d, 1)),
        ("w_r", (2 * d, d)),
        ("u_r", (d, d)),
        ("b_r", (1, d)),
        ("w_z", (2 * d, d)),
        ("u_z", (d, d)),
        ("b_z", (1, d)),
        ("w_h", (2 * d, d)),
        ("u_h", (d, d)),
        ("b_h", (1, d)),
        ("pool", (d, 1)),
    ]
}

#[derive(Clone, Debug)]
pub struct GmnModel {
    pub config: GmnConfig,
    pub num_labels: usize,
    pub vocab: Vocab,
    pub params: ParamSet<f32>,
    pub ids: ParamIds,
}

fn xavier(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f32> {
    let a = (6.0 / (rows + cols) as f64).sqrt();
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-a..a) as f32).collect())
}

impl GmnModel {
    /// Seeded initialization: Xavier-uniform matrices, `N(0, 1)` embedding
    /// rows, zero biases, unit LayerNorm gain.
    pub fn new(config: GmnConfig, num_labels: usize, vocab: Vocab, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0f64, 1.0).expect("valid normal");
        let mut params = ParamSet::new();
        for (name, (r, c)) in param_shapes(&config, num_labels, vocab.len()) {
            let t = match name {
                "e_type" | "e_attr" => Tensor::new(r, c, (0..r * c).map(|_| normal.sample(&mut rng) as f32).collect()),
                "ln_gain" => Tensor::filled(r, c, 1.0),
                n if n.starts_with('b') || n == "ln_bias" => Tensor::zeros(r, c),
                _ => xavier(&mut rng, r, c),
            };
            params.add(name, t);
        }
        let ids = ParamIds::resolve(&params).expect("all parameters registered");
        Self { config, num_labels, vocab, params, ids }
    }

    /// Replaces the parameters (for example with a checkpoint), checking
    /// names and shapes.
    pub fn with_params(config: GmnConfig, num_labels: usize, vocab: Vocab, params: ParamSet<f32>) -> Result<Self, String> {
        for (name, shape) in param_shapes(&config, num_labels, vocab.len()) {
            let id = params.id_of(name).ok_or_else(|| format!("missing parameter {name}"))?;
            if params.get(id).shape() != shape {
                return Err(format!("parameter {name} has shape {:?}, expected {shape:?}", params.get(id).shape()));
            }
        }
        let ids = ParamIds::resolve(&params).ok_or("missing parameter")?;
        Ok(Self { config, num_labels, vocab, params, ids })
    }

    /// Writes `<path>` (binary checkpoint) and `<path>.json` (sidecar).
    pub fn save(&self, path: &Path, label_set_hash: &str, provenance: Option<Provenance>) -> Result<(), GmnError> {
        let f = File::create(path).map_err(|e| GmnError::Io { path: path.to_path_buf(), source: e })?;
        write_checkpoint(BufWriter::new(f), &self.params)?;
        let side = Sidecar {
            d_t: self.config.d_t,
            d_a: self.config.d_a,
            hidden: self.config.hidden,
            rounds: self.config.rounds,
            dropout: self.config.dropout,
            leaky_slope: self.config.leaky_slope,
            ln_eps: self.config.ln_eps,
            num_labels: self.num_labels,
            label_set_hash: label_set_hash.to_string(),
            vocab_hash: self.vocab.hash(),
            vocab: self.vocab.tokens.clone(),
            provenance,
        };
        let sp = sidecar_path(path);
        fs::write(&sp, serde_json::to_string_pretty(&side).expect("sidecar serializes") + "\n")
            .map_err(|e| GmnError::Io { path: sp, source: e })
    }

    pub fn load(path: &Path) -> Result<(Self, Sidecar), GmnError> {
        let sp = sidecar_path(path);
        let text = fs::read_to_string(&sp).map_err(|e| GmnError::Io { path: sp.clone(), source: e })?;
        let side: Sidecar =
            serde_json::from_str(&text).map_err(|e| GmnError::Format { path: sp.clone(), message: e.to_string() })?;
        let f = File::open(path).map_err(|e| GmnError::Io { path: path.to_path_buf(), source: e })?;
        let params = read_checkpoint(BufReader::new(f))?;
        let vocab = Vocab::new(side.vocab.clone());
        if vocab.hash() != side.vocab_hash {
            return Err(GmnError::Format { path: sp, message: "vocabulary hash mismatch".into() });
        }
        let model = Self::with_params(side.config(), side.num_labels, vocab, params)
            .map_err(|m| GmnError::Format { path: path.to_path_buf(), message: m })?;
        Ok((model, side))
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Hyperparameters stored next to a checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub d_t: usize,
    pub d_a: usize,
    pub hidden: usize,
    #[serde(rename = "T")]
    pub rounds: usize,
    pub dropout: f64,
    pub leaky_slope: f64,
    pub ln_eps: f64,
    pub num_labels: usize,
    pub label_set_hash: String,
    pub vocab_hash: String,
    pub vocab: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

impl Sidecar {
    pub fn config(&self) -> GmnConfig {
        GmnConfig {
            d_t: self.d_t,
            d_a: self.d_a,
            hidden: self.hidden,
            rounds: self.rounds,
            dropout: self.dropout,
            leaky_slope: self.leaky_slope,
            ln_eps: self.ln_eps,
        }
    }
}
