//! Persistent store of graph-level vectors.
//!
//! Binary layout, all integers little-endian `u32`:
//! `EMBIDX1`, dim, metadata length, metadata JSON (corpus id and
//! provenance), entry count, then per entry: id length, id bytes and `dim`
//! `f32` values.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TrainError;
use crate::gmn::encode::cosine_f32;
use crate::provenance::Provenance;

pub const INDEX_MAGIC: &[u8; 7] = b"EMBIDX1";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IndexMeta {
    pub corpus_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingIndex {
    pub dim: usize,
    pub meta: IndexMeta,
    /// `(graph id, vector)` sorted by id.
    pub entries: Vec<(String, Vec<f32>)>,
}

/// Key parts of a `task/language/snippet` id.
pub fn split_graph_id(id: &str) -> (&str, &str, &str) {
    let mut it = id.splitn(3, '/');
    (it.next().unwrap_or(""), it.next().unwrap_or(""), it.next().unwrap_or(""))
}

fn put_u32(out: &mut Vec<u8>, x: usize) {
    out.extend_from_slice(&u32::try_from(x).expect("index field fits u32").to_le_bytes());
}

fn bad(path: &Path, message: impl Into<String>) -> TrainError {
    TrainError::Format { path: path.to_path_buf(), message: message.into() }
}

impl EmbeddingIndex {
    pub fn new(dim: usize, meta: IndexMeta, mut entries: Vec<(String, Vec<f32>)>) -> Result<Self, String> {
        entries.sort_by(|a, b| a.0.cmp(&b.0));
        if let Some((id, v)) = entries.iter().find(|(_, v)| v.len() != dim) {
            return Err(format!("{id}: vector has {} components, index dim is {dim}", v.len()));
        }
        if entries.windows(2).any(|w| w[0].0 == w[1].0) {
            return Err("duplicate id in index".into());
        }
        Ok(Self { dim, meta, entries })
    }

    pub fn get(&self, id: &str) -> Option<&[f32]> {
        self.entries.binary_search_by(|e| e.0.as_str().cmp(id)).ok().map(|i| self.entries[i].1.as_slice())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(INDEX_MAGIC);
        put_u32(&mut out, self.dim);
        let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
        put_u32(&mut out, meta.len());
        out.extend_from_slice(&meta);
        put_u32(&mut out, self.entries.len());
        for (id, v) in &self.entries {
            put_u32(&mut out, id.len());
            out.extend_from_slice(id.as_bytes());
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self, TrainError> {
        let mut r = bytes;
        let mut magic = [0u8; 7];
        r.read_exact(&mut magic).map_err(|_| bad(path, "truncated header"))?;
        if &magic != INDEX_MAGIC {
            return Err(bad(path, "not an EMBIDX1 file"));
        }
        let u32_at = |r: &mut &[u8]| -> Result<usize, TrainError> {
            let mut b = [0u8; 4];
            r.read_exact(&mut b).map_err(|_| bad(path, "truncated index"))?;
            Ok(u32::from_le_bytes(b) as usize)
        };
        let dim = u32_at(&mut r)?;
        let meta_len = u32_at(&mut r)?;
        if r.len() < meta_len {
            return Err(bad(path, "truncated metadata"));
        }
        let meta: IndexMeta = serde_json::from_slice(&r[..meta_len]).map_err(|e| bad(path, e.to_string()))?;
        r = &r[meta_len..];
        let count = u32_at(&mut r)?;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let len = u32_at(&mut r)?;
            if r.len() < len + 4 * dim {
                return Err(bad(path, "truncated entry"));
            }
            let id = String::from_utf8(r[..len].to_vec()).map_err(|e| bad(path, e.to_string()))?;
            r = &r[len..];
            let v: Vec<f32> =
                r[..4 * dim].chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            r = &r[4 * dim..];
            entries.push((id, v));
        }
        if !r.is_empty() {
            return Err(bad(path, "trailing bytes"));
        }
        Self::new(dim, meta, entries).map_err(|m| bad(path, m))
    }

    pub fn save(&self, path: &Path) -> Result<(), TrainError> {
        super::write_file(path, &self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, TrainError> {
        let bytes = fs::read(path).map_err(|e| TrainError::Io { path: path.to_path_buf(), source: e })?;
        Self::from_bytes(&bytes, path)
    }

    /// Entries ranked by cosine to `query` (ties by id), filtered by `keep`.
    pub fn search<F: Fn(&str) -> bool>(&self, query: &[f32], keep: F) -> Vec<(String, f32)> {
        let mut out: Vec<(String, f32)> =
            self.entries.iter().filter(|(id, _)| keep(id)).map(|(id, v)| (id.clone(), cosine_f32(query, v))).collect();
        out.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        out
    }

    /// Tab-separated vectors (one row per entry) and metadata with a header
    /// row, in the layout embedding projectors read.
    pub fn write_tsv<W1: Write, W2: Write>(&self, mut vectors: W1, mut metadata: W2) -> std::io::Result<()> {
        writeln!(metadata, "id\ttask\tlanguage\tsnippet")?;
        for (id, v) in &self.entries {
            let (task, lang, snippet) = split_graph_id(id);
            writeln!(metadata, "{id}\t{task}\t{lang}\t{snippet}")?;
            let row: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
            writeln!(vectors, "{}", row.join("\t"))?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bytes_round_trip() {
        let idx = EmbeddingIndex::new(
            2,
            IndexMeta { corpus_id: "c".into(), provenance: None },
            vec![("b/x/1".into(), vec![0.5, -1.0]), ("a/y/2".into(), vec![1.0, 2.0])],
        )
        .unwrap();
        let bytes = idx.to_bytes();
        assert_eq!(&bytes[..7], b"EMBIDX1");
        let back = EmbeddingIndex::from_bytes(&bytes, Path::new("x")).unwrap();
        assert_eq!(back, idx);
        assert_eq!(back.get("a/y/2"), Some(&[1.0f32, 2.0][..]));
        assert!(EmbeddingIndex::from_bytes(&bytes[..bytes.len() - 1], Path::new("x")).is_err());
    }

    #[test]
    fn graph_id_parts() {
        assert_eq!(split_graph_id("t1/java/v0"), ("t1", "java", "v0"));
    }
}
