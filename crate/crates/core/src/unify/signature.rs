//! Language-agnostic node-type signatures.
//!
//! Layout of the 512-dim vector:
//! - `[0, 256)`: hashed character trigrams of the normalized type name;
//! - `[256, 448)`: hashed trigrams of field names and child type names;
//! - `[448, 512)`: one-hot structural buckets.
//!
//! Each block is L2-normalized, scaled by its weight, and the whole vector
//! is normalized again.

use serde::{Deserialize, Serialize};

use super::schema::NodeSpec;
use super::{LabelKey, UnifyError};

pub const SIGNATURE_DIM: usize = 512;
pub const NAME_BINS: usize = 256;
pub const SCHEMA_BINS: usize = 192;
pub const STRUCT_BINS: usize = 64;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignatureWeights {
    pub name: f64,
    pub schema: f64,
    pub structure: f64,
}

impl Default for SignatureWeights {
    fn default() -> Self {
        Self { name: 1.0, schema: 0.5, structure: 0.3 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NodeSignature {
    pub key: LabelKey,
    pub feature_vector: Vec<f64>,
}

/// Lowercases and drops every non-alphanumeric character:
/// `ForStatement` and `for_statement` both become `forstatement`.
pub fn normalize_type_name(name: &str) -> String {
    name.chars().filter(|c| c.is_alphanumeric()).flat_map(char::to_lowercase).collect()
}

/// 64-bit FNV-1a.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0100_0000_01b3);
    }
    h
}

/// Character trigrams of `^s$`; a string of length ≥ 1 always yields at
/// least one trigram.
pub fn trigrams(s: &str) -> Vec<String> {
    if s.is_empty() {
        return Vec::new();
    }
    let chars: Vec<char> = std::iter::once('^').chain(s.chars()).chain(std::iter::once('$')).collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

fn hash_into(block: &mut [f64], tag: u8, gram: &str) {
    let mut bytes = Vec::with_capacity(gram.len() + 1);
    bytes.push(tag);
    bytes.extend_from_slice(gram.as_bytes());
    let idx = (fnv1a(&bytes) % block.len() as u64) as usize;
    block[idx] += 1.0;
}

fn normalize(v: &mut [f64]) -> bool {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
        true
    } else {
        false
    }
}

/// Bucket index for small counts: 0,1,2,3,4–5,6–9,10+.
fn count_bucket(n: usize) -> usize {
    match n {
        0..=3 => n,
        4..=5 => 4,
        6..=9 => 5,
        _ => 6,
    }
}

fn structural_block(spec: &NodeSpec) -> [f64; STRUCT_BINS] {
    let mut b = [0.0; STRUCT_BINS];
    b[count_bucket(spec.arity_min)] = 1.0;
    b[8 + spec.arity_max.map_or(7, count_bucket)] = 1.0;
    b[16 + count_bucket(spec.optional_flags.iter().filter(|&&f| f).count())] = 1.0;
    b[24 + count_bucket(spec.repeatable_flags.iter().filter(|&&f| f).count())] = 1.0;
    b[32 + count_bucket(spec.field_names.len())] = 1.0;
    b[40 + count_bucket(spec.child_types.len())] = 1.0;
    b
}

/// Builds the unit-norm signature of `key` from its grammar spec.
pub fn build_signature(key: &LabelKey, spec: &NodeSpec, weights: SignatureWeights) -> Result<NodeSignature, UnifyError> {
    let mut name = vec![0.0; NAME_BINS];
    for g in trigrams(&normalize_type_name(&key.type_name)) {
        hash_into(&mut name, b'n', &g);
    }
    let mut schema = vec![0.0; SCHEMA_BINS];
    for f in &spec.field_names {
        for g in trigrams(&normalize_type_name(f)) {
            hash_into(&mut schema, b'f', &g);
        }
    }
    for c in &spec.child_types {
        for g in trigrams(&normalize_type_name(c)) {
            hash_into(&mut schema, b'c', &g);
        }
    }
    let mut structure = structural_block(spec).to_vec();
    let has_name = normalize(&mut name);
    let has_schema = normalize(&mut schema);
    normalize(&mut structure);
    if !has_name && !has_schema {
        return Err(UnifyError::EmptySignature(key.clone()));
    }
    let mut v = Vec::with_capacity(SIGNATURE_DIM);
    v.extend(name.iter().map(|x| x * weights.name));
    v.extend(schema.iter().map(|x| x * weights.schema));
    v.extend(structure.iter().map(|x| x * weights.structure));
    if !normalize(&mut v) {
        return Err(UnifyError::EmptySignature(key.clone()));
    }
    Ok(NodeSignature { key: key.clone(), feature_vector: v })
}

/// Cosine similarity clamped to `[-1, 1]`; 0 when either side is zero.
pub fn cosine(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len(), "cosine over vectors of different length");
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        return 0.0;
    }
    (dot / (na * nb)).clamp(-1.0, 1.0)
}

/// Free text handed to an external embedding service for one node type.
pub fn describe(key: &LabelKey, spec: &NodeSpec) -> String {
    let mut s = crate::interchange::split_identifier(&key.type_name).join(" ");
    if !spec.field_names.is_empty() {
        s.push_str(" fields: ");
        s.push_str(&spec.field_names.join(", "));
    }
    if !spec.child_types.is_empty() {
        s.push_str(" children: ");
        s.push_str(&spec.child_types.join(", "));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn key(l: &str, t: &str) -> LabelKey {
        LabelKey::new(l, t)
    }

    #[test]
    fn normalization_unifies_case_and_delimiters() {
        assert_eq!(normalize_type_name("ForStatement"), "forstatement");
        assert_eq!(normalize_type_name("for_statement"), "forstatement");
        assert_eq!(normalize_type_name("FOR-STATEMENT"), "forstatement");
    }

    #[test]
    fn fnv_reference_values() {
        assert_eq!(fnv1a(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a(b"a"), 0xaf63dc4c8601ec8c);
    }

    #[test]
    fn trigrams_are_padded() {
        assert_eq!(trigrams("ab"), vec!["^ab", "ab$"]);
        assert_eq!(trigrams("x"), vec!["^x$"]);
        assert!(trigrams("").is_empty());
    }

    #[test]
    fn signature_is_unit_norm_and_empty_is_error() {
        let s = build_signature(&key("java", "Foo"), &NodeSpec::default(), SignatureWeights::default()).unwrap();
        assert_eq!(s.feature_vector.len(), SIGNATURE_DIM);
        let n: f64 = s.feature_vector.iter().map(|x| x * x).sum();
        assert!((n - 1.0).abs() < 1e-12);
        let e = build_signature(&key("java", "__"), &NodeSpec::default(), SignatureWeights::default());
        assert!(matches!(e, Err(UnifyError::EmptySignature(_))));
    }

    #[test]
    fn cosine_of_hand_vectors() {
        let h = std::f64::consts::FRAC_1_SQRT_2;
        assert!((cosine(&[1.0, 0.0], &[h, h]) - h).abs() < 1e-12);
        assert_eq!(cosine(&[1.0, 0.0], &[0.0, 2.0]), 0.0);
    }
}
