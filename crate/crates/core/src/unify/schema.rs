//! Grammar schemas: per node type, the declared fields, admissible child
//! types, optional/repeatable constraints and arity.
//!
//! Two on-disk forms are accepted: the native form
//! `{"language": ..., "node_specs": {type: NodeSpec}}` and tree-sitter's
//! `node-types.json` array (language taken from the file stem).

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::UnifyError;
use crate::interchange::ParseTree;

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct NodeSpec {
    #[serde(default)]
    pub field_names: Vec<String>,
    #[serde(default)]
    pub child_types: Vec<String>,
    #[serde(default)]
    pub optional_flags: Vec<bool>,
    #[serde(default)]
    pub repeatable_flags: Vec<bool>,
    #[serde(default)]
    pub arity_min: usize,
    /// `None` is unbounded.
    #[serde(default)]
    pub arity_max: Option<usize>,
}

impl NodeSpec {
    pub fn arity(&self) -> (usize, Option<usize>) {
        (self.arity_min, self.arity_max)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct GrammarSchema {
    pub language: String,
    pub node_specs: BTreeMap<String, NodeSpec>,
}

/// Closed-interval overlap with `None` as +∞.
pub fn arity_overlaps(a: (usize, Option<usize>), b: (usize, Option<usize>)) -> bool {
    a.1.is_none_or(|amax| b.0 <= amax) && b.1.is_none_or(|bmax| a.0 <= bmax)
}

#[derive(Deserialize)]
struct TsType {
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    named: bool,
}

#[derive(Deserialize)]
struct TsChildren {
    #[serde(default)]
    multiple: bool,
    #[serde(default)]
    required: bool,
    #[serde(default)]
    types: Vec<TsType>,
}

#[derive(Deserialize)]
struct TsNode {
    #[serde(rename = "type")]
    ty: String,
    #[serde(default)]
    named: bool,
    #[serde(default)]
    fields: BTreeMap<String, TsChildren>,
    children: Option<TsChildren>,
}

/// Converts tree-sitter `node-types.json` content. Anonymous (unnamed)
/// node types are skipped; supertypes without fields become empty specs.
pub fn from_node_types(language: &str, text: &str) -> Result<GrammarSchema, serde_json::Error> {
    let nodes: Vec<TsNode> = serde_json::from_str(text)?;
    let mut specs = BTreeMap::new();
    for n in nodes.into_iter().filter(|n| n.named) {
        let mut spec = NodeSpec::default();
        let mut child_types = BTreeSet::new();
        let mut unbounded = false;
        let mut max = 0usize;
        let groups = n.fields.iter().map(|(k, v)| (Some(k.as_str()), v)).chain(n.children.iter().map(|c| (None, c)));
        for (field, c) in groups {
            if let Some(f) = field {
                spec.field_names.push(f.to_string());
            }
            spec.optional_flags.push(!c.required);
            spec.repeatable_flags.push(c.multiple);
            if c.required {
                spec.arity_min += 1;
            }
            if c.multiple {
                unbounded = true;
            } else {
                max += 1;
            }
            child_types.extend(c.types.iter().filter(|t| t.named).map(|t| t.ty.clone()));
        }
        spec.child_types = child_types.into_iter().collect();
        spec.arity_max = if unbounded { None } else { Some(max) };
        specs.insert(n.ty, spec);
    }
    Ok(GrammarSchema { language: language.to_string(), node_specs: specs })
}

/// Loads one schema file in either supported form.
pub fn load_schema(path: &Path) -> Result<GrammarSchema, UnifyError> {
    let text = fs::read_to_string(path).map_err(|e| UnifyError::io(path, e))?;
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let language = stem.strip_suffix(".node-types").or_else(|| stem.strip_suffix("-node-types")).unwrap_or(&stem);
    if text.trim_start().starts_with('[') {
        from_node_types(language, &text).map_err(|e| UnifyError::schema(path, e))
    } else {
        serde_json::from_str(&text).map_err(|e| UnifyError::schema(path, e))
    }
}

/// Loads every `*.json` file of a directory, keyed by language.
pub fn load_schema_dir(dir: &Path) -> Result<BTreeMap<String, GrammarSchema>, UnifyError> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = fs::read_dir(dir)
        .map_err(|e| UnifyError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "json"))
        .collect();
    paths.sort();
    for p in paths {
        let s = load_schema(&p)?;
        out.insert(s.language.clone(), s);
    }
    Ok(out)
}

pub fn write_schema(path: &Path, schema: &GrammarSchema) -> Result<(), UnifyError> {
    let text = serde_json::to_string_pretty(schema).expect("schema serializes");
    fs::write(path, text + "\n").map_err(|e| UnifyError::io(path, e))
}

/// Adds a default spec for every type observed in `trees` but absent from
/// its language's schema. The default lists the observed child types and
/// the observed child-count range; it declares no fields.
pub fn complete_schemas(schemas: &mut BTreeMap<String, GrammarSchema>, trees: &[ParseTree]) {
    let mut observed: BTreeMap<(String, String), (BTreeSet<String>, usize, usize)> = BTreeMap::new();
    for t in trees {
        for n in &t.nodes {
            let e = observed
                .entry((t.language.clone(), n.type_name.clone()))
                .or_insert_with(|| (BTreeSet::new(), usize::MAX, 0));
            e.0.extend(n.children.iter().map(|&c| t.nodes[c].type_name.clone()));
            e.1 = e.1.min(n.children.len());
            e.2 = e.2.max(n.children.len());
        }
    }
    for ((lang, ty), (children, lo, hi)) in observed {
        let schema = schemas
            .entry(lang.clone())
            .or_insert_with(|| GrammarSchema { language: lang.clone(), node_specs: BTreeMap::new() });
        schema.node_specs.entry(ty).or_insert_with(|| NodeSpec {
            child_types: children.into_iter().collect(),
            arity_min: lo,
            arity_max: Some(hi),
            ..NodeSpec::default()
        });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn node_types_conversion() {
        let text = r#"[
          {"type": "for_statement", "named": true,
           "fields": {"body": {"multiple": false, "required": true, "types": [{"type": "block", "named": true}]},
                      "left": {"multiple": false, "required": false, "types": [{"type": "identifier", "named": true}]}}},
          {"type": "block", "named": true,
           "children": {"multiple": true, "required": false, "types": [{"type": "statement", "named": true}, {"type": ";", "named": false}]}},
          {"type": "for", "named": false}
        ]"#;
        let s = from_node_types("py", text).unwrap();
        assert_eq!(s.node_specs.len(), 2);
        let f = &s.node_specs["for_statement"];
        assert_eq!(f.field_names, vec!["body", "left"]);
        assert_eq!(f.child_types, vec!["block", "identifier"]);
        assert_eq!(f.optional_flags, vec![false, true]);
        assert_eq!(f.arity(), (1, Some(2)));
        let b = &s.node_specs["block"];
        assert_eq!(b.arity(), (0, None));
        assert_eq!(b.child_types, vec!["statement"]);
    }

    #[test]
    fn overlap_with_unbounded_ranges() {
        assert!(arity_overlaps((0, None), (5, Some(5))));
        assert!(arity_overlaps((1, Some(2)), (2, Some(3))));
        assert!(!arity_overlaps((0, Some(1)), (2, None)));
        assert!(!arity_overlaps((3, Some(3)), (0, Some(2))));
    }
}
