//! The universal label set and its application to parse trees.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::cluster::Partition;
use super::signature::normalize_type_name;
use super::{LabelKey, UnifyError};
use crate::interchange::{split_identifier, ParseTree};
use crate::provenance::{canonical_json, sha256_hex, Provenance};

pub const LABEL_SET_VERSION: u32 = 1;
pub const OTHER_ID: usize = 0;
pub const GLOBAL_ROOT_ID: usize = 1;
pub const OTHER_NAME: &str = "OTHER";
pub const GLOBAL_ROOT_NAME: &str = "GLOBAL_ROOT";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UniversalLabel {
    pub id: usize,
    pub name: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MappingEntry {
    pub language: String,
    pub type_name: String,
    pub label_id: usize,
}

/// Map from `(language, type_name)` to universal label ids.
///
/// Ids are dense: `0` is Other, `1` is the reserved global-root label (it
/// has no members; only structural enhancement assigns it), clusters follow.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct UniversalLabelSet {
    pub version: u32,
    pub threshold: f64,
    pub labels: Vec<UniversalLabel>,
    pub mapping: Vec<MappingEntry>,
    pub other_id: usize,
    pub global_root_id: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
    #[serde(skip)]
    index: HashMap<(String, String), usize>,
}

impl PartialEq for UniversalLabelSet {
    fn eq(&self, other: &Self) -> bool {
        self.version == other.version
            && self.threshold == other.threshold
            && self.labels == other.labels
            && self.mapping == other.mapping
            && self.other_id == other.other_id
            && self.global_root_id == other.global_root_id
    }
}

impl UniversalLabelSet {
    pub fn new(threshold: f64, labels: Vec<UniversalLabel>, mapping: Vec<MappingEntry>) -> Self {
        let mut s = Self {
            version: LABEL_SET_VERSION,
            threshold,
            labels,
            mapping,
            other_id: OTHER_ID,
            global_root_id: GLOBAL_ROOT_ID,
            provenance: None,
            index: HashMap::new(),
        };
        s.reindex();
        s
    }

    fn reindex(&mut self) {
        self.index = self.mapping.iter().map(|m| ((m.language.clone(), m.type_name.clone()), m.label_id)).collect();
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Label of a node type; unseen types fall back to Other.
    pub fn label_of(&self, language: &str, type_name: &str) -> usize {
        self.index.get(&(language.to_string(), type_name.to_string())).copied().unwrap_or(self.other_id)
    }

    pub fn contains(&self, language: &str, type_name: &str) -> bool {
        self.index.contains_key(&(language.to_string(), type_name.to_string()))
    }

    pub fn name_of(&self, id: usize) -> Option<&str> {
        self.labels.get(id).filter(|l| l.id == id).map(|l| l.name.as_str())
    }

    pub fn id_of_name(&self, name: &str) -> Option<usize> {
        self.labels.iter().find(|l| l.name == name).map(|l| l.id)
    }

    /// Members of every label.
    pub fn members(&self) -> BTreeMap<usize, Vec<LabelKey>> {
        let mut out: BTreeMap<usize, Vec<LabelKey>> = BTreeMap::new();
        for m in &self.mapping {
            out.entry(m.label_id).or_default().push(LabelKey::new(&m.language, &m.type_name));
        }
        out
    }

    /// SHA-256 over the label content (provenance excluded).
    pub fn content_hash(&self) -> String {
        let v = serde_json::json!({
            "version": self.version,
            "threshold": self.threshold,
            "labels": self.labels,
            "mapping": self.mapping,
            "other_id": self.other_id,
            "global_root_id": self.global_root_id,
        });
        sha256_hex(canonical_json(&v).as_bytes())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("label set serializes") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        let mut s: Self = serde_json::from_str(text)?;
        s.reindex();
        Ok(s)
    }

    pub fn save(&self, path: &Path) -> Result<(), UnifyError> {
        fs::write(path, self.to_json()).map_err(|e| UnifyError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, UnifyError> {
        let text = fs::read_to_string(path).map_err(|e| UnifyError::io(path, e))?;
        Self::from_json(&text).map_err(|e| UnifyError::schema(path, e))
    }
}

/// Frequency and context statistics of one node type.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct KeyStats {
    pub count: u64,
    pub distinct_parents: u64,
}

impl KeyStats {
    /// Distinct parent labels per occurrence; 0 for unseen keys.
    pub fn heterogeneity(&self) -> f64 {
        if self.count == 0 {
            0.0
        } else {
            self.distinct_parents as f64 / self.count as f64
        }
    }
}

/// Occurrence counts and distinct parent clusters per key. Parents are
/// identified by their cluster index in `partition`; the tree root's parent
/// is a sentinel distinct from every cluster.
pub fn key_stats(trees: &[ParseTree], partition: &Partition) -> BTreeMap<LabelKey, KeyStats> {
    let cluster = partition.cluster_of();
    let sentinel = usize::MAX;
    let mut parents: BTreeMap<LabelKey, (u64, BTreeSet<usize>)> = BTreeMap::new();
    for t in trees {
        let par = t.parents();
        for n in &t.nodes {
            let key = LabelKey::new(&t.language, &n.type_name);
            let p = match par[n.id] {
                Some(p) => cluster.get(&LabelKey::new(&t.language, &t.nodes[p].type_name)).copied().unwrap_or(sentinel - 1),
                None => sentinel,
            };
            let e = parents.entry(key).or_default();
            e.0 += 1;
            e.1.insert(p);
        }
    }
    parents.into_iter().map(|(k, (c, s))| (k, KeyStats { count: c, distinct_parents: s.len() as u64 })).collect()
}

fn display_name(members: &[LabelKey]) -> String {
    let smallest = members
        .iter()
        .min_by(|a, b| normalize_type_name(&a.type_name).cmp(&normalize_type_name(&b.type_name)).then(a.cmp(b)))
        .expect("cluster has members");
    let words = split_identifier(&smallest.type_name);
    if words.is_empty() {
        normalize_type_name(&smallest.type_name).to_uppercase()
    } else {
        words.join("_").to_uppercase()
    }
}

/// Assigns universal labels: keys seen fewer than `f_min` times or with
/// heterogeneity above `h_max` go to Other; every remaining key keeps its
/// cluster's label. Clusters left without members are dropped.
pub fn map_rare_to_other(
    partition: &Partition,
    stats: &BTreeMap<LabelKey, KeyStats>,
    f_min: u64,
    h_max: f64,
    threshold: f64,
) -> UniversalLabelSet {
    let mut labels = vec![
        UniversalLabel { id: OTHER_ID, name: OTHER_NAME.into() },
        UniversalLabel { id: GLOBAL_ROOT_ID, name: GLOBAL_ROOT_NAME.into() },
    ];
    let mut used: BTreeSet<String> = labels.iter().map(|l| l.name.clone()).collect();
    let mut mapping = Vec::new();
    for cluster in &partition.clusters {
        let (kept, dropped): (Vec<&LabelKey>, Vec<&LabelKey>) = cluster.iter().partition(|k| {
            let s = stats.get(*k).copied().unwrap_or_default();
            s.count >= f_min && s.heterogeneity() <= h_max
        });
        for k in dropped {
            mapping.push(MappingEntry { language: k.language.clone(), type_name: k.type_name.clone(), label_id: OTHER_ID });
        }
        if kept.is_empty() {
            continue;
        }
        let id = labels.len();
        let base = display_name(&kept.iter().map(|k| (*k).clone()).collect::<Vec<_>>());
        let mut name = base.clone();
        let mut n = 2;
        while used.contains(&name) {
            name = format!("{base}_{n}");
            n += 1;
        }
        used.insert(name.clone());
        labels.push(UniversalLabel { id, name });
        for k in kept {
            mapping.push(MappingEntry { language: k.language.clone(), type_name: k.type_name.clone(), label_id: id });
        }
    }
    mapping.sort_by(|a, b| (&a.language, &a.type_name).cmp(&(&b.language, &b.type_name)));
    UniversalLabelSet::new(threshold, labels, mapping)
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledNode {
    pub id: usize,
    pub type_name: String,
    pub label_id: usize,
    pub attrs: Vec<String>,
    pub children: Vec<usize>,
}

/// A parse tree annotated with universal labels; structure is unchanged.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabeledTree {
    pub language: String,
    pub source_id: String,
    pub root: usize,
    pub nodes: Vec<LabeledNode>,
}

pub fn apply_mapping(tree: &ParseTree, labels: &UniversalLabelSet) -> LabeledTree {
    LabeledTree {
        language: tree.language.clone(),
        source_id: tree.source_id.clone(),
        root: tree.root,
        nodes: tree
            .nodes
            .iter()
            .map(|n| LabeledNode {
                id: n.id,
                type_name: n.type_name.clone(),
                label_id: labels.label_of(&tree.language, &n.type_name),
                attrs: n.attrs.clone(),
                children: n.children.clone(),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn k(t: &str) -> LabelKey {
        LabelKey::new("java", t)
    }

    fn stats(entries: &[(&str, u64, u64)]) -> BTreeMap<LabelKey, KeyStats> {
        entries.iter().map(|&(t, c, d)| (k(t), KeyStats { count: c, distinct_parents: d })).collect()
    }

    #[test]
    fn frequency_and_heterogeneity_gates() {
        let p = Partition::singletons(&[k("Rare"), k("Common"), k("Scattered")]);
        let s = stats(&[("Rare", 3, 1), ("Common", 1000, 2), ("Scattered", 10, 10)]);
        let l = map_rare_to_other(&p, &s, 10, 0.9, 0.75);
        assert_eq!(l.label_of("java", "Rare"), OTHER_ID);
        assert_eq!(l.label_of("java", "Scattered"), OTHER_ID);
        let c = l.label_of("java", "Common");
        assert!(c > GLOBAL_ROOT_ID);
        assert_eq!(l.name_of(c), Some("COMMON"));
        assert_eq!(l.len(), 3);
    }

    #[test]
    fn display_names_are_upper_snake_and_unique() {
        let p = Partition::from_groups(vec![vec![k("ForStatement"), LabelKey::new("py", "for_statement")], vec![k("for_statement_x")]]);
        let s: BTreeMap<_, _> =
            p.clusters.iter().flatten().map(|key| (key.clone(), KeyStats { count: 50, distinct_parents: 1 })).collect();
        let l = map_rare_to_other(&p, &s, 10, 0.9, 0.75);
        let names: Vec<_> = l.labels.iter().map(|x| x.name.as_str()).collect();
        assert!(names.contains(&"FOR_STATEMENT"), "{names:?}");
        assert!(names.contains(&"FOR_STATEMENT_X"), "{names:?}");
    }

    #[test]
    fn json_round_trip_keeps_lookup() {
        let p = Partition::singletons(&[k("A")]);
        let l = map_rare_to_other(&p, &stats(&[("A", 20, 1)]), 10, 0.9, 0.75);
        let back = UniversalLabelSet::from_json(&l.to_json()).unwrap();
        assert_eq!(back, l);
        assert_eq!(back.label_of("java", "A"), 2);
        assert_eq!(back.label_of("java", "Unseen"), OTHER_ID);
        assert_eq!(back.content_hash(), l.content_hash());
    }
}
