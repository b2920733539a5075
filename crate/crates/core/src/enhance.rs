//! Structural enhancement of labeled trees: a global root anchoring all
//! top-level constructs, key-node flags, and ratio-controlled edge pruning.
//!
//! Edges are unordered from here on. Node ids of the input tree are kept;
//! the global root takes id `N`. Pruning drops nodes left isolated, so ids
//! of a pruned graph need not be dense.

use std::collections::{BTreeSet, HashMap, VecDeque};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::interchange::{split_identifier, tokenize_attrs};
use crate::provenance::{derive_seed, Provenance};
use crate::unify::signature::normalize_type_name;
use crate::unify::{LabeledTree, UniversalLabelSet};

pub const DEFAULT_PRUNE_RATIO: f64 = 0.4;

/// Root types treated as file-level wrappers whose children are the real
/// top-level constructs (compared after name normalization).
pub const WRAPPER_TYPES: &[&str] =
    &["module", "program", "compilationunit", "translationunit", "sourcefile", "file", "script"];

/// Default key-label policy. An entry selects every universal label whose
/// name tokens include all of the entry's tokens.
pub const DEFAULT_KEY_POLICY: &[&str] = &[
    "FOR", "FOREACH", "WHILE", "DO", "LOOP", "IF", "CONDITIONAL", "SWITCH", "MATCH", "CASE", "TRY", "CATCH", "FUNC_DEF",
    "FUNCTION", "METHOD", "DEF", "LAMBDA", "CONSTRUCTOR", "VAR_DECL", "VARIABLE", "DECLARATOR", "DECLARATION",
    "CLASS", "CLASS_DECL", "STRUCT", "INTERFACE", "RETURN", "CALL", "INVOCATION", "CONST_NUM", "CONST_STR", "INTEGER",
    "NUMBER", "FLOAT", "LITERAL", "STRING", "TYPE_REF", "TYPE",
];

#[derive(Debug, Error)]
pub enum EnhanceError {
    #[error("{path}: i/o error: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
    #[error("pruning ratio {0} outside [0, 1)")]
    BadRatio(f64),
    #[error("key policy selects no label")]
    EmptyPolicy,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedNode {
    pub id: usize,
    pub universal_label_id: usize,
    pub attr_tokens: Vec<String>,
    pub is_key: bool,
    pub is_global_root: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnifiedAst {
    pub graph_id: String,
    pub language: String,
    pub task_id: String,
    pub nodes: Vec<UnifiedNode>,
    /// Unordered pairs stored as `(min, max)`, sorted, without duplicates.
    pub edges: Vec<(usize, usize)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub provenance: Option<Provenance>,
}

fn canon(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl UnifiedAst {
    /// Converts a labeled tree; parent-child links become unordered edges.
    pub fn from_labeled(tree: &LabeledTree, graph_id: &str, task_id: &str, max_attr_tokens: usize) -> Self {
        let nodes = tree
            .nodes
            .iter()
            .map(|n| UnifiedNode {
                id: n.id,
                universal_label_id: n.label_id,
                attr_tokens: tokenize_attrs(&n.attrs, max_attr_tokens),
                is_key: false,
                is_global_root: false,
            })
            .collect();
        let mut edges: Vec<_> = tree.nodes.iter().flat_map(|n| n.children.iter().map(move |&c| canon(n.id, c))).collect();
        edges.sort_unstable();
        edges.dedup();
        Self {
            graph_id: graph_id.to_string(),
            language: tree.language.clone(),
            task_id: task_id.to_string(),
            nodes,
            edges,
            provenance: None,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Node id → position in `nodes`.
    pub fn positions(&self) -> HashMap<usize, usize> {
        self.nodes.iter().enumerate().map(|(i, n)| (n.id, i)).collect()
    }

    /// Neighbor positions per node position (sorted).
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let pos = self.positions();
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            let (pa, pb) = (pos[&a], pos[&b]);
            adj[pa].push(pb);
            adj[pb].push(pa);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn global_root(&self) -> Option<usize> {
        self.nodes.iter().find(|n| n.is_global_root).map(|n| n.id)
    }

    /// True when every node is reachable from the first node (or the global
    /// root when present).
    pub fn is_connected(&self) -> bool {
        if self.nodes.is_empty() {
            return true;
        }
        let adj = self.adjacency();
        let start = self.global_root().map_or(0, |r| self.positions()[&r]);
        let mut seen = vec![false; self.nodes.len()];
        seen[start] = true;
        let mut q = VecDeque::from([start]);
        let mut count = 1;
        while let Some(u) = q.pop_front() {
            for &v in &adj[u] {
                if !seen[v] {
                    seen[v] = true;
                    count += 1;
                    q.push_back(v);
                }
            }
        }
        count == self.nodes.len()
    }

    /// Checks ids, edges and the single-global-root rule.
    pub fn validate(&self) -> Result<(), String> {
        let pos = self.positions();
        if pos.len() != self.nodes.len() {
            return Err("duplicate node id".into());
        }
        let mut seen = BTreeSet::new();
        for &(a, b) in &self.edges {
            if a == b {
                return Err(format!("self-loop on {a}"));
            }
            if a > b {
                return Err(format!("edge ({a}, {b}) not canonical"));
            }
            if !pos.contains_key(&a) || !pos.contains_key(&b) {
                return Err(format!("edge ({a}, {b}) references a missing node"));
            }
            if !seen.insert((a, b)) {
                return Err(format!("duplicate edge ({a}, {b})"));
            }
        }
        let roots = self.nodes.iter().filter(|n| n.is_global_root).count();
        if roots != 1 {
            return Err(format!("{roots} global roots"));
        }
        if !self.is_connected() {
            return Err("graph is disconnected".into());
        }
        Ok(())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("graph serializes") + "\n"
    }

    pub fn save(&self, path: &Path) -> Result<(), EnhanceError> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| EnhanceError::Io { path: dir.to_path_buf(), source: e })?;
        }
        fs::write(path, self.to_json()).map_err(|e| EnhanceError::Io { path: path.to_path_buf(), source: e })
    }

    pub fn load(path: &Path) -> Result<Self, EnhanceError> {
        let text = fs::read_to_string(path).map_err(|e| EnhanceError::Io { path: path.to_path_buf(), source: e })?;
        let g: Self = serde_json::from_str(&text)
            .map_err(|e| EnhanceError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        g.validate().map_err(|m| EnhanceError::Format { path: path.to_path_buf(), message: m })?;
        Ok(g)
    }
}

pub fn is_wrapper_type(type_name: &str) -> bool {
    WRAPPER_TYPES.contains(&normalize_type_name(type_name).as_str())
}

/// Adds the global root with id `N` (one past the largest id) and links it
/// to the original root. With `collapse_wrapper`, the root's children are
/// re-attached to the global root and the wrapper stays as a leaf under it.
/// A graph that already has a global root is returned unchanged.
pub fn insert_global_root(mut g: UnifiedAst, root: usize, global_label: usize, collapse_wrapper: bool) -> UnifiedAst {
    if g.global_root().is_some() {
        return g;
    }
    let gid = g.nodes.iter().map(|n| n.id + 1).max().unwrap_or(0);
    if collapse_wrapper {
        let children: Vec<usize> = g
            .edges
            .iter()
            .filter_map(|&(a, b)| if a == root { Some(b) } else if b == root { Some(a) } else { None })
            .collect();
        g.edges.retain(|&(a, b)| a != root && b != root);
        g.edges.extend(children.into_iter().map(|c| canon(c, gid)));
    }
    g.edges.push(canon(root, gid));
    g.edges.sort_unstable();
    g.edges.dedup();
    g.nodes.push(UnifiedNode {
        id: gid,
        universal_label_id: global_label,
        attr_tokens: Vec::new(),
        is_key: false,
        is_global_root: true,
    });
    g
}

/// Set of universal labels whose incident edges are protected.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct KeyNodePolicy {
    pub key_label_ids: BTreeSet<usize>,
}

fn name_tokens(name: &str) -> BTreeSet<String> {
    split_identifier(name).into_iter().collect()
}

impl KeyNodePolicy {
    /// Resolves policy entries against label names: an entry matches a label
    /// when every token of the entry occurs among the label's name tokens.
    pub fn from_names<S: AsRef<str>>(names: &[S], labels: &UniversalLabelSet) -> Result<Self, EnhanceError> {
        let entries: Vec<BTreeSet<String>> =
            names.iter().map(|n| name_tokens(n.as_ref())).filter(|t| !t.is_empty()).collect();
        let key_label_ids: BTreeSet<usize> = labels
            .labels
            .iter()
            .filter(|l| l.id != labels.other_id && l.id != labels.global_root_id)
            .filter(|l| {
                let toks = name_tokens(&l.name);
                entries.iter().any(|e| e.is_subset(&toks))
            })
            .map(|l| l.id)
            .collect();
        if key_label_ids.is_empty() {
            return Err(EnhanceError::EmptyPolicy);
        }
        Ok(Self { key_label_ids })
    }

    pub fn default_for(labels: &UniversalLabelSet) -> Result<Self, EnhanceError> {
        Self::from_names(DEFAULT_KEY_POLICY, labels)
    }

    /// Reads a JSON list of label names.
    pub fn load(path: &Path, labels: &UniversalLabelSet) -> Result<Self, EnhanceError> {
        let text = fs::read_to_string(path).map_err(|e| EnhanceError::Io { path: path.to_path_buf(), source: e })?;
        let names: Vec<String> = serde_json::from_str(&text)
            .map_err(|e| EnhanceError::Format { path: path.to_path_buf(), message: e.to_string() })?;
        Self::from_names(&names, labels)
    }
}

pub fn classify_key_nodes(mut g: UnifiedAst, policy: &KeyNodePolicy) -> UnifiedAst {
    for n in &mut g.nodes {
        n.is_key = !n.is_global_root && policy.key_label_ids.contains(&n.universal_label_id);
    }
    g
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneConfig {
    pub ratio: f64,
    pub seed: u64,
}

impl Default for PruneConfig {
    fn default() -> Self {
        Self { ratio: DEFAULT_PRUNE_RATIO, seed: 0 }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct PruneReport {
    pub protected: Vec<(usize, usize)>,
    pub deletable: Vec<(usize, usize)>,
    pub target: usize,
    pub removed: Vec<(usize, usize)>,
    pub dropped_nodes: Vec<usize>,
}

/// Edges incident to the global root, to a key node, or to a first-order
/// neighbor of a key node.
pub fn protected_edges(g: &UnifiedAst) -> BTreeSet<(usize, usize)> {
    let mut guarded: BTreeSet<usize> = BTreeSet::new();
    for n in g.nodes.iter().filter(|n| n.is_key || n.is_global_root) {
        guarded.insert(n.id);
    }
    let keys: BTreeSet<usize> = g.nodes.iter().filter(|n| n.is_key).map(|n| n.id).collect();
    for &(a, b) in &g.edges {
        if keys.contains(&a) {
            guarded.insert(b);
        }
        if keys.contains(&b) {
            guarded.insert(a);
        }
    }
    g.edges.iter().copied().filter(|(a, b)| guarded.contains(a) || guarded.contains(b)).collect()
}

/// True when, without `edge`, every node that still has an edge is
/// reachable from the global root. Nodes left with no edge at all are
/// acceptable: they are dropped.
fn removal_keeps_connected(g: &UnifiedAst, alive: &[(usize, usize)], edge: (usize, usize)) -> bool {
    let pos = g.positions();
    let mut adj = vec![Vec::new(); g.nodes.len()];
    for &(a, b) in alive.iter().filter(|&&e| e != edge) {
        adj[pos[&a]].push(pos[&b]);
        adj[pos[&b]].push(pos[&a]);
    }
    let start = g.global_root().map_or(0, |r| pos[&r]);
    let mut seen = vec![false; g.nodes.len()];
    seen[start] = true;
    let mut q = VecDeque::from([start]);
    while let Some(u) = q.pop_front() {
        for &v in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                q.push_back(v);
            }
        }
    }
    (0..g.nodes.len()).all(|i| seen[i] || (adj[i].is_empty() && i != start))
}

/// Removes up to `floor(ratio·|D|)` unprotected edges in seeded random
/// order, skipping any removal that would split the graph, then drops nodes
/// left without edges. Skipped candidates are retried after later removals
/// until a full pass makes no progress.
pub fn prune(g: &UnifiedAst, cfg: PruneConfig) -> Result<(UnifiedAst, PruneReport), EnhanceError> {
    if !(0.0..1.0).contains(&cfg.ratio) {
        return Err(EnhanceError::BadRatio(cfg.ratio));
    }
    let protected = protected_edges(g);
    let mut deletable: Vec<(usize, usize)> = g.edges.iter().copied().filter(|e| !protected.contains(e)).collect();
    let target = (cfg.ratio * deletable.len() as f64).floor() as usize;
    let mut order = deletable.clone();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    let mut alive: Vec<(usize, usize)> = g.edges.clone();
    let mut removed = Vec::new();
    let mut pending = order;
    while removed.len() < target {
        let mut skipped = Vec::new();
        let before = removed.len();
        for e in pending {
            if removed.len() < target && removal_keeps_connected(g, &alive, e) {
                alive.retain(|&x| x != e);
                removed.push(e);
            } else {
                skipped.push(e);
            }
        }
        pending = skipped;
        if removed.len() == before {
            break;
        }
    }
    let mut out = g.clone();
    out.edges = alive;
    let degree: BTreeSet<usize> = out.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    let dropped: Vec<usize> =
        out.nodes.iter().filter(|n| !n.is_global_root && !degree.contains(&n.id)).map(|n| n.id).collect();
    if !dropped.is_empty() {
        out.nodes.retain(|n| n.is_global_root || degree.contains(&n.id));
    }
    deletable.sort_unstable();
    let report = PruneReport { protected: protected.into_iter().collect(), deletable, target, removed, dropped_nodes: dropped };
    Ok((out, report))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnhanceConfig {
    pub ratio: f64,
    pub seed: u64,
    pub max_attr_tokens: usize,
    pub collapse_wrappers: bool,
}

impl Default for EnhanceConfig {
    fn default() -> Self {
        Self {
            ratio: DEFAULT_PRUNE_RATIO,
            seed: 17,
            max_attr_tokens: crate::interchange::DEFAULT_MAX_ATTR_TOKENS,
            collapse_wrappers: true,
        }
    }
}

/// Full enhancement of one labeled tree. The pruning seed is derived from
/// the global seed and the graph id, so results do not depend on the order
/// in which graphs are processed.
pub fn enhance_tree(
    tree: &LabeledTree,
    graph_id: &str,
    task_id: &str,
    labels: &UniversalLabelSet,
    policy: &KeyNodePolicy,
    cfg: &EnhanceConfig,
) -> Result<UnifiedAst, EnhanceError> {
    let g = UnifiedAst::from_labeled(tree, graph_id, task_id, cfg.max_attr_tokens);
    let wrapper = cfg.collapse_wrappers
        && tree.nodes.get(tree.root).is_some_and(|n| is_wrapper_type(&n.type_name))
        && tree.nodes[tree.root].children.len() > 0;
    let g = insert_global_root(g, tree.root, labels.global_root_id, wrapper);
    let g = classify_key_nodes(g, policy);
    let (g, _) = prune(&g, PruneConfig { ratio: cfg.ratio, seed: derive_seed(cfg.seed, graph_id) })?;
    Ok(g)
}

/// File path of a graph inside an output directory: `<dir>/<graph_id>.json`.
pub fn graph_path(dir: &Path, graph_id: &str) -> PathBuf {
    dir.join(format!("{graph_id}.json"))
}

/// Loads every `*.json` graph below `dir`, sorted by graph id.
pub fn load_graph_dir(dir: &Path) -> Result<Vec<UnifiedAst>, EnhanceError> {
    let mut files = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        let rd = fs::read_dir(&d).map_err(|e| EnhanceError::Io { path: d.clone(), source: e })?;
        for entry in rd {
            let p = entry.map_err(|e| EnhanceError::Io { path: d.clone(), source: e })?.path();
            if p.is_dir() {
                stack.push(p);
            } else if p.extension().is_some_and(|x| x == "json") {
                files.push(p);
            }
        }
    }
    let mut graphs = files.iter().map(|p| UnifiedAst::load(p)).collect::<Result<Vec<_>, _>>()?;
    graphs.sort_by(|a, b| a.graph_id.cmp(&b.graph_id));
    Ok(graphs)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn node(id: usize, label: usize) -> UnifiedNode {
        UnifiedNode { id, universal_label_id: label, attr_tokens: vec![], is_key: false, is_global_root: false }
    }

    fn graph(n: usize, edges: &[(usize, usize)]) -> UnifiedAst {
        UnifiedAst {
            graph_id: "t/l/s".into(),
            language: "l".into(),
            task_id: "t".into(),
            nodes: (0..n).map(|i| node(i, 5)).collect(),
            edges: edges.iter().map(|&(a, b)| canon(a, b)).collect(),
            provenance: None,
        }
    }

    #[test]
    fn single_node_gets_a_root() {
        let g = insert_global_root(graph(1, &[]), 0, 1, false);
        assert_eq!(g.len(), 2);
        assert_eq!(g.edges, vec![(0, 1)]);
        assert!(g.validate().is_ok());
    }

    #[test]
    fn wrapper_children_move_under_the_global_root() {
        let g = insert_global_root(graph(4, &[(0, 1), (0, 2), (0, 3)]), 0, 1, true);
        assert_eq!(g.global_root(), Some(4));
        assert_eq!(g.edges, vec![(0, 4), (1, 4), (2, 4), (3, 4)]);
        let again = insert_global_root(g.clone(), 0, 1, true);
        assert_eq!(again, g);
    }

    #[test]
    fn fully_protected_graph_is_unchanged() {
        let mut g = insert_global_root(graph(3, &[(0, 1), (1, 2)]), 0, 1, false);
        g.nodes[1].is_key = true;
        let (out, rep) = prune(&g, PruneConfig { ratio: 0.9, seed: 3 }).unwrap();
        assert!(rep.deletable.is_empty());
        assert_eq!(out, g);
    }

    #[test]
    fn ratio_of_one_is_rejected() {
        let g = insert_global_root(graph(1, &[]), 0, 1, false);
        assert!(matches!(prune(&g, PruneConfig { ratio: 1.0, seed: 0 }), Err(EnhanceError::BadRatio(_))));
    }
}
