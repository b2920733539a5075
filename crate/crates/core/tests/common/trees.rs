//! Enhanced random trees and the exact pruning oracle for them.

use std::collections::{BTreeMap, BTreeSet};

use astbridge::enhance::{classify_key_nodes, insert_global_root, protected_edges, prune, KeyNodePolicy, PruneConfig, UnifiedAst, UnifiedNode};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const ROOT_LABEL: usize = 1;
pub const KEY_LABEL: usize = 7;

pub fn node(id: usize, label: usize) -> UnifiedNode {
    UnifiedNode { id, universal_label_id: label, attr_tokens: vec![], is_key: false, is_global_root: false }
}

pub fn ast(labels: &[usize], edges: Vec<(usize, usize)>) -> UnifiedAst {
    let mut edges: Vec<(usize, usize)> = edges.into_iter().map(|(a, b)| (a.min(b), a.max(b))).collect();
    edges.sort_unstable();
    edges.dedup();
    UnifiedAst {
        graph_id: "g".into(),
        language: "java".into(),
        task_id: "t".into(),
        nodes: labels.iter().enumerate().map(|(i, &l)| node(i, l)).collect(),
        edges,
        provenance: None,
    }
}

pub fn policy() -> KeyNodePolicy {
    KeyNodePolicy { key_label_ids: BTreeSet::from([KEY_LABEL]) }
}

/// Random tree rooted at node 0, with a global root and key labels on
/// roughly `key_rate` of the nodes.
pub fn random_enhanced_tree(r: &mut ChaCha8Rng, max_nodes: usize, key_rate: f64) -> UnifiedAst {
    let n = r.random_range(1..=max_nodes);
    let labels: Vec<usize> = (0..n).map(|_| if r.random_bool(key_rate) { KEY_LABEL } else { r.random_range(2..KEY_LABEL) }).collect();
    let edges = (1..n).map(|i| (r.random_range(0..i), i)).collect();
    let g = insert_global_root(ast(&labels, edges), 0, ROOT_LABEL, false);
    classify_key_nodes(g, &policy())
}

/// Deletable edges whose far side (away from the global root) contains no
/// protected edge: exactly the edges a tree can lose while staying
/// connected, peeling leaves one at a time.
pub fn peelable(g: &UnifiedAst, protected: &BTreeSet<(usize, usize)>) -> usize {
    let root = g.global_root().unwrap();
    let mut children: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    let mut order = vec![root];
    let mut seen = BTreeSet::from([root]);
    let mut i = 0;
    while i < order.len() {
        let u = order[i];
        for &(a, b) in &g.edges {
            let v = if a == u { b } else if b == u { a } else { continue };
            if seen.insert(v) {
                children.entry(u).or_default().push(v);
                order.push(v);
            }
        }
        i += 1;
    }
    // clean[v]: no protected edge in the subtree below v.
    let mut clean: BTreeMap<usize, bool> = BTreeMap::new();
    let mut count = 0;
    for &u in order.iter().rev() {
        let mut ok = true;
        for &c in children.get(&u).map(Vec::as_slice).unwrap_or(&[]) {
            let e = (u.min(c), u.max(c));
            let sub = clean[&c] && !protected.contains(&e);
            if sub {
                count += 1;
            }
            ok &= sub;
        }
        clean.insert(u, ok);
    }
    count
}

pub fn check_contract(g: &UnifiedAst, ratio: f64, seed: u64) -> (usize, usize) {
    let (out, report) = prune(g, PruneConfig { ratio, seed }).unwrap();
    let protected = protected_edges(g);
    assert!(report.removed.iter().all(|e| !protected.contains(e)), "protected edge removed");
    assert!(report.removed.iter().all(|e| report.deletable.contains(e)));
    assert_eq!(report.deletable.len() + protected.len(), g.edges.len());
    assert_eq!(report.target, (ratio * report.deletable.len() as f64).floor() as usize);
    out.validate().unwrap();
    assert_eq!(out.edges.len(), g.edges.len() - report.removed.len());
    // Every surviving node still touches an edge; dropped nodes are gone.
    let touched: BTreeSet<usize> = out.edges.iter().flat_map(|&(a, b)| [a, b]).collect();
    for n in &out.nodes {
        assert!(n.is_global_root || touched.contains(&n.id));
    }
    assert_eq!(out.nodes.len() + report.dropped_nodes.len(), g.nodes.len());
    (report.removed.len(), report.target)
}

