//! Brute-force connected components over a similarity matrix.

use std::collections::{BTreeSet, HashMap};

use astbridge::unify::{LabelKey, Partition};
use proptest::prelude::*;

pub fn keys(n: usize) -> Vec<LabelKey> {
    (0..n).map(|i| LabelKey::new(if i % 2 == 0 { "java" } else { "python" }, &format!("t{i:02}"))).collect()
}

/// Components by depth-first search over the thresholded matrix.
pub fn brute_components(sim: &[Vec<f64>], threshold: f64) -> BTreeSet<BTreeSet<usize>> {
    let n = sim.len();
    let mut seen = vec![false; n];
    let mut out = BTreeSet::new();
    for s in 0..n {
        if seen[s] {
            continue;
        }
        let mut comp = BTreeSet::new();
        let mut stack = vec![s];
        seen[s] = true;
        while let Some(i) = stack.pop() {
            comp.insert(i);
            for j in 0..n {
                if !seen[j] && i != j && sim[i][j] >= threshold {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        out.insert(comp);
    }
    out
}

pub fn as_index_sets(p: &Partition, keys: &[LabelKey]) -> BTreeSet<BTreeSet<usize>> {
    let pos: HashMap<&LabelKey, usize> = keys.iter().enumerate().map(|(i, k)| (k, i)).collect();
    p.clusters.iter().map(|c| c.iter().map(|k| pos[k]).collect()).collect()
}

pub fn sim_matrix() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (1usize..=30).prop_flat_map(|n| {
        proptest::collection::vec(0.0f64..1.0, n * n).prop_map(move |raw| {
            let mut m = vec![vec![1.0; n]; n];
            for i in 0..n {
                for j in i + 1..n {
                    m[i][j] = raw[i * n + j];
                    m[j][i] = raw[i * n + j];
                }
            }
            m
        })
    })
}

