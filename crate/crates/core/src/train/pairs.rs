//! Pair and retrieval-example construction.

use std::collections::{BTreeMap, BTreeSet};

use rand::seq::IndexedRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::enhance::UnifiedAst;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PairSource {
    Positive,
    RandomNegative,
    HardNegative,
}

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct PairExample {
    pub g1_id: String,
    pub g2_id: String,
    /// 1 for clones, 0 otherwise.
    pub label: u8,
    pub source: PairSource,
}

impl PairExample {
    pub fn is_clone(&self) -> bool {
        self.label == 1
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RetrievalExample {
    pub anchor_id: String,
    pub positive_id: String,
    pub negative_ids: Vec<String>,
}

/// Task component of a `task/language/snippet` graph id.
pub fn task_of(graph_id: &str) -> &str {
    graph_id.split('/').next().unwrap_or(graph_id)
}

/// Identity of one graph for pair construction.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GraphMeta {
    pub id: String,
    pub task_id: String,
    pub language: String,
}

impl GraphMeta {
    pub fn of(g: &UnifiedAst) -> Self {
        Self { id: g.graph_id.clone(), task_id: g.task_id.clone(), language: g.language.clone() }
    }
}

/// Every cross-language same-task pair, first member in the smaller
/// language, sorted.
pub fn positive_pairs(graphs: &[GraphMeta]) -> Vec<PairExample> {
    let mut by_task: BTreeMap<&str, Vec<&GraphMeta>> = BTreeMap::new();
    for g in graphs {
        by_task.entry(&g.task_id).or_default().push(g);
    }
    let mut out = Vec::new();
    for members in by_task.values() {
        for a in members {
            for b in members {
                if a.language < b.language {
                    out.push(PairExample {
                        g1_id: a.id.clone(),
                        g2_id: b.id.clone(),
                        label: 1,
                        source: PairSource::Positive,
                    });
                }
            }
        }
    }
    out.sort();
    out
}

/// Every cross-language pair; clones are the same-task ones.
pub fn all_cross_pairs(graphs: &[GraphMeta]) -> Vec<PairExample> {
    let mut out = Vec::new();
    for a in graphs {
        for b in graphs {
            if a.language < b.language {
                let clone = a.task_id == b.task_id;
                out.push(PairExample {
                    g1_id: a.id.clone(),
                    g2_id: b.id.clone(),
                    label: u8::from(clone),
                    source: if clone { PairSource::Positive } else { PairSource::RandomNegative },
                });
            }
        }
    }
    out.sort();
    out
}

/// Candidates eligible as negatives for `anchor`: other language, other task.
pub fn negative_pool<'a>(anchor: &GraphMeta, graphs: &'a [GraphMeta]) -> Vec<&'a GraphMeta> {
    graphs.iter().filter(|g| g.language != anchor.language && g.task_id != anchor.task_id).collect()
}

/// Candidates eligible as positives for `anchor`: other language, same task.
pub fn positive_pool<'a>(anchor: &GraphMeta, graphs: &'a [GraphMeta]) -> Vec<&'a GraphMeta> {
    graphs.iter().filter(|g| g.language != anchor.language && g.task_id == anchor.task_id).collect()
}

/// One uniformly drawn negative per anchor occurrence.
pub fn random_negatives(anchors: &[&GraphMeta], graphs: &[GraphMeta], seed: u64) -> Vec<PairExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    anchors
        .iter()
        .filter_map(|a| {
            let pool = negative_pool(a, graphs);
            pool.choose(&mut rng).map(|c| PairExample {
                g1_id: a.id.clone(),
                g2_id: c.id.clone(),
                label: 0,
                source: PairSource::RandomNegative,
            })
        })
        .collect()
}

/// Distinct task ids of the graphs.
pub fn tasks(graphs: &[GraphMeta]) -> BTreeSet<String> {
    graphs.iter().map(|g| g.task_id.clone()).collect()
}
