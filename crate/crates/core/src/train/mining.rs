//! Hard-negative mining: rank cross-task candidates by vector cosine.

use std::collections::BTreeMap;

use rayon::prelude::*;

use super::pairs::{GraphMeta, PairExample, PairSource};
use crate::enhance::UnifiedAst;
use crate::gmn::{standalone_embedding, GmnError, GmnModel, GraphInput};

/// How candidate vectors are obtained.
#[derive(Clone, Copy, Debug)]
pub enum MiningSource<'a> {
    /// Universal-label histograms.
    Static { num_labels: usize },
    /// Standalone embeddings under the current model.
    Model(&'a GmnModel),
}

/// Count of each universal label in the graph.
pub fn label_histogram(g: &UnifiedAst, num_labels: usize) -> Vec<f64> {
    let mut h = vec![0.0; num_labels];
    for n in &g.nodes {
        if let Some(x) = h.get_mut(n.universal_label_id) {
            *x += 1.0;
        }
    }
    h
}

pub fn cosine64(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0)
    }
}

pub fn graph_vectors(graphs: &[&UnifiedAst], source: MiningSource<'_>) -> Result<BTreeMap<String, Vec<f64>>, GmnError> {
    let vecs: Vec<(String, Vec<f64>)> = match source {
        MiningSource::Static { num_labels } => {
            graphs.iter().map(|g| (g.graph_id.clone(), label_histogram(g, num_labels))).collect()
        }
        MiningSource::Model(model) => graphs
            .par_iter()
            .map(|g| {
                let input = GraphInput::new(g, &model.vocab, model.num_labels)?;
                let v = standalone_embedding(model, &input)?;
                Ok((g.graph_id.clone(), v.into_iter().map(f64::from).collect()))
            })
            .collect::<Result<_, GmnError>>()?,
    };
    Ok(vecs.into_iter().collect())
}

/// Cross-task, cross-language candidates of `anchor`, most similar first
/// (ties by id).
pub fn rank_negatives<'a>(
    anchor: &GraphMeta,
    candidates: &'a [GraphMeta],
    vectors: &BTreeMap<String, Vec<f64>>,
) -> Vec<(&'a GraphMeta, f64)> {
    let Some(av) = vectors.get(&anchor.id) else { return Vec::new() };
    let mut ranked: Vec<(&GraphMeta, f64)> = candidates
        .iter()
        .filter(|c| c.task_id != anchor.task_id && c.language != anchor.language)
        .filter_map(|c| vectors.get(&c.id).map(|cv| (c, cosine64(av, cv))))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.id.cmp(&b.0.id)));
    ranked
}

/// The `top_k` hardest negatives of every anchor.
pub fn mine_hard_negatives(
    anchors: &[&UnifiedAst],
    candidates: &[&UnifiedAst],
    source: MiningSource<'_>,
    top_k: usize,
) -> Result<Vec<PairExample>, GmnError> {
    let mut all: Vec<&UnifiedAst> = anchors.to_vec();
    all.extend_from_slice(candidates);
    all.sort_by(|a, b| a.graph_id.cmp(&b.graph_id));
    all.dedup_by(|a, b| a.graph_id == b.graph_id);
    let vectors = graph_vectors(&all, source)?;
    let cand_meta: Vec<GraphMeta> = candidates.iter().map(|g| GraphMeta::of(g)).collect();
    let mut out = Vec::new();
    for a in anchors {
        let meta = GraphMeta::of(a);
        let ranked = rank_negatives(&meta, &cand_meta, &vectors);
        if ranked.is_empty() {
            log::warn!("{}: no cross-task candidates to mine", a.graph_id);
        }
        out.extend(ranked.into_iter().take(top_k).map(|(c, _)| PairExample {
            g1_id: a.graph_id.clone(),
            g2_id: c.id.clone(),
            label: 0,
            source: PairSource::HardNegative,
        }));
    }
    Ok(out)
}
