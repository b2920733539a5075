//! Clone detection and retrieval evaluation over a pair scorer.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::metrics::{classification, ranking, rank_order, sweep_threshold, Metrics};
use super::pairs::{GraphMeta, PairExample};
use super::TrainError;
use crate::enhance::UnifiedAst;
use crate::gmn::encode::cosine_f32;
use crate::gmn::{similarity, standalone_embedding, GmnModel, GraphInput};

pub const DEFAULT_K: usize = 4;

/// Similarity of two graphs by id.
pub trait PairScorer: Sync {
    fn score(&self, a: &str, b: &str) -> Result<f64, TrainError>;
}

/// Joint eval-mode encoding of each pair.
pub struct GmnScorer<'a> {
    pub model: &'a GmnModel,
    pub inputs: &'a HashMap<String, GraphInput<f32>>,
}

impl PairScorer for GmnScorer<'_> {
    fn score(&self, a: &str, b: &str) -> Result<f64, TrainError> {
        let ga = self.inputs.get(a).ok_or_else(|| TrainError::UnknownGraph(a.to_string()))?;
        let gb = self.inputs.get(b).ok_or_else(|| TrainError::UnknownGraph(b.to_string()))?;
        Ok(f64::from(similarity(self.model, ga, gb)?))
    }
}

/// Cosine of precomputed vectors.
pub struct VectorScorer {
    pub vectors: HashMap<String, Vec<f32>>,
}

impl VectorScorer {
    /// Standalone embeddings of every input.
    pub fn standalone(model: &GmnModel, inputs: &HashMap<String, GraphInput<f32>>) -> Result<Self, TrainError> {
        let mut ids: Vec<&String> = inputs.keys().collect();
        ids.sort();
        let vectors = ids
            .par_iter()
            .map(|id| Ok(((*id).clone(), standalone_embedding(model, &inputs[*id])?)))
            .collect::<Result<HashMap<_, _>, TrainError>>()?;
        Ok(Self { vectors })
    }
}

impl PairScorer for VectorScorer {
    fn score(&self, a: &str, b: &str) -> Result<f64, TrainError> {
        let va = self.vectors.get(a).ok_or_else(|| TrainError::UnknownGraph(a.to_string()))?;
        let vb = self.vectors.get(b).ok_or_else(|| TrainError::UnknownGraph(b.to_string()))?;
        Ok(f64::from(cosine_f32(va, vb)))
    }
}

pub fn graph_inputs(
    graphs: &[UnifiedAst],
    model: &GmnModel,
) -> Result<HashMap<String, GraphInput<f32>>, TrainError> {
    graphs
        .iter()
        .map(|g| Ok((g.graph_id.clone(), GraphInput::new(g, &model.vocab, model.num_labels)?)))
        .collect()
}

/// Scores in pair order, computed in parallel.
pub fn score_pairs<S: PairScorer + ?Sized>(pairs: &[PairExample], scorer: &S) -> Result<Vec<f64>, TrainError> {
    pairs.par_iter().map(|p| scorer.score(&p.g1_id, &p.g2_id)).collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub g1_id: String,
    pub g2_id: String,
    pub sim: f64,
    pub predicted: u8,
    pub label: u8,
}

/// Predicts a clone iff `sim ≥ threshold`.
pub fn detect_from_scores(pairs: &[PairExample], sims: &[f64], threshold: f64) -> (Vec<Prediction>, Metrics) {
    let preds: Vec<Prediction> = pairs
        .iter()
        .zip(sims)
        .map(|(p, &sim)| Prediction {
            g1_id: p.g1_id.clone(),
            g2_id: p.g2_id.clone(),
            sim,
            predicted: u8::from(sim >= threshold),
            label: p.label,
        })
        .collect();
    let m = classification(preds.iter().map(|p| (p.predicted == 1, p.label == 1)));
    (preds, m)
}

pub fn detect_clones<S: PairScorer + ?Sized>(
    pairs: &[PairExample],
    scorer: &S,
    threshold: f64,
) -> Result<(Vec<Prediction>, Metrics), TrainError> {
    let sims = score_pairs(pairs, scorer)?;
    Ok(detect_from_scores(pairs, &sims, threshold))
}

/// Grid threshold maximizing F1 on `pairs`.
pub fn tune_threshold<S: PairScorer + ?Sized>(pairs: &[PairExample], scorer: &S) -> Result<(f64, Metrics), TrainError> {
    let sims = score_pairs(pairs, scorer)?;
    let scored: Vec<(f64, bool)> = sims.into_iter().zip(pairs).map(|(s, p)| (s, p.is_clone())).collect();
    Ok(sweep_threshold(&scored))
}

/// Candidates of one query: every graph in another language, with its
/// score and relevance (same task).
pub fn score_candidates<S: PairScorer + ?Sized>(
    query: &GraphMeta,
    candidates: &[GraphMeta],
    scorer: &S,
) -> Result<Vec<(String, f64, bool)>, TrainError> {
    candidates
        .par_iter()
        .filter(|c| c.language != query.language)
        .map(|c| Ok((c.id.clone(), scorer.score(&query.id, &c.id)?, c.task_id == query.task_id)))
        .collect()
}

/// Candidates of one query in rank order.
pub fn rank_candidates<S: PairScorer + ?Sized>(
    query: &GraphMeta,
    candidates: &[GraphMeta],
    scorer: &S,
) -> Result<Vec<(String, f64, bool)>, TrainError> {
    let mut c = score_candidates(query, candidates, scorer)?;
    c.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.2.cmp(&b.2)).then_with(|| a.0.cmp(&b.0)));
    Ok(c)
}

/// MRR and precision@k with every graph of `graphs` as a query against
/// all graphs of other languages.
pub fn evaluate_retrieval<S: PairScorer + ?Sized>(graphs: &[GraphMeta], scorer: &S, k: usize) -> Result<Metrics, TrainError> {
    let queries: Vec<Vec<(f64, bool)>> = graphs
        .iter()
        .map(|q| Ok(score_candidates(q, graphs, scorer)?.into_iter().map(|(_, s, r)| (s, r)).collect()))
        .collect::<Result<_, TrainError>>()?;
    Ok(retrieval_metrics(&queries, k))
}

pub fn retrieval_metrics(queries: &[Vec<(f64, bool)>], k: usize) -> Metrics {
    let mut m = Metrics { k: Some(k), ..Metrics::default() };
    if let Some((mrr, pk, _)) = ranking(queries, k) {
        m.mrr = Some(mrr);
        m.precision_at_k = Some(pk);
        // Classification view of the top k.
        let flags = queries.iter().flat_map(|q| {
            let r = rank_order(q);
            r.into_iter().enumerate().map(move |(i, rel)| (i < k, rel))
        });
        let c = classification(flags);
        m.precision = c.precision;
        m.recall = c.recall;
        m.f1 = c.f1;
    }
    m
}
