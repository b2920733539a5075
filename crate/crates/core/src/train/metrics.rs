//! Classification and ranking metrics.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const THRESHOLD_STEP: f64 = 0.01;

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mrr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub precision_at_k: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k: Option<usize>,
    pub tp: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
    pub tn: usize,
}

pub fn f1_score(p: f64, r: f64) -> f64 {
    if p > 0.0 && r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    }
}

fn tally<I: IntoIterator<Item = (bool, bool)>>(pairs: I) -> (usize, usize, usize, usize) {
    let (mut tp, mut fp, mut fn_, mut tn) = (0, 0, 0, 0);
    for (pred, label) in pairs {
        match (pred, label) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fn_ += 1,
            (false, false) => tn += 1,
        }
    }
    (tp, fp, fn_, tn)
}

fn from_counts(tp: usize, fp: usize, fn_: usize, tn: usize, quiet: bool) -> Metrics {
    let precision = if tp + fp == 0 {
        if !quiet {
            log::warn!("no positive predictions; precision defined as 0");
        }
        0.0
    } else {
        tp as f64 / (tp + fp) as f64
    };
    let recall = if tp + fn_ == 0 {
        if !quiet {
            log::warn!("no positive labels; recall defined as 0");
        }
        0.0
    } else {
        tp as f64 / (tp + fn_) as f64
    };
    Metrics { precision, recall, f1: f1_score(precision, recall), tp, fp, fn_, tn, ..Metrics::default() }
}

/// Metrics of `(predicted, label)` pairs.
pub fn classification<I: IntoIterator<Item = (bool, bool)>>(pairs: I) -> Metrics {
    let (tp, fp, fn_, tn) = tally(pairs);
    from_counts(tp, fp, fn_, tn, false)
}

/// `−1, −0.99, …, 1`.
pub fn threshold_grid() -> Vec<f64> {
    (0..=200).map(|i| (i as f64 - 100.0) / 100.0).collect()
}

/// Threshold of the grid maximizing F1 of `sim ≥ t`. Ties resolve to the
/// median of the maximizing thresholds, the one farthest from both ends of
/// a tied run.
pub fn sweep_threshold(scored: &[(f64, bool)]) -> (f64, Metrics) {
    sweep_threshold_tiebreak(scored, &[])
}

fn sweep(scored: &[(f64, bool)]) -> Vec<(f64, Metrics)> {
    threshold_grid()
        .into_iter()
        .map(|t| {
            let (tp, fp, fn_, tn) = tally(scored.iter().map(|&(s, l)| (s >= t, l)));
            (t, from_counts(tp, fp, fn_, tn, true))
        })
        .collect()
}

fn maximizers(rows: Vec<(f64, Metrics, f64)>) -> Vec<(f64, Metrics, f64)> {
    let best = rows.iter().map(|r| r.2).fold(f64::NEG_INFINITY, f64::max);
    rows.into_iter().filter(|r| r.2 == best).collect()
}

/// Like [`sweep_threshold`], with ties on `scored` first narrowed to the
/// thresholds maximizing F1 on `secondary`; the metrics returned are those
/// of `scored`.
pub fn sweep_threshold_tiebreak(scored: &[(f64, bool)], secondary: &[(f64, bool)]) -> (f64, Metrics) {
    let tied = maximizers(sweep(scored).into_iter().map(|(t, m)| {
        let f = m.f1;
        (t, m, f)
    }).collect());
    let tied = if secondary.is_empty() {
        tied
    } else {
        let second: HashMap<u64, f64> = sweep(secondary).into_iter().map(|(t, m)| (t.to_bits(), m.f1)).collect();
        maximizers(tied.into_iter().map(|(t, m, _)| (t, m, second[&t.to_bits()])).collect())
    };
    let (t, m, _) = tied[(tied.len() - 1) / 2].clone();
    (t, m)
}

/// Candidates of one query ordered by descending score; on equal scores the
/// irrelevant ones come first, so results depend on scores only.
pub fn rank_order(scored: &[(f64, bool)]) -> Vec<bool> {
    let mut v: Vec<(f64, bool)> = scored.to_vec();
    v.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    v.into_iter().map(|(_, r)| r).collect()
}

/// Reciprocal rank of the first relevant entry; 0 if there is none.
pub fn reciprocal_rank(ranked: &[bool]) -> f64 {
    ranked.iter().position(|&r| r).map_or(0.0, |i| 1.0 / (i + 1) as f64)
}

/// Relevant entries in the top `k`, over `min(k, #relevant)`.
pub fn precision_at_k(ranked: &[bool], k: usize) -> f64 {
    let relevant = ranked.iter().filter(|&&r| r).count();
    let denom = k.min(relevant);
    if denom == 0 {
        return 0.0;
    }
    ranked.iter().take(k).filter(|&&r| r).count() as f64 / denom as f64
}

/// Mean reciprocal rank and precision@k over queries with at least one
/// relevant candidate; `None` when no query qualifies.
pub fn ranking(queries: &[Vec<(f64, bool)>], k: usize) -> Option<(f64, f64, usize)> {
    let ranked: Vec<Vec<bool>> =
        queries.iter().map(|q| rank_order(q)).filter(|r| r.iter().any(|&x| x)).collect();
    if ranked.len() < queries.len() {
        log::warn!("{} queries without relevant candidates skipped", queries.len() - ranked.len());
    }
    if ranked.is_empty() {
        return None;
    }
    let n = ranked.len() as f64;
    let mrr = ranked.iter().map(|r| reciprocal_rank(r)).sum::<f64>() / n;
    let pk = ranked.iter().map(|r| precision_at_k(r, k)).sum::<f64>() / n;
    Some((mrr, pk, ranked.len()))
}
