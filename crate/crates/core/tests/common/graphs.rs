//! Small unified graphs over a fixed label and token vocabulary.

use astbridge::diff::{ParamSet, Tape, Tensor};
use astbridge::enhance::{UnifiedAst, UnifiedNode};
use astbridge::gmn::{encode_pair_on_tape, GmnConfig, GmnModel, GraphInput, Vocab};
use astbridge::train::loss::{clone_loss_on_tape, CloneLossForm};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::rng;

pub const NUM_LABELS: usize = 12;
pub const TOKENS: &[&str] = &["alpha", "beta", "gamma", "delta", "eps", "zeta", "eta", "theta"];

pub fn vocab() -> Vocab {
    Vocab::new(TOKENS.iter().map(|s| s.to_string()).collect())
}

pub fn graph(id: &str, labels: &[usize], tokens: &[Vec<&str>], edges: &[(usize, usize)]) -> UnifiedAst {
    UnifiedAst {
        graph_id: id.to_string(),
        language: "java".into(),
        task_id: "t".into(),
        nodes: labels
            .iter()
            .zip(tokens)
            .enumerate()
            .map(|(i, (&l, t))| UnifiedNode {
                id: i,
                universal_label_id: l,
                attr_tokens: t.iter().map(|s| s.to_string()).collect(),
                is_key: false,
                is_global_root: false,
            })
            .collect(),
        edges: edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect(),
        provenance: None,
    }
}

/// Random tree; some tokens fall outside the vocabulary.
pub fn random_graph(r: &mut ChaCha8Rng, id: &str, max_nodes: usize) -> UnifiedAst {
    let n = r.random_range(1..=max_nodes);
    let labels: Vec<usize> = (0..n).map(|_| r.random_range(0..NUM_LABELS)).collect();
    let tokens: Vec<Vec<&str>> = (0..n)
        .map(|_| {
            let k = r.random_range(0..3);
            (0..k).map(|_| if r.random_bool(0.1) { "unseen" } else { TOKENS[r.random_range(0..TOKENS.len())] }).collect()
        })
        .collect();
    let mut edges: Vec<(usize, usize)> = (1..n).map(|i| (r.random_range(0..i), i)).collect();
    edges.sort_unstable();
    graph(id, &labels, &tokens, &edges)
}

pub fn model(cfg: GmnConfig, seed: u64) -> GmnModel {
    GmnModel::new(cfg, NUM_LABELS, vocab(), seed)
}

/// Model whose biases, LayerNorm affine terms and embeddings are all
/// randomized, so no parameter sits at a symmetric initial value.
pub fn perturbed(cfg: GmnConfig, seed: u64) -> GmnModel {
    let mut m = model(cfg, seed);
    let mut r = rng(seed ^ 0xABCD);
    let ids: Vec<_> = m.params.ids().collect();
    for id in ids {
        for x in m.params.get_mut(id).data_mut() {
            *x += r.random_range(-0.3..0.3);
        }
    }
    m
}

/// Loss of one pair as a function of every model parameter, in f64.
pub fn pair_loss(params: &ParamSet<f64>, m: &GmnModel, i1: &GraphInput<f64>, i2: &GraphInput<f64>, label: u8, form: CloneLossForm) -> (f64, Vec<Tensor<f64>>) {
    let mut tape = Tape::<f64>::new();
    let v = encode_pair_on_tape(&mut tape, params, &m.ids, &m.config, i1, i2, true, 5).unwrap();
    let loss = clone_loss_on_tape(&mut tape, form, v.v1, v.v2, label, 0.1, 10.0).unwrap();
    let value = tape.value(loss).item();
    let grads = tape.backward(loss, params.len()).unwrap();
    let g = params.ids().map(|id| grads.param(id).cloned().unwrap_or_else(|| Tensor::zeros(params.get(id).rows(), params.get(id).cols()))).collect();
    (value, g)
}

