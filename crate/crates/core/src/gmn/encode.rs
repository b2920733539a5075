//! Forward pass of the pair encoder on a computation record.

use std::sync::Arc;

use crate::diff::{ParamSet, Real, RowMix, Tape, Tensor, Var};
use crate::enhance::UnifiedAst;

use super::model::{GmnConfig, GmnError, GmnModel, ParamIds, Vocab};

/// Precomputed index structures of one graph.
#[derive(Clone, Debug)]
pub struct GraphInput<T: Real = f32> {
    pub graph_id: String,
    pub labels: Vec<usize>,
    /// Row `i` averages the attribute-token rows of node `i`.
    pub attr_mix: Arc<RowMix<T>>,
    /// Row `i` averages the neighbor states of node `i`.
    pub neighbor_mix: Arc<RowMix<T>>,
}

impl<T: Real> GraphInput<T> {
    pub fn new(g: &UnifiedAst, vocab: &Vocab, num_labels: usize) -> Result<Self, GmnError> {
        if g.nodes.is_empty() {
            return Err(GmnError::EmptyGraph(g.graph_id.clone()));
        }
        let labels: Vec<usize> = g.nodes.iter().map(|n| n.universal_label_id).collect();
        if let Some(&bad) = labels.iter().find(|&&l| l >= num_labels) {
            return Err(GmnError::UnknownLabel { label: bad, size: num_labels });
        }
        let tokens: Vec<Vec<usize>> =
            g.nodes.iter().map(|n| n.attr_tokens.iter().map(|t| vocab.id(t)).collect()).collect();
        let attr_mix = RowMix::mean_of(vocab.len(), &tokens);
        let neighbor_mix = RowMix::mean_of(g.nodes.len(), &g.adjacency());
        Ok(Self { graph_id: g.graph_id.clone(), labels, attr_mix: Arc::new(attr_mix), neighbor_mix: Arc::new(neighbor_mix) })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Tape handles produced by [`encode_pair_on_tape`].
#[derive(Clone, Debug)]
pub struct PairVars {
    pub v1: Var,
    pub v2: Var,
    pub z1: Var,
    pub z2: Var,
    /// Per round, attention of graph 1 over graph 2 and vice versa.
    pub attention: Vec<(Var, Var)>,
    pub pooling: (Var, Var),
}

struct Weights {
    e_type: Var,
    e_attr: Var,
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    ln_gain: Var,
    ln_bias: Var,
    a_left: Var,
    a_right: Var,
    w_r: Var,
    u_r: Var,
    b_r: Var,
    w_z: Var,
    u_z: Var,
    b_z: Var,
    w_h: Var,
    u_h: Var,
    b_h: Var,
    pool: Var,
}

fn load_weights<T: Real>(tape: &mut Tape<T>, p: &ParamSet<T>, ids: &ParamIds, d: usize) -> Result<Weights, GmnError> {
    let att = tape.param(p, ids.att);
    Ok(Weights {
        e_type: tape.param(p, ids.e_type),
        e_attr: tape.param(p, ids.e_attr),
        w1: tape.param(p, ids.w1),
        b1: tape.param(p, ids.b1),
        w2: tape.param(p, ids.w2),
        b2: tape.param(p, ids.b2),
        ln_gain: tape.param(p, ids.ln_gain),
        ln_bias: tape.param(p, ids.ln_bias),
        a_left: tape.slice_rows(att, 0, d)?,
        a_right: tape.slice_rows(att, d, 2 * d)?,
        w_r: tape.param(p, ids.w_r),
        u_r: tape.param(p, ids.u_r),
        b_r: tape.param(p, ids.b_r),
        w_z: tape.param(p, ids.w_z),
        u_z: tape.param(p, ids.u_z),
        b_z: tape.param(p, ids.b_z),
        w_h: tape.param(p, ids.w_h),
        u_h: tape.param(p, ids.u_h),
        b_h: tape.param(p, ids.b_h),
        pool: tape.param(p, ids.pool),
    })
}

/// `z⁽⁰⁾ = LayerNorm(ReLU(W₂ ReLU(W₁ h + b₁) + b₂))`, then dropout.
fn init_nodes<T: Real>(
    tape: &mut Tape<T>,
    w: &Weights,
    g: &GraphInput<T>,
    cfg: &GmnConfig,
    train: bool,
    seed: u64,
) -> Result<Var, GmnError> {
    let t = tape.gather_rows(w.e_type, &g.labels)?;
    let v = tape.row_mix(w.e_attr, g.attr_mix.clone())?;
    let h = tape.concat_cols(&[t, v])?;
    let a = tape.matmul(h, w.w1)?;
    let a = tape.add_row(a, w.b1)?;
    let a = tape.relu(a)?;
    let b = tape.matmul(a, w.w2)?;
    let b = tape.add_row(b, w.b2)?;
    let b = tape.relu(b)?;
    let z = tape.layer_norm(b, T::from_f64_lossy(cfg.ln_eps))?;
    let z = tape.mul_row(z, w.ln_gain)?;
    let z = tape.add_row(z, w.ln_bias)?;
    Ok(tape.dropout(z, T::from_f64_lossy(cfg.dropout), train, seed)?)
}

/// Attention of every row of `za` over the rows of `zb` and the resulting
/// contexts: `e_ij = LeakyReLU(a_lᵀ z_i + a_rᵀ z_j)`, `α = softmax_j(e)`,
/// `c_i = Σ_j α_ij z_j`.
fn cross_attention<T: Real>(tape: &mut Tape<T>, w: &Weights, za: Var, zb: Var, slope: T) -> Result<(Var, Var), GmnError> {
    let left = tape.matmul(za, w.a_left)?;
    let right = tape.matmul(zb, w.a_right)?;
    let right = tape.transpose(right)?;
    let e = tape.outer_sum(left, right)?;
    let e = tape.leaky_relu(e, slope)?;
    let alpha = tape.softmax_rows(e)?;
    let c = tape.matmul(alpha, zb)?;
    Ok((alpha, c))
}

fn gate<T: Real>(tape: &mut Tape<T>, x: Var, h: Var, wx: Var, uh: Var, b: Var) -> Result<Var, GmnError> {
    let a = tape.matmul(x, wx)?;
    let c = tape.matmul(h, uh)?;
    let s = tape.add(a, c)?;
    Ok(tape.add_row(s, b)?)
}

/// GRU step with input `u = [z ‖ c]` and hidden state `n̄` (neighbor mean):
/// `z' = (1 − ζ) ⊙ n̄ + ζ ⊙ h̃`.
fn propagate<T: Real>(tape: &mut Tape<T>, w: &Weights, z: Var, c: Var, g: &GraphInput<T>) -> Result<Var, GmnError> {
    let u = tape.concat_cols(&[z, c])?;
    let n = tape.row_mix(z, g.neighbor_mix.clone())?;
    let r = gate(tape, u, n, w.w_r, w.u_r, w.b_r)?;
    let r = tape.sigmoid(r)?;
    let zeta = gate(tape, u, n, w.w_z, w.u_z, w.b_z)?;
    let zeta = tape.sigmoid(zeta)?;
    let rn = tape.mul(r, n)?;
    let cand = gate(tape, u, rn, w.w_h, w.u_h, w.b_h)?;
    let cand = tape.tanh(cand)?;
    let diff = tape.sub(cand, n)?;
    let step = tape.mul(zeta, diff)?;
    Ok(tape.add(n, step)?)
}

/// `γ = softmax(Z w)` over nodes, `v = γᵀ Z` (1×d).
fn pool<T: Real>(tape: &mut Tape<T>, w: &Weights, z: Var) -> Result<(Var, Var), GmnError> {
    let s = tape.matmul(z, w.pool)?;
    let s = tape.transpose(s)?;
    let gamma = tape.softmax_rows(s)?;
    let v = tape.matmul(gamma, z)?;
    Ok((gamma, v))
}

/// Records the full pair encoding. Both graphs go through the identical
/// code path, so swapping the arguments swaps the outputs exactly.
#[allow(clippy::too_many_arguments)]
pub fn encode_pair_on_tape<T: Real>(
    tape: &mut Tape<T>,
    params: &ParamSet<T>,
    ids: &ParamIds,
    cfg: &GmnConfig,
    g1: &GraphInput<T>,
    g2: &GraphInput<T>,
    train: bool,
    seed: u64,
) -> Result<PairVars, GmnError> {
    let w = load_weights(tape, params, ids, cfg.d())?;
    let slope = T::from_f64_lossy(cfg.leaky_slope);
    let mut z1 = init_nodes(tape, &w, g1, cfg, train, seed.wrapping_mul(2).wrapping_add(1))?;
    let mut z2 = init_nodes(tape, &w, g2, cfg, train, seed.wrapping_mul(2).wrapping_add(2))?;
    let mut attention = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (a12, c1) = cross_attention(tape, &w, z1, z2, slope)?;
        let (a21, c2) = cross_attention(tape, &w, z2, z1, slope)?;
        attention.push((a12, a21));
        let n1 = propagate(tape, &w, z1, c1, g1)?;
        let n2 = propagate(tape, &w, z2, c2, g2)?;
        z1 = n1;
        z2 = n2;
    }
    let (p1, v1) = pool(tape, &w, z1)?;
    let (p2, v2) = pool(tape, &w, z2)?;
    Ok(PairVars { v1, v2, z1, z2, attention, pooling: (p1, p2) })
}

/// Values of one pair encoding, with diagnostics.
#[derive(Clone, Debug)]
pub struct PairEncoding {
    pub v1: Vec<f32>,
    pub v2: Vec<f32>,
    pub node_states: (Tensor<f32>, Tensor<f32>),
    pub attention: Vec<(Tensor<f32>, Tensor<f32>)>,
    pub pooling: (Vec<f32>, Vec<f32>),
}

impl PairEncoding {
    pub fn similarity(&self) -> f32 {
        cosine_f32(&self.v1, &self.v2)
    }
}

pub fn cosine_f32(a: &[f32], b: &[f32]) -> f32 {
    let dot: f64 = a.iter().zip(b).map(|(&x, &y)| f64::from(x) * f64::from(y)).sum();
    let na: f64 = a.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|&x| f64::from(x).powi(2)).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        (dot / (na * nb)).clamp(-1.0, 1.0) as f32
    }
}

pub fn encode_pair(
    model: &GmnModel,
    g1: &GraphInput<f32>,
    g2: &GraphInput<f32>,
    train: bool,
    seed: u64,
) -> Result<PairEncoding, GmnError> {
    let mut tape = Tape::new();
    let vars = encode_pair_on_tape(&mut tape, &model.params, &model.ids, &model.config, g1, g2, train, seed)?;
    let val = |v: Var| tape.value(v).clone();
    Ok(PairEncoding {
        v1: tape.value(vars.v1).data().to_vec(),
        v2: tape.value(vars.v2).data().to_vec(),
        node_states: (val(vars.z1), val(vars.z2)),
        attention: vars.attention.iter().map(|&(a, b)| (val(a), val(b))).collect(),
        pooling: (tape.value(vars.pooling.0).data().to_vec(), tape.value(vars.pooling.1).data().to_vec()),
    })
}

/// Eval-mode cosine of the pair encoding.
pub fn similarity(model: &GmnModel, g1: &GraphInput<f32>, g2: &GraphInput<f32>) -> Result<f32, GmnError> {
    Ok(encode_pair(model, g1, g2, false, 0)?.similarity())
}

/// Graph vector used for indexing: the encoding of `g` paired with itself.
pub fn standalone_embedding(model: &GmnModel, g: &GraphInput<f32>) -> Result<Vec<f32>, GmnError> {
    Ok(encode_pair(model, g, g, false, 0)?.v1)
}
