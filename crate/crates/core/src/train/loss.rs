//! Training objectives, as plain functions and as recorded computations.

use serde::{Deserialize, Serialize};

use crate::diff::{Real, Tape, TensorError, Var};

pub const DEFAULT_TAU: f64 = 0.1;
pub const DEFAULT_MARGIN: f64 = 10.0;
/// Keeps the distance differentiable at zero.
const DIST_EPS: f64 = 1e-12;

/// Negative-pair term of the clone objective. Positives always contribute
/// `(1 − sim)/τ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "form", rename_all = "snake_case")]
pub enum CloneLossForm {
    /// `max(0, m − ‖v₁ − v₂‖)²`.
    Contrastive,
    /// `max(0, sim − μ)/τ`. The training default: with the Euclidean form
    /// the two languages can separate by embedding norm while every cosine
    /// stays at 1.
    CosineHinge { neg_margin: f64 },
}

impl Default for CloneLossForm {
    fn default() -> Self {
        Self::CosineHinge { neg_margin: 0.0 }
    }
}

pub fn clone_loss(sim: f64, dist: f64, label: u8, tau: f64, margin: f64) -> f64 {
    clone_loss_with(CloneLossForm::Contrastive, sim, dist, label, tau, margin)
}

pub fn clone_loss_with(form: CloneLossForm, sim: f64, dist: f64, label: u8, tau: f64, margin: f64) -> f64 {
    if label == 1 {
        return (1.0 - sim) / tau;
    }
    match form {
        CloneLossForm::Contrastive => (margin - dist).max(0.0).powi(2),
        CloneLossForm::CosineHinge { neg_margin } => (sim - neg_margin).max(0.0) / tau,
    }
}

/// `−log softmax(s/τ)₀` over the positive similarity followed by the negatives.
pub fn retrieval_loss_from_sims(pos_sim: f64, neg_sims: &[f64], tau: f64) -> f64 {
    let logits: Vec<f64> = std::iter::once(pos_sim).chain(neg_sims.iter().copied()).map(|s| s / tau).collect();
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    lse - logits[0]
}

pub fn retrieval_loss(anchor: &[f64], positive: &[f64], negatives: &[Vec<f64>], tau: f64) -> f64 {
    let cos = super::mining::cosine64;
    let negs: Vec<f64> = negatives.iter().map(|n| cos(anchor, n)).collect();
    retrieval_loss_from_sims(cos(anchor, positive), &negs, tau)
}

/// Euclidean distance between two row vectors.
pub fn distance_on_tape<T: Real>(tape: &mut Tape<T>, a: Var, b: Var) -> Result<Var, TensorError> {
    let d = tape.sub(a, b)?;
    let sq = tape.mul(d, d)?;
    let s = tape.sum(sq)?;
    let s = tape.add_scalar(s, T::from_f64_lossy(DIST_EPS))?;
    tape.sqrt(s)
}

#[allow(clippy::too_many_arguments)]
pub fn clone_loss_on_tape<T: Real>(
    tape: &mut Tape<T>,
    form: CloneLossForm,
    v1: Var,
    v2: Var,
    label: u8,
    tau: f64,
    margin: f64,
) -> Result<Var, TensorError> {
    let f = T::from_f64_lossy;
    let sim = tape.cosine_sim(v1, v2)?;
    if label == 1 {
        let l = tape.scale(sim, f(-1.0 / tau))?;
        return tape.add_scalar(l, f(1.0 / tau));
    }
    match form {
        CloneLossForm::Contrastive => {
            let dist = distance_on_tape(tape, v1, v2)?;
            let gap = tape.scale(dist, f(-1.0))?;
            let gap = tape.add_scalar(gap, f(margin))?;
            let h = tape.relu(gap)?;
            tape.mul(h, h)
        }
        CloneLossForm::CosineHinge { neg_margin } => {
            let gap = tape.add_scalar(sim, f(-neg_margin))?;
            let h = tape.relu(gap)?;
            tape.scale(h, f(1.0 / tau))
        }
    }
}

/// `pos` and `negs` are 1×1 similarity nodes.
pub fn retrieval_loss_on_tape<T: Real>(tape: &mut Tape<T>, pos: Var, negs: &[Var], tau: f64) -> Result<Var, TensorError> {
    let mut parts = vec![pos];
    parts.extend_from_slice(negs);
    let logits = tape.concat_cols(&parts)?;
    let logits = tape.scale(logits, T::from_f64_lossy(1.0 / tau))?;
    let lp = tape.log_softmax_rows(logits)?;
    let lp0 = tape.pick(lp, 0, 0)?;
    tape.scale(lp0, T::from_f64_lossy(-1.0))
}
