//! Every tape primitive wrapped as a [`Probe`] with a matching input sampler.

use std::sync::Arc;

use astbridge::diff::{Real, RowMix, Tape, Tensor, TensorError, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::gradcheck::{random_away_from_zero, random_tensor, Probe};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    MatMul,
    Add,
    Sub,
    Mul,
    AddRow,
    MulRow,
    Scale,
    AddScalar,
    ConcatCols,
    ConcatRows,
    SliceRows,
    Transpose,
    MeanRows,
    Sum,
    GatherRows,
    RowMix,
    OuterSum,
    Relu,
    LeakyRelu,
    Sigmoid,
    Tanh,
    Sqrt,
    SoftmaxRows,
    LogSoftmaxRows,
    LayerNorm,
    Dropout,
    CosineSim,
    Pick,
}

pub const ALL: [Prim; 28] = [
    Prim::MatMul,
    Prim::Add,
    Prim::Sub,
    Prim::Mul,
    Prim::AddRow,
    Prim::MulRow,
    Prim::Scale,
    Prim::AddScalar,
    Prim::ConcatCols,
    Prim::ConcatRows,
    Prim::SliceRows,
    Prim::Transpose,
    Prim::MeanRows,
    Prim::Sum,
    Prim::GatherRows,
    Prim::RowMix,
    Prim::OuterSum,
    Prim::Relu,
    Prim::LeakyRelu,
    Prim::Sigmoid,
    Prim::Tanh,
    Prim::Sqrt,
    Prim::SoftmaxRows,
    Prim::LogSoftmaxRows,
    Prim::LayerNorm,
    Prim::Dropout,
    Prim::CosineSim,
    Prim::Pick,
];

/// A primitive together with the non-differentiable arguments drawn for one trial.
pub struct Case {
    pub prim: Prim,
    pub gather: Vec<usize>,
    pub mix: Vec<Vec<(usize, f64)>>,
    pub slice: (usize, usize),
    pub pick: (usize, usize),
    pub seed: u64,
}

impl Probe for Case {
    fn build<T: Real>(&self, t: &mut Tape<T>, x: &[Var]) -> Result<Var, TensorError> {
        let f = T::from_f64_lossy;
        match self.prim {
            Prim::MatMul => t.matmul(x[0], x[1]),
            Prim::Add => t.add(x[0], x[1]),
            Prim::Sub => t.sub(x[0], x[1]),
            Prim::Mul => t.mul(x[0], x[1]),
            Prim::AddRow => t.add_row(x[0], x[1]),
            Prim::MulRow => t.mul_row(x[0], x[1]),
            Prim::Scale => t.scale(x[0], f(-1.7)),
            Prim::AddScalar => t.add_scalar(x[0], f(0.3)),
            Prim::ConcatCols => t.concat_cols(x),
            Prim::ConcatRows => t.concat_rows(x),
            Prim::SliceRows => t.slice_rows(x[0], self.slice.0, self.slice.1),
            Prim::Transpose => t.transpose(x[0]),
            Prim::MeanRows => t.mean_rows(x[0]),
            Prim::Sum => t.sum(x[0]),
            Prim::GatherRows => t.gather_rows(x[0], &self.gather),
            Prim::RowMix => {
                let rows = t.shape(x[0]).0;
                let mix = RowMix::<f64>::new(rows, self.mix.clone()).cast::<T>();
                t.row_mix(x[0], Arc::new(mix))
            }
            Prim::OuterSum => t.outer_sum(x[0], x[1]),
            Prim::Relu => t.relu(x[0]),
            Prim::LeakyRelu => t.leaky_relu(x[0], f(0.2)),
            Prim::Sigmoid => t.sigmoid(x[0]),
            Prim::Tanh => t.tanh(x[0]),
            Prim::Sqrt => t.sqrt(x[0]),
            Prim::SoftmaxRows => t.softmax_rows(x[0]),
            Prim::LogSoftmaxRows => t.log_softmax_rows(x[0]),
            Prim::LayerNorm => t.layer_norm(x[0], f(1e-5)),
            Prim::Dropout => t.dropout(x[0], f(0.3), true, self.seed),
            Prim::CosineSim => t.cosine_sim(x[0], x[1]),
            Prim::Pick => t.pick(x[0], self.pick.0, self.pick.1),
        }
    }
}

/// Draws shapes, inputs and auxiliary arguments for one trial.
pub fn sample(prim: Prim, rng: &mut ChaCha8Rng) -> (Case, Vec<Tensor<f64>>) {
    let r = rng.random_range(1..=4);
    let c = rng.random_range(1..=5);
    let k = rng.random_range(1..=4);
    let mut case = Case { prim, gather: vec![], mix: vec![], slice: (0, r), pick: (0, 0), seed: rng.random() };
    let g = |rng: &mut ChaCha8Rng, rows, cols| random_tensor(rng, rows, cols, 1.0);
    let inputs = match prim {
        Prim::MatMul => vec![g(rng, r, k), g(rng, k, c)],
        Prim::Add | Prim::Sub | Prim::Mul => vec![g(rng, r, c), g(rng, r, c)],
        Prim::AddRow | Prim::MulRow => vec![g(rng, r, c), g(rng, 1, c)],
        Prim::ConcatCols => vec![g(rng, r, c), g(rng, r, k)],
        Prim::ConcatRows => vec![g(rng, r, c), g(rng, k, c)],
        Prim::SliceRows => {
            let a = rng.random_range(0..r);
            let b = rng.random_range(a + 1..=r);
            case.slice = (a, b);
            vec![g(rng, r, c)]
        }
        Prim::GatherRows => {
            let n = rng.random_range(1..=6);
            case.gather = (0..n).map(|_| rng.random_range(0..r)).collect();
            vec![g(rng, r, c)]
        }
        Prim::RowMix => {
            let out = rng.random_range(1..=5);
            case.mix = (0..out)
                .map(|_| {
                    let n = rng.random_range(0..=r);
                    (0..n).map(|_| (rng.random_range(0..r), rng.random_range(0.1..1.0))).collect()
                })
                .collect();
            vec![g(rng, r, c)]
        }
        Prim::OuterSum => vec![g(rng, r, 1), g(rng, 1, c)],
        Prim::Relu | Prim::LeakyRelu => vec![random_away_from_zero(rng, r, c)],
        Prim::Sqrt => {
            let mut x = random_tensor(rng, r, c, 1.0);
            x.data_mut().iter_mut().for_each(|v| *v = v.abs() + 0.2);
            vec![x]
        }
        Prim::SoftmaxRows | Prim::LogSoftmaxRows => vec![random_tensor(rng, r, c, 3.0)],
        Prim::LayerNorm => {
            // Rows with near-zero variance are ill-conditioned in f32.
            let cols = c.max(3);
            loop {
                let x = random_tensor(rng, r, cols, 2.0);
                let spread_ok = (0..r).all(|i| {
                    let row = x.row(i);
                    let m = row.iter().sum::<f64>() / cols as f64;
                    row.iter().map(|v| (v - m).powi(2)).sum::<f64>() / cols as f64 > 0.25
                });
                if spread_ok {
                    break vec![x];
                }
            }
        }
        Prim::CosineSim => vec![g(rng, 1, c + 1), g(rng, 1, c + 1)],
        Prim::Pick => {
            case.pick = (rng.random_range(0..r), rng.random_range(0..c));
            vec![g(rng, r, c)]
        }
        Prim::Scale | Prim::AddScalar | Prim::Transpose | Prim::MeanRows | Prim::Sum | Prim::Sigmoid | Prim::Tanh | Prim::Dropout => {
            vec![g(rng, r, c)]
        }
    };
    (case, inputs)
}
