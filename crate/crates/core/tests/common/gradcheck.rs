//! Finite-difference gradient oracle.
//!
//! The oracle only ever evaluates forward values; it never looks at a
//! backward rule. Forward evaluation runs in f64 so that central differences
//! with `h = 1e-3` are dominated by truncation instead of rounding; one
//! Richardson step (`h` and `h/2`) lifts the truncation error to O(h⁴).

use astbridge::diff::{Real, Tape, Tensor, TensorError, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const H: f64 = 1e-3;

/// Relative error with a small absolute floor so that near-zero gradients
/// are compared absolutely.
pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-2)
}

/// A differentiable function of several tensor inputs, buildable on a tape
/// of any precision.
pub trait Probe {
    fn build<T: Real>(&self, tape: &mut Tape<T>, xs: &[Var]) -> Result<Var, TensorError>;
}

/// Scalar objective `Σ f(xs) ⊙ weights`, so that every output entry
/// contributes with a distinct weight.
fn objective<T: Real, P: Probe>(probe: &P, tape: &mut Tape<T>, xs: &[Var], weights: &Tensor<f64>) -> Result<Var, TensorError> {
    let y = probe.build(tape, xs)?;
    let w = tape.constant(weights.cast());
    if tape.shape(y) != weights.shape() {
        return Err(TensorError::ShapeMismatch { op: "objective", left: tape.shape(y), right: weights.shape() });
    }
    let prod = tape.mul(y, w)?;
    tape.sum(prod)
}

pub fn output_shape<P: Probe>(probe: &P, inputs: &[Tensor<f64>]) -> (usize, usize) {
    let mut tape = Tape::<f64>::new();
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let y = probe.build(&mut tape, &xs).expect("forward");
    tape.shape(y)
}

pub fn forward_value<P: Probe>(probe: &P, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> f64 {
    let mut tape = Tape::<f64>::new();
    let xs: Vec<Var> = inputs.iter().map(|x| tape.constant(x.clone())).collect();
    let loss = objective(probe, &mut tape, &xs, weights).expect("forward");
    tape.value(loss).item()
}

/// Central-difference gradient of the objective with respect to every input.
pub fn numeric_gradients<P: Probe>(probe: &P, inputs: &[Tensor<f64>], weights: &Tensor<f64>, h: f64) -> Vec<Tensor<f64>> {
    let mut out = Vec::new();
    for k in 0..inputs.len() {
        let (r, c) = inputs[k].shape();
        let mut g = Tensor::<f64>::zeros(r, c);
        for idx in 0..inputs[k].len() {
            let central = |step: f64| {
                let mut plus = inputs.to_vec();
                plus[k].data_mut()[idx] += step;
                let mut minus = inputs.to_vec();
                minus[k].data_mut()[idx] -= step;
                (forward_value(probe, &plus, weights) - forward_value(probe, &minus, weights)) / (2.0 * step)
            };
            g.data_mut()[idx] = (4.0 * central(h / 2.0) - central(h)) / 3.0;
        }
        out.push(g);
    }
    out
}

pub fn analytic_gradients<T: Real, P: Probe>(probe: &P, inputs: &[Tensor<f64>], weights: &Tensor<f64>) -> Vec<Tensor<f64>> {
    let mut tape = Tape::<T>::new();
    let xs: Vec<Var> = inputs.iter().map(|x| tape.leaf(x.cast(), true)).collect();
    let loss = objective(probe, &mut tape, &xs, weights).expect("forward");
    let grads = tape.backward(loss, 0).expect("backward");
    xs.iter()
        .zip(inputs)
        .map(|(&v, x)| grads.leaf(v).map(Tensor::cast).unwrap_or_else(|| Tensor::zeros(x.rows(), x.cols())))
        .collect()
}

/// Worst relative error of the f64 and f32 analytic gradients against the
/// f64 finite-difference oracle.
pub fn max_errors<P: Probe>(probe: &P, inputs: &[Tensor<f64>], rng: &mut ChaCha8Rng) -> (f64, f64) {
    let (r, c) = output_shape(probe, inputs);
    let weights = random_tensor(rng, r, c, 1.0);
    let numeric = numeric_gradients(probe, inputs, &weights, H);
    let a64 = analytic_gradients::<f64, P>(probe, inputs, &weights);
    let a32 = analytic_gradients::<f32, P>(probe, inputs, &weights);
    let worst = |a: &[Tensor<f64>]| {
        a.iter()
            .zip(&numeric)
            .flat_map(|(x, n)| x.data().iter().zip(n.data()).map(|(&p, &q)| rel_err(p, q)))
            .fold(0.0, f64::max)
    };
    (worst(&a64), worst(&a32))
}

pub fn random_tensor(rng: &mut ChaCha8Rng, rows: usize, cols: usize, scale: f64) -> Tensor<f64> {
    Tensor::new(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0) * scale).collect())
}

/// Random values bounded away from zero (for ops with a kink at 0).
pub fn random_away_from_zero(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Tensor<f64> {
    Tensor::new(
        rows,
        cols,
        (0..rows * cols)
            .map(|_| {
                let mag = rng.random_range(0.05..1.5);
                if rng.random_bool(0.5) { mag } else { -mag }
            })
            .collect(),
    )
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}
