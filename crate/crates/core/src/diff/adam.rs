use serde::{Deserialize, Serialize};

use super::tape::Gradients;
use super::tensor::{Real, Tensor};
use super::{ParamSet, TensorError};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates, one pair per parameter.
#[derive(Clone, Debug)]
pub struct AdamState<T: Real = f32> {
    pub config: AdamConfig,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
    step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = |t: &Tensor<T>| Tensor::zeros(t.rows(), t.cols());
        let m = params.iter().map(|(_, _, t)| zeros(t)).collect::<Vec<_>>();
        let v = m.clone();
        Self { config, m, v, step: 0 }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update. Parameters without a gradient are
/// treated as having a zero gradient.
pub fn adam_step<T: Real>(params: &mut ParamSet<T>, grads: &Gradients<T>, state: &mut AdamState<T>) -> Result<(), TensorError> {
    if !grads.all_finite() {
        return Err(TensorError::NonFiniteValue { op: "adam_step" });
    }
    state.step += 1;
    let c = state.config;
    let f = T::from_f64_lossy;
    let (b1, b2, lr, eps) = (f(c.beta1), f(c.beta2), f(c.lr), f(c.eps));
    let t = state.step as i32;
    let bc1 = T::one() - b1.powi(t);
    let bc2 = T::one() - b2.powi(t);
    let ids: Vec<_> = params.ids().collect();
    for id in ids {
        let i = id.index();
        let g = grads.param(id);
        let m = state.m[i].data_mut();
        let v = state.v[i].data_mut();
        let p = params.get_mut(id).data_mut();
        for k in 0..p.len() {
            let gk = g.map_or(T::zero(), |g| g.data()[k]);
            m[k] = b1 * m[k] + (T::one() - b1) * gk;
            v[k] = b2 * v[k] + (T::one() - b2) * gk * gk;
            let m_hat = m[k] / bc1;
            let v_hat = v[k] / bc2;
            p[k] = p[k] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    if !params.all_finite() {
        return Err(TensorError::NonFiniteValue { op: "adam_step" });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diff::Tape;

    fn one_param(value: f32) -> (ParamSet<f32>, crate::diff::ParamId) {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::scalar(value));
        (ps, id)
    }

    fn constant_grad(ps: &ParamSet<f32>, id: crate::diff::ParamId, g: f32) -> Gradients<f32> {
        // loss = g * w  =>  dL/dw = g
        let mut tape = Tape::new();
        let w = tape.param(ps, id);
        let loss = tape.scale(w, g).unwrap();
        tape.backward(loss, ps.len()).unwrap()
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let (mut ps, _) = one_param(0.37);
        let before = ps.clone();
        let mut st = AdamState::new(&ps, AdamConfig::default());
        let grads = Gradients::empty(ps.len());
        for _ in 0..5 {
            adam_step(&mut ps, &grads, &mut st).unwrap();
        }
        assert_eq!(ps, before);
    }

    #[test]
    fn step_count_increments_once_per_call() {
        let (mut ps, id) = one_param(1.0);
        let mut st = AdamState::new(&ps, AdamConfig::default());
        for expected in 1..=3 {
            let g = constant_grad(&ps, id, 0.5);
            adam_step(&mut ps, &g, &mut st).unwrap();
            assert_eq!(st.step_count(), expected);
        }
    }

    #[test]
    fn constant_gradient_moves_by_lr_per_step() {
        let (mut ps, id) = one_param(0.0);
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(&ps, cfg);
        let mut prev = 0.0f32;
        let mut last_delta = 0.0f32;
        for _ in 0..1000 {
            let g = constant_grad(&ps, id, 3.0);
            adam_step(&mut ps, &g, &mut st).unwrap();
            let now = ps.get(id).item();
            last_delta = (now - prev).abs();
            prev = now;
        }
        let rel = ((last_delta as f64) - cfg.lr).abs() / cfg.lr;
        assert!(rel < 0.05, "late-step update {last_delta} vs lr {}", cfg.lr);
    }

    #[test]
    fn zero_learning_rate_is_a_no_op() {
        let (mut ps, id) = one_param(2.5);
        let mut st = AdamState::new(&ps, AdamConfig { lr: 0.0, ..AdamConfig::default() });
        for _ in 0..10 {
            let g = constant_grad(&ps, id, -1.0);
            adam_step(&mut ps, &g, &mut st).unwrap();
        }
        assert_eq!(ps.get(id).item(), 2.5);
    }
}
