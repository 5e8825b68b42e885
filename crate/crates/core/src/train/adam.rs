//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::model::{Gradients, ModelWeights};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 2e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment buffers shaped like the weights.
#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState {
    pub m: ModelWeights<f32>,
    pub v: ModelWeights<f32>,
    pub step: u64,
}

impl OptimizerState {
    pub fn new(weights: &ModelWeights<f32>) -> Self {
        Self {
            m: weights.zeros_like(),
            v: weights.zeros_like(),
            step: 0,
        }
    }
}

/// One update. Every gradient is checked before any weight changes, so a
/// non-finite gradient leaves weights and state untouched.
pub fn adam_step(
    weights: &mut ModelWeights<f32>,
    grads: &Gradients<f32>,
    state: &mut OptimizerState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, w) in weights.iter() {
        let g = grads.get(name)?;
        if g.shape() != w.shape() {
            return Err(Error::Dimension(format!(
                "gradient for `{name}` is {:?}, weight is {:?}",
                g.shape(),
                w.shape()
            )));
        }
        if !g.all_finite() {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - cfg.beta1.powi(t);
    let c2 = 1.0 - cfg.beta2.powi(t);
    for (name, w) in weights.iter_mut() {
        let g = grads.get(name)?.data();
        let m = state.m.get_mut(name)?.data_mut();
        let v = state.v.get_mut(name)?.data_mut();
        for (i, wi) in w.data_mut().iter_mut().enumerate() {
            let gi = g[i] as f64;
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = cfg.lr * (mi / c1) / ((vi / c2).sqrt() + cfg.eps);
            *wi = (*wi as f64 - update) as f32;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use std::collections::BTreeMap;

    fn single(v: f32) -> ModelWeights<f32> {
        ModelWeights::from_map(BTreeMap::from([("w".to_string(), Tensor::full([1], v))]))
    }

    #[test]
    fn first_step_moves_by_lr() {
        let cfg = AdamConfig::default();
        let mut w = single(0.5);
        let mut st = OptimizerState::new(&w);
        adam_step(&mut w, &single(1.0), &mut st, &cfg).unwrap();
        let expect = 0.5 - 2e-4 / (1.0 + 1e-8);
        assert_eq!(w.get("w").unwrap().data()[0], expect as f32);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn zero_gradient_keeps_weights() {
        let mut w = single(0.25);
        let mut st = OptimizerState::new(&w);
        for _ in 0..3 {
            adam_step(&mut w, &single(0.0), &mut st, &AdamConfig::default()).unwrap();
        }
        assert_eq!(w, single(0.25));
        assert_eq!(st.step, 3);
    }

    #[test]
    fn nan_gradient_names_the_parameter() {
        let mut w = single(0.25);
        let mut st = OptimizerState::new(&w);
        let e = adam_step(&mut w, &single(f32::NAN), &mut st, &AdamConfig::default()).unwrap_err();
        assert!(matches!(e, Error::NonFiniteGradient(ref n) if n == "w"));
        assert_eq!(st.step, 0);
        assert_eq!(w, single(0.25));
    }
}
