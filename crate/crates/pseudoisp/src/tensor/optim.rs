//! Adam with bias correction.

use std::collections::BTreeMap;

use super::ParamSet;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct AdamState {
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
    pub step_count: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
            step_count: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// One Adam update over all parameters in the set. Gradients must already be
/// populated; they are left untouched for the caller to zero.
pub fn adam_step(params: &mut ParamSet, state: &mut AdamState) -> Result<()> {
    state.step_count += 1;
    let t = state.step_count as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (name, p) in params.iter_mut() {
        let n = p.numel();
        let grad = p
            .grad()
            .ok_or_else(|| Error::MissingGrad(name.clone()))?
            .to_vec();
        let m = state
            .first_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        let v = state
            .second_moment
            .entry(name.clone())
            .or_insert_with(|| vec![0.0; n]);
        if m.len() != n || v.len() != n {
            return Err(Error::ShapeMismatch(format!(
                "Adam moment buffers for '{name}' do not match parameter size {n}"
            )));
        }
        let data = p.data_mut();
        for i in 0..n {
            m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * grad[i];
            v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * grad[i] * grad[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            data[i] -= state.learning_rate * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap());
        params.zero_grads();
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &mut state).unwrap();
        assert_eq!(params.get("w").unwrap().data(), &[1.5, -0.5]);
        assert_eq!(state.step_count, 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap());
        params.get_mut("w").unwrap().accumulate_grad(&[1.0]).unwrap();
        let mut state = AdamState::new(0.1);
        adam_step(&mut params, &mut state).unwrap();
        let w = params.get("w").unwrap().data()[0];
        // Bias-corrected first step is -lr * g/(|g| + eps') ~ -lr.
        assert!((w + 0.1).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn missing_grad_is_an_error() {
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap());
        let mut state = AdamState::new(0.1);
        assert!(adam_step(&mut params, &mut state).is_err());
    }

    #[test]
    fn converges_on_quadratic() {
        // f(w) = (w-3)^2, grad = 2(w-3)
        let mut params = ParamSet::new();
        params.insert("w", Tensor::new(vec![1], vec![0.0]).unwrap());
        let mut state = AdamState::new(0.1);
        for _ in 0..100 {
            let w = params.get("w").unwrap().data()[0];
            let p = params.get_mut("w").unwrap();
            p.zero_grad();
            p.accumulate_grad(&[2.0 * (w - 3.0)]).unwrap();
            adam_step(&mut params, &mut state).unwrap();
        }
        let w = params.get("w").unwrap().data()[0];
        assert!((w - 3.0).abs() < 0.05, "w = {w}");
    }
}
