use crate::error::{Error, Result};
use crate::numcore::tensor::Tensor2;
use serde::{Deserialize, Serialize};

/// Adam moment accumulators, one pair per parameter tensor.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AdamState {
    pub first: Vec<Tensor2>,
    pub second: Vec<Tensor2>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &[Tensor2]) -> Self {
        AdamState {
            first: params.iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect(),
            second: params.iter().map(|p| Tensor2::zeros(p.rows, p.cols)).collect(),
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// One Adam update with bias correction, in place.
pub fn adam_step(
    params: &mut [Tensor2],
    grads: &[Tensor2],
    state: &mut AdamState,
    lr: f64,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Shape("adam_step: parameter/gradient count mismatch".into()));
    }
    state.step += 1;
    let t = state.step as f64;
    let bc1 = 1.0 - state.beta1.powf(t);
    let bc2 = 1.0 - state.beta2.powf(t);
    for (i, p) in params.iter_mut().enumerate() {
        if !p.same_shape(&grads[i]) {
            return Err(Error::Shape(format!("adam_step: param {i} shape mismatch")));
        }
        let m = &mut state.first[i];
        let v = &mut state.second[i];
        for j in 0..p.data.len() {
            let g = grads[i].data[j];
            m.data[j] = state.beta1 * m.data[j] + (1.0 - state.beta1) * g;
            v.data[j] = state.beta2 * v.data[j] + (1.0 - state.beta2) * g * g;
            let m_hat = m.data[j] / bc1;
            let v_hat = v.data[j] / bc2;
            p.data[j] -= lr * m_hat / (v_hat.sqrt() + state.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut params = vec![Tensor2::from_row(&[1.0, -2.0, 3.0])];
        let grads = vec![Tensor2::zeros(1, 3)];
        let mut state = AdamState::new(&params);
        adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
        assert_eq!(params[0].data, vec![1.0, -2.0, 3.0]);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn single_step_from_zero_state_is_lr_sign() {
        // with zero moments and bias correction, |update| = lr / (1 + eps') ≈ lr
        for &g in &[3.7, -0.002, 120.0] {
            let mut params = vec![Tensor2::scalar(0.5)];
            let grads = vec![Tensor2::scalar(g)];
            let mut state = AdamState::new(&params);
            adam_step(&mut params, &grads, &mut state, 0.01).unwrap();
            let delta = params[0].data[0] - 0.5;
            assert!(
                (delta + 0.01 * g.signum()).abs() < 1e-6,
                "g={g} delta={delta}"
            );
        }
    }

    #[test]
    fn constant_gradient_update_approaches_lr_sign() {
        // scalar simulation oracle: long-run step size tends to lr·sign(g)
        let mut params = vec![Tensor2::scalar(0.0)];
        let grads = vec![Tensor2::scalar(2.5)];
        let mut state = AdamState::new(&params);
        let lr = 0.01;
        let mut prev = 0.0;
        let mut last_delta = 0.0;
        for _ in 0..500 {
            adam_step(&mut params, &grads, &mut state, lr).unwrap();
            last_delta = params[0].data[0] - prev;
            prev = params[0].data[0];
        }
        assert!((last_delta + lr).abs() < 1e-6, "delta {last_delta}");
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut params = vec![Tensor2::zeros(2, 2)];
        let grads = vec![Tensor2::zeros(2, 3)];
        let mut state = AdamState::new(&params);
        assert!(adam_step(&mut params, &grads, &mut state, 0.01).is_err());
    }
}
