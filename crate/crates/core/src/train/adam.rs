use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BestSnapshot {
    pub epoch: usize,
    pub val_loss: f64,
    pub params: Vec<f64>,
}

/// Everything the optimizer carries between epochs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    /// Completed epochs.
    pub epoch: usize,
    /// Applied optimizer steps.
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub lr: f64,
    pub lr_decay: f64,
    pub adam: AdamConfig,
    pub best: Option<BestSnapshot>,
    pub rng: ChaCha8Rng,
}

impl TrainState {
    pub fn new(n_params: usize, lr: f64, lr_decay: f64, seed: u64) -> Result<Self> {
        if !(lr.is_finite() && lr > 0.0) || !(lr_decay.is_finite() && lr_decay > 0.0) {
            return Err(Error::Config(format!("invalid learning rate {lr} / decay {lr_decay}")));
        }
        Ok(Self {
            epoch: 0,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            lr,
            lr_decay,
            adam: AdamConfig::default(),
            best: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }
}

/// Bias-corrected Adam update. Non-finite gradients leave both the
/// parameters and the state untouched.
pub fn adam_step(state: &mut TrainState, params: &mut [f64], grads: &[f64]) -> Result<()> {
    check_len("gradient", params.len(), grads.len())?;
    check_len("optimizer moments", params.len(), state.m.len())?;
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::Divergence(format!("non-finite gradient at parameter {i}")));
    }
    let AdamConfig { beta1, beta2, eps } = state.adam;
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - beta1.powi(t);
    let c2 = 1.0 - beta2.powi(t);
    let lr = state.lr;
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = beta1 * *m + (1.0 - beta1) * g;
        *v = beta2 * *v + (1.0 - beta2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// Exponential learning-rate decay, applied once per epoch.
pub fn lr_decay(state: &mut TrainState) {
    state.lr *= state.lr_decay;
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_closed_form() {
        let mut s = TrainState::new(1, 0.01, 0.9999, 0).unwrap();
        let mut p = [1.0];
        adam_step(&mut s, &mut p, &[2.0]).unwrap();
        let expected = 1.0 - 0.01 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - expected).abs() < 1e-15);
        assert!((p[0] - 0.99).abs() < 1e-9);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut s = TrainState::new(2, 0.01, 1.0, 0).unwrap();
        let mut p = [0.5, -0.5];
        adam_step(&mut s, &mut p, &[1.0, -1.0]).unwrap();
        let (m, v) = (s.m.clone(), s.v.clone());
        let before = p;
        s.m.iter_mut().for_each(|x| *x = 0.0);
        s.v.iter_mut().for_each(|x| *x = 0.0);
        adam_step(&mut s, &mut p, &[0.0, 0.0]).unwrap();
        assert_eq!(p, before);
        // with stored moments, zero gradient shrinks them
        s.m = m.clone();
        s.v = v.clone();
        let mut q = [0.0, 0.0];
        adam_step(&mut s, &mut q, &[0.0, 0.0]).unwrap();
        assert!(s.m[0].abs() < m[0].abs() && s.v[0] < v[0]);
    }

    #[test]
    fn constant_gradient_moves_monotonically() {
        // 10 hand-iterated steps of the same recursion
        let (b1, b2, eps, lr, g) = (0.9f64, 0.999f64, 1e-8, 0.01, -3.0);
        let (mut m, mut v, mut oracle) = (0.0, 0.0, 0.0f64);
        let mut s = TrainState::new(1, lr, 1.0, 0).unwrap();
        let mut p = [0.0];
        let mut last = 0.0;
        for t in 1..=10 {
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            oracle -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
            adam_step(&mut s, &mut p, &[g]).unwrap();
            assert!(p[0] > last);
            last = p[0];
        }
        assert!((p[0] - oracle).abs() < 1e-15);
    }

    #[test]
    fn non_finite_rejected_without_side_effects() {
        let mut s = TrainState::new(2, 0.01, 1.0, 0).unwrap();
        let mut p = [1.0, 2.0];
        let before = s.clone();
        assert!(adam_step(&mut s, &mut p, &[1.0, f64::NAN]).is_err());
        assert_eq!(p, [1.0, 2.0]);
        assert_eq!(s, before);
    }

    #[test]
    fn decay_schedule() {
        let mut s = TrainState::new(1, 0.01, 0.9999, 0).unwrap();
        assert_eq!(s.lr, 0.01);
        for _ in 0..6000 {
            lr_decay(&mut s);
        }
        assert!((s.lr - 0.01 * 0.9999f64.powi(6000)).abs() < 1e-15);
        assert!((s.lr - 0.005488).abs() < 1e-6);
        let mut c = TrainState::new(1, 0.01, 1.0, 0).unwrap();
        lr_decay(&mut c);
        assert_eq!(c.lr, 0.01);
    }
}
