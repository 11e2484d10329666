//! Bias-corrected Adam.

use serde::{Deserialize, Serialize};

use super::layers::Param;
use super::tensor::Real;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub step: u64,
    /// First moments, one array per parameter in network order.
    pub m: Vec<Vec<T>>,
    pub v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    pub fn new(config: AdamConfig, params: &[&Param<T>]) -> Self {
        let zeros = || params.iter().map(|p| vec![T::zero(); p.value.len()]).collect();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    /// Applies one update from the accumulated gradients.
    pub fn step(&mut self, params: &mut [&mut Param<T>]) -> Result<()> {
        if params.len() != self.m.len() || params.iter().zip(&self.m).any(|(p, m)| p.value.len() != m.len()) {
            return Err(Error::ShapeMismatch("optimizer state does not match parameters".into()));
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let (ob1, ob2) = (T::of(1.0 - c.beta1), T::of(1.0 - c.beta2));
        let (ibc1, ibc2) = (T::of(1.0 / bc1), T::of(1.0 / bc2));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for ((p, m), v) in params.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.value.len() {
                let g = p.grad[i];
                m[i] = b1 * m[i] + ob1 * g;
                v[i] = b2 * v[i] + ob2 * g * g;
                let mh = m[i] * ibc1;
                let vh = v[i] * ibc2;
                p.value[i] = p.value[i] - lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(w: f64, g: f64) -> Param<f64> {
        Param { name: "w".into(), shape: vec![1], value: vec![w], grad: vec![g] }
    }

    #[test]
    fn first_step_matches_hand_computation() {
        let mut p = scalar(0.0, 1.0);
        let cfg = AdamConfig { lr: 0.1, ..Default::default() };
        let mut st = AdamState::new(cfg, &[&p]);
        st.step(&mut [&mut p]).unwrap();
        // m = 0.1, v = 0.001, both bias-correct to 1
        let want = -0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p.value[0] - want).abs() < 1e-15);
        assert!((p.value[0] + 0.09999999).abs() < 1e-8);
    }

    #[test]
    fn zero_gradient_leaves_parameters_and_counts_step() {
        let mut p = scalar(0.7, 0.0);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        st.step(&mut [&mut p]).unwrap();
        assert_eq!(p.value[0], 0.7);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn constant_gradient_moves_against_its_sign() {
        for g in [-2.0, 3.0] {
            let mut p = scalar(1.0, g);
            let mut st = AdamState::new(AdamConfig::default(), &[&p]);
            let mut prev = p.value[0];
            for _ in 0..2 {
                st.step(&mut [&mut p]).unwrap();
                assert!((p.value[0] - prev) * g < 0.0);
                prev = p.value[0];
            }
        }
    }
}
