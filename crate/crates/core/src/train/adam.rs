//! Bias-corrected Adam.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl AdamState {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: BETA1, beta2: BETA2, eps: EPSILON, step: 0, moments: BTreeMap::new() }
    }

    /// First and second moments of a parameter, once it has been stepped.
    pub fn moments(&self, name: &str) -> Option<(&[f64], &[f64])> {
        self.moments.get(name).map(|(m, v)| (m.as_slice(), v.as_slice()))
    }

    /// Updates every parameter in place. Every parameter needs a gradient of
    /// matching shape; anything else is a configuration error and leaves the
    /// parameters untouched.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor)>,
        grads: &[(String, Tensor)],
    ) -> Result<()> {
        let lookup: BTreeMap<&str, &Tensor> = grads.iter().map(|(n, g)| (n.as_str(), g)).collect();
        let params: Vec<(&str, &mut Tensor)> = params.into_iter().collect();
        for (name, p) in &params {
            let g = lookup
                .get(name)
                .ok_or_else(|| Error::Config(format!("no gradient for parameter {name:?}")))?;
            if g.shape() != p.shape() {
                return Err(Error::Config(format!(
                    "gradient for {name:?} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params {
            let g = lookup[name].data();
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (vec![0.0; g.len()], vec![0.0; g.len()]));
            for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g).zip(m.iter_mut()).zip(v.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(name: &str, v: f64) -> (String, Tensor) {
        (name.to_string(), Tensor::new(vec![1], vec![v]).unwrap())
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut w = Tensor::new(vec![2], vec![0.5, -1.0]).unwrap();
        let mut adam = AdamState::new(0.1);
        adam.step([("w", &mut w)], &[("w".to_string(), Tensor::zeros(&[2]))]).unwrap();
        assert_eq!(w.data(), &[0.5, -1.0]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn first_step_is_lr_times_sign() {
        // m_hat = g, v_hat = g^2, so the step is lr * g / (|g| + eps)
        let mut w = Tensor::scalar(0.0).reshaped(&[1]).unwrap();
        let mut adam = AdamState::new(0.01);
        adam.step([("w", &mut w)], &[one("w", 3.0)]).unwrap();
        let expect = -0.01 * 3.0 / (3.0 + EPSILON);
        assert!((w.data()[0] - expect).abs() < 1e-15);
    }

    #[test]
    fn quadratic_converges() {
        let mut w = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut adam = AdamState::new(0.1);
        for _ in 0..200 {
            let g = 2.0 * w.data()[0];
            adam.step([("w", &mut w)], &[one("w", g)]).unwrap();
        }
        assert!(w.data()[0].abs() < 1e-2, "w = {}", w.data()[0]);
    }

    #[test]
    fn missing_gradient_is_config_error() {
        let mut w = Tensor::zeros(&[1]);
        let mut adam = AdamState::new(0.1);
        let err = adam.step([("w", &mut w)], &[one("v", 1.0)]).unwrap_err();
        assert!(matches!(err, Error::Config(_)));
        assert_eq!(adam.step, 0);
    }
}
