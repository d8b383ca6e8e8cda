//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamSet;
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
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParamSet, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, _, t)| vec![0.0; t.numel()])
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update from the gradients stored on `params`, then zeroes them.
    pub fn step(&mut self, params: &mut ParamSet) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, got {}",
                self.m.len(),
                params.len()
            )));
        }
        for (id, name, t) in params.iter() {
            if t.grad().is_none() {
                return Err(Error::Contract(format!("parameter {name} has no gradient")));
            }
            if t.numel() != self.m[id.index()].len() {
                return Err(Error::Contract(format!("parameter {name} changed shape")));
            }
        }

        self.t += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);

        for ((tensor, m), v) in params.tensors_mut().zip(&mut self.m).zip(&mut self.v) {
            let grad = tensor.grad().expect("checked above").to_vec();
            for (((p, g), m), v) in tensor
                .values_mut()
                .iter_mut()
                .zip(&grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
            tensor.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tensor;

    fn single(value: f64, grad: f64) -> ParamSet {
        let mut ps = ParamSet::new();
        let id = ps.add("w", Tensor::vector(vec![value]));
        ps.get_mut(id).set_grad(Some(vec![grad])).unwrap();
        ps
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut ps = single(0.7, 0.0);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        adam.step(&mut ps).unwrap();
        assert_eq!(ps.by_name("w").unwrap().values(), &[0.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut ps = single(1.0, 1.0);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        adam.step(&mut ps).unwrap();
        // m_hat = v_hat = 1, so the step is lr / (1 + eps)
        let expected = 1.0 - 1e-3 / (1.0 + 1e-8);
        assert!((ps.by_name("w").unwrap().values()[0] - expected).abs() < 1e-15);
        assert_eq!(adam.steps(), 1);
        assert_eq!(ps.by_name("w").unwrap().grad(), Some(&[0.0][..]));
    }

    #[test]
    fn counter_increments_once_per_call() {
        let mut ps = single(1.0, 0.5);
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        for expected in 1..=3 {
            ps.get_mut(ps.id_of("w").unwrap())
                .set_grad(Some(vec![0.5]))
                .unwrap();
            adam.step(&mut ps).unwrap();
            assert_eq!(adam.steps(), expected);
        }
    }

    #[test]
    fn missing_gradient_is_an_error() {
        let mut ps = ParamSet::new();
        ps.add("w", Tensor::vector(vec![1.0]));
        let mut adam = AdamState::new(&ps, AdamConfig::default());
        assert!(matches!(adam.step(&mut ps), Err(Error::Contract(_))));
        assert_eq!(adam.steps(), 0);
    }
}
