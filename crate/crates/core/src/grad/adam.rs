use serde::{Deserialize, Serialize};

use super::params::{Gradients, ParamStore};
use super::tensor::Tensor;
use super::GradError;

/// Adam constants. `beta2` defaults to 0.999.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn new(lr: f64, beta1: f64, eps: f64) -> Self {
        AdamConfig { lr, beta1, beta2: 0.999, eps }
    }

    pub fn validate(&self) -> Result<(), GradError> {
        if !(self.lr > 0.0) {
            return Err(GradError::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(GradError::Config(format!(
                "betas must lie in [0, 1), got {} and {}",
                self.beta1, self.beta2
            )));
        }
        if !(self.eps > 0.0) {
            return Err(GradError::Config(format!("epsilon must be > 0, got {}", self.eps)));
        }
        Ok(())
    }
}

/// Per-parameter moment estimates plus the step counter.
#[derive(Clone, Debug)]
pub struct AdamState {
    config: AdamConfig,
    t: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Result<Self, GradError> {
        config.validate()?;
        let zeros: Vec<Tensor> = params.iter().map(|(_, _, t)| Tensor::zeros(t.shape())).collect();
        Ok(AdamState { config, t: 0, m: zeros.clone(), v: zeros })
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// `p ← p − lr · m̂ / (√v̂ + eps)` with bias-corrected moments.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        self.t += 1;
        let AdamConfig { lr, beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for id in params.ids().collect::<Vec<_>>() {
            let g = grads.param(id).data();
            let m = self.m[id.index()].data_mut();
            let v = self.v[id.index()].data_mut();
            let p = params.get_mut(id).data_mut();
            for k in 0..p.len() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * g[k];
                v[k] = beta2 * v[k] + (1.0 - beta2) * g[k] * g[k];
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_store(value: f64) -> ParamStore {
        let mut store = ParamStore::new();
        store.add("p", Tensor::vector(vec![value]));
        store
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut store = scalar_store(0.7);
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.9, 1e-8), &store).unwrap();
        let grads = Gradients::zeros_like(&store);
        for _ in 0..5 {
            adam.step(&mut store, &grads);
        }
        assert_eq!(store.get(store.id("p").unwrap()).data(), &[0.7]);
        assert_eq!(adam.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut store = scalar_store(0.0);
        let id = store.id("p").unwrap();
        let mut adam = AdamState::new(AdamConfig::new(0.1, 0.9, 1e-8), &store).unwrap();
        let mut grads = Gradients::zeros_like(&store);
        grads.param_mut(id).data_mut()[0] = 1.0;
        adam.step(&mut store, &grads);
        // m̂ = v̂ = 1, so the step is lr / (1 + eps)
        let expected = -0.1 / (1.0 + 1e-8);
        assert!((store.get(id).item() - expected).abs() < 1e-15);
    }

    #[test]
    fn accepts_large_epsilon_and_low_beta1() {
        let store = scalar_store(0.0);
        let adam = AdamState::new(AdamConfig::new(0.005, 0.5, 0.1), &store).unwrap();
        assert_eq!(adam.config().eps, 0.1);
        assert_eq!(adam.config().beta1, 0.5);
        assert_eq!(adam.config().beta2, 0.999);
    }

    #[test]
    fn rejects_bad_constants() {
        let store = scalar_store(0.0);
        assert!(AdamState::new(AdamConfig::new(0.0, 0.9, 1e-8), &store).is_err());
        assert!(AdamState::new(AdamConfig::new(0.1, 1.0, 1e-8), &store).is_err());
        assert!(AdamState::new(AdamConfig::new(0.1, 0.9, 0.0), &store).is_err());
    }
}
