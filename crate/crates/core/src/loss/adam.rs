use serde::{Deserialize, Serialize};

use super::LossError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub learning_rate: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            learning_rate: 4e-4,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    #[allow(clippy::neg_cmp_op_on_partial_ord)] // NaN is rejected too
    fn validate(&self) -> Result<(), LossError> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(LossError::InvalidHyperparameter("decay rates must lie in [0, 1)"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(LossError::InvalidHyperparameter("learning rate must be positive"));
        }
        if !(self.epsilon > 0.0) {
            return Err(LossError::InvalidHyperparameter("epsilon must be positive"));
        }
        Ok(())
    }
}

/// Parameters plus first/second moment estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub theta: Vec<f64>,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    /// Number of steps taken so far.
    pub t: u64,
    pub config: AdamConfig,
}

impl AdamState {
    /// Zero moments at step 0.
    pub fn new(theta: Vec<f64>, config: AdamConfig) -> Result<Self, LossError> {
        config.validate()?;
        let n = theta.len();
        Ok(Self {
            theta,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            config,
        })
    }

    /// One update; the step counter advances before bias correction.
    pub fn step(&self, grad: &[f64]) -> Result<AdamState, LossError> {
        if grad.len() != self.theta.len() {
            return Err(LossError::LengthMismatch {
                expected: self.theta.len(),
                got: grad.len(),
            });
        }
        let AdamConfig {
            beta1,
            beta2,
            learning_rate,
            epsilon,
        } = self.config;
        let t = self.t + 1;
        let c1 = 1.0 - beta1.powf(t as f64);
        let c2 = 1.0 - beta2.powf(t as f64);

        let mut next = AdamState {
            theta: Vec::with_capacity(grad.len()),
            m: Vec::with_capacity(grad.len()),
            v: Vec::with_capacity(grad.len()),
            t,
            config: self.config,
        };
        for (i, &g) in grad.iter().enumerate() {
            let m = beta1 * self.m[i] + (1.0 - beta1) * g;
            let v = beta2 * self.v[i] + (1.0 - beta2) * g * g;
            let m_hat = m / c1;
            let v_hat = v / c2;
            next.theta
                .push(self.theta[i] - learning_rate * m_hat / (v_hat.sqrt() + epsilon));
            next.m.push(m);
            next.v.push(v);
        }
        Ok(next)
    }

    /// Bias-corrected first moment at the current step.
    pub fn m_hat(&self) -> Vec<f64> {
        let c = 1.0 - self.config.beta1.powf(self.t as f64);
        self.m.iter().map(|m| m / c).collect()
    }

    pub fn v_hat(&self) -> Vec<f64> {
        let c = 1.0 - self.config.beta2.powf(self.t as f64);
        self.v.iter().map(|v| v / c).collect()
    }
}
