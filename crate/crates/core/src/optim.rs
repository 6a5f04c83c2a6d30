//! Adam with bias correction.

use serde::{Deserialize, Serialize};

use crate::autodiff::ParamStore;
use crate::error::{invalid, Result};
use crate::scalar::Real;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamConfig {
            learning_rate,
            ..Default::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0) {
            return Err(invalid("AdamConfig", "learning_rate must be > 0"));
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0) || !(self.beta2 > 0.0 && self.beta2 < 1.0) {
            return Err(invalid("AdamConfig", "beta1 and beta2 must lie in (0, 1)"));
        }
        if !(self.epsilon > 0.0) {
            return Err(invalid("AdamConfig", "epsilon must be > 0"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct HuberConfig {
    pub delta: f64,
}

impl Default for HuberConfig {
    fn default() -> Self {
        HuberConfig { delta: 1.0 }
    }
}

impl HuberConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.delta > 0.0) {
            return Err(invalid("HuberConfig", "delta must be > 0"));
        }
        Ok(())
    }
}

/// One Adam update of every parameter, then clears the gradients.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, config: &AdamConfig) {
    let lr = T::lit(config.learning_rate);
    let b1 = T::lit(config.beta1);
    let b2 = T::lit(config.beta2);
    let eps = T::lit(config.epsilon);
    let one = T::one();
    for p in params.iter_mut() {
        p.step_count += 1;
        let t = p.step_count as i32;
        let c1 = one - b1.powi(t);
        let c2 = one - b2.powi(t);
        let (value, grad, m, v) = (
            p.value.data_mut(),
            p.grad.data_mut(),
            p.moment1.data_mut(),
            p.moment2.data_mut(),
        );
        for i in 0..value.len() {
            let g = grad[i];
            m[i] = b1 * m[i] + (one - b1) * g;
            v[i] = b2 * v[i] + (one - b2) * g * g;
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            value[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            grad[i] = T::zero();
        }
    }
}
