use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numcore::{ParamTensor, Scalar};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
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
}

#[derive(Debug, Clone)]
struct Moments<T> {
    first: Vec<T>,
    second: Vec<T>,
    steps: u64,
}

/// Bias-corrected Adam. Moments are keyed by tensor name; a tensor that is
/// not passed to a step keeps its moments and its own step count untouched.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    config: AdamConfig,
    step_count: u64,
    moments: HashMap<String, Moments<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig) -> Self {
        Adam {
            config,
            step_count: 0,
            moments: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// Applies one update to every trainable tensor and zeroes all gradients.
    ///
    /// A non-finite gradient aborts the step before any tensor is modified.
    pub fn step(&mut self, params: &mut [&mut ParamTensor<T>]) -> Result<()> {
        for p in params.iter().filter(|p| p.trainable()) {
            if let Some(i) = p.grad().iter().position(|g| !g.is_finite()) {
                return Err(Error::NonFinite(format!("gradient of {}[{i}]", p.name())));
            }
            if let Some(m) = self.moments.get(p.name()) {
                if m.first.len() != p.numel() {
                    return Err(Error::shape(
                        format!("Adam moments for {}", p.name()),
                        m.first.len(),
                        p.numel(),
                    ));
                }
            }
        }
        self.step_count += 1;
        let lr = T::lit(self.config.learning_rate);
        let (b1, b2) = (T::lit(self.config.beta1), T::lit(self.config.beta2));
        let eps = T::lit(self.config.epsilon);
        for p in params.iter_mut() {
            if !p.trainable() {
                p.zero_grad();
                continue;
            }
            let n = p.numel();
            let m = self.moments.entry(p.name().to_string()).or_insert_with(|| Moments {
                first: vec![T::zero(); n],
                second: vec![T::zero(); n],
                steps: 0,
            });
            m.steps += 1;
            let t = m.steps as i32;
            let c1 = T::one() - T::lit(self.config.beta1.powi(t));
            let c2 = T::one() - T::lit(self.config.beta2.powi(t));
            let (values, grad) = p.split_mut();
            for i in 0..n {
                let g = grad[i];
                m.first[i] = b1 * m.first[i] + (T::one() - b1) * g;
                m.second[i] = b2 * m.second[i] + (T::one() - b2) * g * g;
                let m_hat = m.first[i] / c1;
                let v_hat = m.second[i] / c2;
                values[i] -= lr * m_hat / (v_hat.sqrt() + eps);
                grad[i] = T::zero();
            }
        }
        Ok(())
    }
}
