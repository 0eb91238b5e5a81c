use crate::error::{Error, Result};
use crate::params::ParameterStore;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment buffers for every tensor of a [`ParameterStore`].
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(params: &ParameterStore, config: AdamConfig) -> Self {
        let zeros = || {
            params
                .iter()
                .map(|(_, p)| vec![0.0; p.numel()])
                .collect::<Vec<_>>()
        };
        Self {
            config,
            m: zeros(),
            v: zeros(),
            t: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn first_moment(&self, index: usize) -> &[f64] {
        &self.m[index]
    }

    pub fn second_moment(&self, index: usize) -> &[f64] {
        &self.v[index]
    }

    /// One bias-corrected Adam update. `grads[i]` pairs with the i-th
    /// parameter of the store. Nothing is modified if any gradient is
    /// non-finite.
    pub fn step(&mut self, params: &mut ParameterStore, grads: &[Vec<f64>], lr: f64) -> Result<()> {
        if !(lr >= 0.0 && lr.is_finite()) {
            return Err(Error::contract(format!("learning rate must be >= 0, got {lr}")));
        }
        if grads.len() != params.len() || grads.len() != self.m.len() {
            return Err(Error::contract(format!(
                "adam: {} gradients for {} parameters ({} tracked)",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        for (i, (name, p)) in params.iter().enumerate() {
            if grads[i].len() != p.numel() || self.m[i].len() != p.numel() {
                return Err(Error::Shape {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: vec![grads[i].len()],
                });
            }
            if grads[i].iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient {
                    param: name.to_string(),
                });
            }
        }

        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let g = grads[i][j];
                m[j] = beta1 * m[j] + (1.0 - beta1) * g;
                v[j] = beta2 * v[j] + (1.0 - beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        params.bump_version();
        Ok(())
    }
}
