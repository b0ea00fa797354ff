use serde::{Deserialize, Serialize};

use super::graph::{Gradients, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Global gradient-norm clip; `None` disables clipping.
    pub clip_norm: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            clip_norm: Some(1.0),
        }
    }
}

/// Adam moment estimates for one parameter store.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.values().iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut ParamStore, grads: &Gradients) {
        let c = self.config;
        let mut scale = 1.0;
        if let Some(max) = c.clip_norm {
            let norm = grads.norm();
            if norm > max {
                scale = max / norm;
            }
        }
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for (i, p) in params.values_mut().iter_mut().enumerate() {
            let (m, v) = (&mut self.m[i], &mut self.v[i]);
            for (j, (w, g)) in p.data.iter_mut().zip(&grads.0[i].data).enumerate() {
                let g = g * scale;
                m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * g;
                v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                *w -= c.learning_rate * m_hat / (v_hat.sqrt() + c.eps);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::Matrix;

    #[test]
    fn zero_learning_rate_leaves_parameters() {
        let mut store = ParamStore::new();
        store.add("w", Matrix::from_vec(1, 2, vec![1.0, -2.0]));
        let before = store.clone();
        let mut grads = store.zero_grads();
        grads.0[0].data = vec![0.3, -0.1];
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.0,
                ..AdamConfig::default()
            },
            &store,
        );
        adam.step(&mut store, &grads);
        assert_eq!(store, before);
    }

    #[test]
    fn minimizes_a_quadratic() {
        let mut store = ParamStore::new();
        let id = store.add("w", Matrix::from_vec(1, 1, vec![3.0]));
        let mut adam = Adam::new(
            AdamConfig {
                learning_rate: 0.1,
                clip_norm: None,
                ..AdamConfig::default()
            },
            &store,
        );
        for _ in 0..300 {
            let mut grads = store.zero_grads();
            grads.0[0].data[0] = 2.0 * store.get(id).data[0];
            adam.step(&mut store, &grads);
        }
        assert!(store.get(id).data[0].abs() < 0.05);
    }
}
