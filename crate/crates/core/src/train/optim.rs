//! Adam with optional decoupled weight decay; per-parameter state keyed by name.

use std::collections::HashMap;

use ict_ndgrad::{Array, ParamStore};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl AdamConfig {
    /// Transformer recipe: β = (0.9, 0.95), no weight decay.
    pub const TRANSFORMER: AdamConfig = AdamConfig {
        beta1: 0.9,
        beta2: 0.95,
        eps: 1e-8,
        weight_decay: 0.0,
    };

    /// Adversarial recipe: β = (0.0, 0.9).
    pub const GAN: AdamConfig = AdamConfig {
        beta1: 0.0,
        beta2: 0.9,
        eps: 1e-8,
        weight_decay: 0.0,
    };
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct AdamW {
    config: AdamConfig,
    t: u64,
    state: HashMap<String, Moments>,
}

impl AdamW {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            t: 0,
            state: HashMap::new(),
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected update of every parameter in `params`.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamStore, lr: f64) -> Result<()> {
        for (name, p) in params.iter() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::Invalid(format!("no gradient for `{name}`")))?;
            if g.shape() != p.shape() {
                return Err(Error::Dimensions(format!(
                    "gradient of `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    p.shape()
                )));
            }
        }
        self.t += 1;
        let AdamConfig {
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.config;
        let c1 = 1.0 - beta1.powi(self.t as i32);
        let c2 = 1.0 - beta2.powi(self.t as i32);
        for (name, p) in params.iter_mut() {
            let g = grads.get(name).map(Array::data).unwrap_or_default();
            let st = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for (((x, &gi), m), v) in p.data_mut().iter_mut().zip(g).zip(&mut st.m).zip(&mut st.v) {
                *m = beta1 * *m + (1.0 - beta1) * gi;
                *v = beta2 * *v + (1.0 - beta2) * gi * gi;
                let mhat = *m / c1;
                let vhat = *v / c2;
                if weight_decay != 0.0 {
                    *x -= lr * weight_decay * *x;
                }
                *x -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
