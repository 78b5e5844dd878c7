//! Named parameter storage and the RMSprop update.

use std::collections::BTreeMap;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Named parameters plus RMSprop running squared-gradient state. Iteration
/// is always in name order, so updates are deterministic.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ParameterStore {
    params: BTreeMap<String, Tensor>,
    rms: BTreeMap<String, Tensor>,
}

impl ParameterStore {
    pub fn new() -> ParameterStore {
        ParameterStore::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) {
        self.params.insert(name.to_string(), value);
    }

    /// Uniform(-sqrt(1/fan_in), +sqrt(1/fan_in)) init; fan_in is the row
    /// count since inputs multiply from the left (x . W).
    pub fn init_uniform<R: Rng>(&mut self, name: &str, rows: usize, cols: usize, rng: &mut R) {
        let bound = (1.0 / rows as f64).sqrt();
        self.insert(name, Tensor::uniform(rows, cols, bound, rng));
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Tensor::zeros(rows, cols));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.params
            .get(name)
            .ok_or_else(|| Error::KeyMismatch(format!("unknown parameter `{name}`")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn parameter_count(&self) -> usize {
        self.params.values().map(|t| t.len()).sum()
    }

    /// v <- decay*v + (1-decay)*g^2 ; theta <- theta - lr*g / (sqrt(v) + eps).
    /// Gradient keys must equal parameter keys exactly.
    pub fn rmsprop_step(
        &mut self,
        grads: &BTreeMap<String, Tensor>,
        lr: f64,
        decay: f64,
        eps: f64,
    ) -> Result<()> {
        if grads.len() != self.params.len() || !grads.keys().all(|k| self.params.contains_key(k)) {
            let missing: Vec<&String> = self
                .params
                .keys()
                .filter(|k| !grads.contains_key(*k))
                .collect();
            let extra: Vec<&String> = grads
                .keys()
                .filter(|k| !self.params.contains_key(*k))
                .collect();
            return Err(Error::KeyMismatch(format!(
                "gradients missing {missing:?}, unexpected {extra:?}"
            )));
        }
        for (name, g) in grads {
            let theta = self.params.get_mut(name).expect("key checked");
            if g.shape() != theta.shape() {
                return Err(Error::KeyMismatch(format!(
                    "gradient shape {:?} for `{name}` does not match parameter {:?}",
                    g.shape(),
                    theta.shape()
                )));
            }
            let v = self
                .rms
                .entry(name.clone())
                .or_insert_with(|| Tensor::zeros(g.rows(), g.cols()));
            for ((t, vv), gg) in theta
                .data_mut()
                .iter_mut()
                .zip(v.data_mut())
                .zip(g.data())
            {
                *vv = decay * *vv + (1.0 - decay) * gg * gg;
                *t -= lr * gg / (vv.sqrt() + eps);
            }
        }
        Ok(())
    }
}
