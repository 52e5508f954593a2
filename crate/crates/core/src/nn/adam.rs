//! Adam with bias correction.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::nn::graph::{Gradients, ModelGraph, ParamId};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone)]
struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

/// Optimizer state. Moments are keyed by [`ParamId`], so updates do not
/// depend on the order parameters are presented in.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub config: AdamConfig,
    step: u64,
    moments: BTreeMap<ParamId, Moments>,
}

impl AdamState {
    pub fn new(config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            moments: BTreeMap::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One Adam step over an arbitrary set of `(id, param, grad)` triples.
    pub fn update<'a, I>(&mut self, items: I) -> Result<()>
    where
        I: IntoIterator<Item = (ParamId, &'a mut [f64], &'a [f64])>,
    {
        let items: Vec<_> = items.into_iter().collect();
        for (id, p, g) in &items {
            if p.len() != g.len() {
                return Err(Error::param(format!(
                    "gradient for {id:?} has {} elements, parameter has {}",
                    g.len(),
                    p.len()
                )));
            }
            if let Some(m) = self.moments.get(id) {
                if m.m.len() != p.len() {
                    return Err(Error::param(format!(
                        "parameter {id:?} changed size since the previous step"
                    )));
                }
            }
        }

        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (id, p, g) in items {
            let mom = self.moments.entry(id).or_insert_with(|| Moments {
                m: vec![0.0; p.len()],
                v: vec![0.0; p.len()],
            });
            for i in 0..p.len() {
                let gi = g[i];
                mom.m[i] = beta1 * mom.m[i] + (1.0 - beta1) * gi;
                mom.v[i] = beta2 * mom.v[i] + (1.0 - beta2) * gi * gi;
                let m_hat = mom.m[i] / c1;
                let v_hat = mom.v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
        }
        Ok(())
    }

    /// Applies `grads` to every trainable parameter of `graph`.
    pub fn step(&mut self, graph: &mut ModelGraph, grads: &Gradients) -> Result<()> {
        let mut items = Vec::new();
        for (id, p) in graph.params_mut() {
            let g = grads
                .get(id)
                .ok_or_else(|| Error::param(format!("missing gradient for {id:?}")))?;
            items.push((id, p, g));
        }
        self.update(items)
    }
}
