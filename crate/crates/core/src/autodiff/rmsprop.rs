use serde::{Deserialize, Serialize};

use crate::{Error, Result};

use super::{ModelParams, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RmspropConfig {
    /// Decay of the running mean square.
    pub rho: f64,
    pub learning_rate: f64,
    /// Added to the root mean square in the denominator.
    pub epsilon: f64,
}

impl Default for RmspropConfig {
    fn default() -> Self {
        Self { rho: 0.9, learning_rate: 1e-3, epsilon: 1e-8 }
    }
}

/// Per-parameter running mean of squared gradients.
#[derive(Debug, Clone)]
pub struct RmspropState {
    pub config: RmspropConfig,
    acc: Vec<Vec<f32>>,
}

impl RmspropState {
    pub fn new(config: RmspropConfig, params: &ModelParams) -> Self {
        Self { config, acc: params.iter().map(|(_, t)| vec![0.0; t.len()]).collect() }
    }

    pub fn accumulator(&self, i: usize) -> &[f32] {
        &self.acc[i]
    }

    /// `acc ← ρ·acc + (1−ρ)·g²; p ← p − η·g / (√acc + δ)`.
    ///
    /// Gradients are checked for finiteness before anything is touched.
    pub fn step(&mut self, params: &mut ModelParams, grads: &[Tensor]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(Error::Shape(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for ((name, p), g) in params.iter().zip(grads) {
            if p.shape() != g.shape() {
                return Err(Error::Shape(format!("gradient shape {:?} for parameter {name} {:?}", g.shape(), p.shape())));
            }
            if !g.all_finite() {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        let RmspropConfig { rho, learning_rate, epsilon } = self.config;
        for (((_, p), g), acc) in params.iter_mut().zip(grads).zip(&mut self.acc) {
            for ((w, &gv), a) in p.data_mut().iter_mut().zip(g.data()).zip(acc.iter_mut()) {
                let gv = gv as f64;
                let av = rho * *a as f64 + (1.0 - rho) * gv * gv;
                *a = av as f32;
                *w = (*w as f64 - learning_rate * gv / (av.sqrt() + epsilon)) as f32;
            }
        }
        Ok(())
    }
}
