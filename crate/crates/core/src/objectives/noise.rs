use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseMode {
    /// Exact gradients.
    None,
    /// Zero-mean isotropic Gaussian added to the exact gradient, with
    /// per-coordinate std `sigma/√d` so that `E‖g − ∇F‖² = sigma²`.
    GaussianAdditive,
    /// Noise comes only from minibatch sampling in the engine.
    #[default]
    Minibatch,
}

/// Stochastic-gradient noise for one client.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoiseModel {
    pub mode: NoiseMode,
    #[serde(default)]
    pub sigma: f64,
}

impl Default for NoiseModel {
    fn default() -> Self {
        NoiseModel {
            mode: NoiseMode::Minibatch,
            sigma: 0.0,
        }
    }
}

impl NoiseModel {
    pub fn none() -> Self {
        NoiseModel {
            mode: NoiseMode::None,
            sigma: 0.0,
        }
    }

    pub fn gaussian(sigma: f64) -> Self {
        NoiseModel {
            mode: NoiseMode::GaussianAdditive,
            sigma,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(Error::usage(format!(
                "noise sigma must be finite and >= 0, got {}",
                self.sigma
            )));
        }
        Ok(())
    }

    /// Expected squared deviation `E‖g − ∇F‖²` contributed by this model.
    pub fn variance(&self) -> f64 {
        match self.mode {
            NoiseMode::GaussianAdditive => self.sigma * self.sigma,
            _ => 0.0,
        }
    }

    /// Adds one noise draw to `grad` in place.
    pub fn perturb<R: Rng + ?Sized>(&self, grad: &mut [f64], rng: &mut R) {
        if self.mode != NoiseMode::GaussianAdditive || self.sigma == 0.0 || grad.is_empty() {
            return;
        }
        let std = self.sigma / (grad.len() as f64).sqrt();
        for g in grad.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *g += std * z;
        }
    }
}
