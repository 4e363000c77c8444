//! Trainable objectives and the stochastic-gradient noise models.

mod noise;
mod predictive;
mod quadratic;

pub use noise::{NoiseMode, NoiseModel};
pub use predictive::{ModelKind, PredictiveObjective};
pub use quadratic::{largest_eigenvalue, QuadraticObjective};

use rand::Rng;

use crate::data::LabeledDataset;
use crate::error::{Error, Result};
use crate::numeric::ParamVector;

/// A sample subset to evaluate a predictive objective on.
#[derive(Clone, Copy, Debug)]
pub struct Batch<'a> {
    pub data: &'a LabeledDataset,
    pub indices: &'a [usize],
}

#[derive(Clone, Debug, PartialEq)]
pub enum Objective {
    Quadratic(QuadraticObjective),
    Predictive(PredictiveObjective),
}

impl Objective {
    pub fn param_count(&self) -> usize {
        match self {
            Objective::Quadratic(q) => q.dim(),
            Objective::Predictive(p) => p.param_count(),
        }
    }

    /// Loss at `w`. Quadratics ignore the batch; predictive objectives
    /// require one.
    pub fn value(&self, w: &[f64], batch: Option<Batch<'_>>) -> Result<f64> {
        match self {
            Objective::Quadratic(q) => q.value(w),
            Objective::Predictive(p) => {
                let b = batch.ok_or_else(|| Error::usage("predictive objective needs a batch"))?;
                p.loss(w, b.data, b.indices)
            }
        }
    }

    /// Exact gradient over the batch, together with the loss.
    pub fn exact_gradient(&self, w: &[f64], batch: Option<Batch<'_>>) -> Result<(f64, ParamVector)> {
        match self {
            Objective::Quadratic(q) => Ok((q.value(w)?, q.gradient(w)?)),
            Objective::Predictive(p) => {
                let b = batch.ok_or_else(|| Error::usage("predictive objective needs a batch"))?;
                let mut g = ParamVector::zeros(p.param_count());
                let loss = p.loss_and_gradient(w, b.data, b.indices, &mut g)?;
                Ok((loss, g))
            }
        }
    }

    /// Stochastic gradient: the exact batch gradient plus one draw from
    /// `noise`. Unbiased for every noise mode.
    pub fn gradient<R: Rng + ?Sized>(
        &self,
        w: &[f64],
        batch: Option<Batch<'_>>,
        noise: &NoiseModel,
        rng: &mut R,
    ) -> Result<ParamVector> {
        let (_, mut g) = self.exact_gradient(w, batch)?;
        noise.perturb(&mut g, rng);
        Ok(g)
    }
}
