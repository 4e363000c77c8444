//! Client-side training: minibatch SGD with heavy-ball momentum.

use std::f64::consts::PI;

use rand::seq::SliceRandom;

use crate::aggregation::{client_control_update, fedprox_gradient_adjustment, scaffold_correct_gradient, ClientUpdate};
use crate::error::Result;
use crate::numeric::{kernels, ParamVector};
use crate::objectives::Batch;
use crate::rng::{stream, Purpose};

use super::config::{AggregatorConfig, LrSchedule, TrainingConfig};
use super::Client;

/// `lr0·½(1 + cos(π·step/total))`.
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> f64 {
    if total_steps == 0 {
        return lr0;
    }
    let frac = step.min(total_steps) as f64 / total_steps as f64;
    lr0 * 0.5 * (1.0 + (PI * frac).cos())
}

/// Control variates handed to a SCAFFOLD client.
#[derive(Clone, Copy, Debug)]
pub struct Controls<'a> {
    pub server: &'a [f64],
    pub client: &'a [f64],
}

#[derive(Clone, Debug)]
pub struct LocalOutcome {
    pub update: ClientUpdate,
    /// SCAFFOLD `c_k⁺ − c_k`.
    pub control_delta: Option<ParamVector>,
    /// Fingerprint of the model the client started from.
    pub start_fingerprint: u64,
}

pub fn steps_per_epoch(client: &Client, batch_size: usize) -> usize {
    client.num_samples.div_ceil(batch_size).max(1)
}

/// Runs `E` local epochs from `w_global` and reports `Δw = w_final − w_global`.
///
/// The momentum buffer starts at zero every round. The random stream is
/// keyed by `(seed, round, client id)`.
pub fn local_train(
    w_global: &ParamVector,
    client: &Client,
    cfg: &TrainingConfig,
    round: usize,
    total_samples: usize,
    controls: Option<Controls<'_>>,
) -> Result<LocalOutcome> {
    let start_fingerprint = w_global.fingerprint();
    let mut w = w_global.clone();
    let mut velocity = vec![0.0; w.len()];
    let mut rng = stream(cfg.seed, Purpose::LocalTraining, round as u64, client.id as u64);

    let spe = steps_per_epoch(client, cfg.batch_size);
    let steps_per_round = spe * cfg.local_epochs;
    let mu_prox = match cfg.aggregator {
        AggregatorConfig::Fedprox { mu_prox } => Some(mu_prox),
        _ => None,
    };

    let mut order: Vec<usize> = (0..client.shard.as_ref().map_or(0, |s| s.len())).collect();
    let mut batch: Vec<usize> = Vec::with_capacity(cfg.batch_size);
    // Σ over steps of the step size times the momentum gain on a constant
    // gradient, so that Δw ≈ −lr_sum·g. Equals Σ lr without momentum.
    let mut lr_sum = 0.0;
    let mut gain = 0.0;
    for epoch in 0..cfg.local_epochs {
        order.shuffle(&mut rng);
        for step in 0..spe {
            let lr = match cfg.lr_schedule {
                LrSchedule::Constant => cfg.lr,
                LrSchedule::Cosine => cosine_lr(
                    cfg.lr,
                    round * steps_per_round + epoch * spe + step,
                    cfg.rounds * steps_per_round,
                ),
                LrSchedule::CosinePerRound => cosine_lr(cfg.lr, epoch * spe + step, steps_per_round),
            };
            let b = client.shard.as_ref().map(|data| {
                batch.clear();
                let lo = step * cfg.batch_size;
                let hi = (lo + cfg.batch_size).min(order.len());
                batch.extend_from_slice(&order[lo..hi]);
                // Summation order must not depend on the shuffle when the
                // batch is the whole shard.
                batch.sort_unstable();
                Batch { data, indices: &batch }
            });
            let mut g = client.objective.gradient(&w, b, &client.noise, &mut rng)?;
            if let Some(mu) = mu_prox {
                g = fedprox_gradient_adjustment(&g, &w, w_global, mu)?;
            }
            if let Some(c) = controls {
                scaffold_correct_gradient(&mut g, c.client, c.server);
            }
            for (v, gi) in velocity.iter_mut().zip(g.iter()) {
                *v = cfg.momentum * *v + gi;
            }
            kernels::axpy_in_place(-lr, &velocity, &mut w);
            gain = cfg.momentum * gain + 1.0;
            lr_sum += lr * gain;
        }
    }

    let delta = ParamVector::new(kernels::sub(&w, w_global));
    let control_delta = match controls {
        Some(c) => Some(client_control_update(c.server, &delta, lr_sum)?),
        None => None,
    };
    Ok(LocalOutcome {
        update: ClientUpdate {
            client_id: client.id,
            delta,
            p_weight: client.num_samples as f64 / total_samples as f64,
            num_samples: client.num_samples,
        },
        control_delta,
        start_fingerprint,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::objectives::{NoiseModel, QuadraticObjective};

    #[test]
    fn cosine_examples() {
        assert_eq!(cosine_lr(0.01, 0, 100), 0.01);
        assert!(cosine_lr(0.01, 100, 100).abs() < 1e-18);
        assert!((cosine_lr(0.01, 50, 100) - 0.005).abs() < 1e-15);
    }

    fn scalar_client(m: f64) -> Client {
        Client::quadratic(
            0,
            QuadraticObjective::isotropic(1.0, ParamVector::new(vec![m])).unwrap(),
            NoiseModel::none(),
        )
    }

    fn plain(lr: f64, epochs: usize) -> TrainingConfig {
        TrainingConfig {
            rounds: 1,
            local_epochs: epochs,
            batch_size: 1,
            lr,
            momentum: 0.0,
            lr_schedule: LrSchedule::Constant,
            aggregator: AggregatorConfig::Fedavg,
            seed: 0,
            gradient_diversity: true,
        }
    }

    #[test]
    fn single_full_batch_step() {
        let q = QuadraticObjective::from_diagonal(&[2.0, 0.5], ParamVector::new(vec![1.0, -1.0])).unwrap();
        let client = Client::quadratic(0, q.clone(), NoiseModel::none());
        let w = ParamVector::new(vec![0.3, 0.4]);
        let out = local_train(&w, &client, &plain(0.1, 1), 0, 1, None).unwrap();
        let g = q.gradient(&w).unwrap();
        for (d, gi) in out.update.delta.iter().zip(g.iter()) {
            assert!((d + 0.1 * gi).abs() < 1e-15);
        }
        assert_eq!(out.update.p_weight, 1.0);
    }

    #[test]
    fn zero_lr_freezes() {
        let out = local_train(&ParamVector::new(vec![0.5]), &scalar_client(1.0), &plain(0.0, 3), 0, 1, None).unwrap();
        assert!(out.update.delta.is_zero());
    }

    #[test]
    fn two_step_recursion() {
        // w1 = 0.1, w2 = 0.1 + 0.1·0.9 = 0.19
        let out = local_train(&ParamVector::new(vec![0.0]), &scalar_client(1.0), &plain(0.1, 2), 0, 1, None).unwrap();
        assert!((out.update.delta[0] - 0.19).abs() < 1e-15);
    }

    #[test]
    fn momentum_accumulates() {
        let mut cfg = plain(0.1, 2);
        cfg.momentum = 0.5;
        // g1 = −1, v1 = −1, w1 = 0.1; g2 = −0.9, v2 = −1.4, w2 = 0.24
        let out = local_train(&ParamVector::new(vec![0.0]), &scalar_client(1.0), &cfg, 0, 1, None).unwrap();
        assert!((out.update.delta[0] - 0.24).abs() < 1e-15);
    }

    #[test]
    fn fedprox_pulls_back() {
        let mut cfg = plain(0.1, 2);
        cfg.aggregator = AggregatorConfig::Fedprox { mu_prox: 1.0 };
        // g2 = (0.1 − 1) + 1·(0.1 − 0) = −0.8, w2 = 0.18
        let out = local_train(&ParamVector::new(vec![0.0]), &scalar_client(1.0), &cfg, 0, 1, None).unwrap();
        assert!((out.update.delta[0] - 0.18).abs() < 1e-15);
    }
}
