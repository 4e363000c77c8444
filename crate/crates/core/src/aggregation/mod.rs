//! Server-side combination of client updates.

mod kuramoto;
mod scaffold;

pub use kuramoto::{
    compute_phases, kappa_schedule, kuramoto_aggregate, kuramoto_weights, order_parameter,
    FallbackReason, KuramotoMode, KuramotoVariant, Phases, SyncDiagnostics,
};
pub use scaffold::{
    client_control_update, scaffold_correct_gradient, scaffold_server_step, ScaffoldState,
};

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{axpy, weighted_sum, ParamVector};

/// Weights in a round may drift from 1 by rounding, but not by more.
pub const WEIGHT_SUM_TOL: f64 = 1e-6;

/// One client's output for a round.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientUpdate {
    pub client_id: usize,
    /// `w_k − w` after local training.
    pub delta: ParamVector,
    /// Data-proportional aggregation weight `p_k`.
    pub p_weight: f64,
    pub num_samples: usize,
}

/// Checks the round invariants and returns the updates sorted by client id.
pub(crate) fn sorted_round(updates: &[ClientUpdate]) -> Result<Vec<&ClientUpdate>> {
    let first = updates
        .first()
        .ok_or_else(|| Error::usage("aggregation needs at least one client update"))?;
    let dim = first.delta.len();
    let mut total = 0.0;
    for u in updates {
        check_len(dim, u.delta.len())?;
        if !(0.0..=1.0).contains(&u.p_weight) {
            return Err(Error::usage(format!(
                "client {} weight {} outside [0, 1]",
                u.client_id, u.p_weight
            )));
        }
        total += u.p_weight;
    }
    if (total - 1.0).abs() > WEIGHT_SUM_TOL {
        return Err(Error::usage(format!(
            "client weights sum to {total}, expected 1"
        )));
    }
    let mut sorted: Vec<&ClientUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.client_id);
    if sorted.windows(2).any(|w| w[0].client_id == w[1].client_id) {
        return Err(Error::usage("duplicate client id in round"));
    }
    Ok(sorted)
}

/// `Σ p_k·Δw_k`, summed in ascending client-id order. This is the reference
/// direction for the phases.
pub fn mean_update(updates: &[ClientUpdate]) -> Result<ParamVector> {
    let sorted = sorted_round(updates)?;
    weighted_sum(
        sorted[0].delta.len(),
        sorted.iter().map(|u| (u.p_weight, u.delta.as_slice())),
    )
}

/// `w + Σ p_k·Δw_k`.
pub fn fedavg_aggregate(w: &[f64], updates: &[ClientUpdate]) -> Result<ParamVector> {
    let mean = mean_update(updates)?;
    axpy(1.0, &mean, w)
}

/// FedProx local penalty: `g + μ·(w_local − w_global)`.
pub fn fedprox_gradient_adjustment(
    g: &[f64],
    w_local: &[f64],
    w_global: &[f64],
    mu_prox: f64,
) -> Result<ParamVector> {
    check_len(g.len(), w_local.len())?;
    check_len(g.len(), w_global.len())?;
    if !(mu_prox >= 0.0) {
        return Err(Error::usage(format!("mu_prox must be >= 0, got {mu_prox}")));
    }
    Ok(ParamVector::new(
        g.iter()
            .zip(w_local.iter().zip(w_global))
            .map(|(gi, (l, gl))| gi + mu_prox * (l - gl))
            .collect(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn update(id: usize, delta: &[f64], p: f64) -> ClientUpdate {
        ClientUpdate {
            client_id: id,
            delta: ParamVector::new(delta.to_vec()),
            p_weight: p,
            num_samples: 1,
        }
    }

    #[test]
    fn fedavg_examples() {
        let ups = [update(0, &[1.0, 0.0], 0.5), update(1, &[0.0, 1.0], 0.5)];
        assert_eq!(fedavg_aggregate(&[0.0, 0.0], &ups).unwrap().as_slice(), &[0.5, 0.5]);

        let one = [update(3, &[0.25, -1.0], 1.0)];
        assert_eq!(fedavg_aggregate(&[1.0, 1.0], &one).unwrap().as_slice(), &[1.25, 0.0]);

        let three = [
            update(0, &[1.0, 1.0], 0.2),
            update(1, &[1.0, 1.0], 0.3),
            update(2, &[1.0, 1.0], 0.5),
        ];
        let out = fedavg_aggregate(&[2.0, -1.0], &three).unwrap();
        assert!((out[0] - 3.0).abs() < 1e-15 && (out[1] - 0.0).abs() < 1e-15);
    }

    #[test]
    fn fedavg_rejects_bad_weights() {
        let ups = [update(0, &[1.0], 0.5), update(1, &[1.0], 0.4)];
        assert!(matches!(fedavg_aggregate(&[0.0], &ups), Err(Error::Usage(_))));
        assert!(fedavg_aggregate(&[0.0], &[]).is_err());
        let ups = [update(0, &[1.0], 0.5), update(1, &[1.0, 2.0], 0.5)];
        assert!(fedavg_aggregate(&[0.0], &ups).is_err());
    }

    #[test]
    fn fedavg_order_independent() {
        let a = [update(0, &[0.1, 0.7], 0.3), update(1, &[0.2, -0.4], 0.7)];
        let b = [a[1].clone(), a[0].clone()];
        assert_eq!(fedavg_aggregate(&[0.0, 0.0], &a).unwrap(), fedavg_aggregate(&[0.0, 0.0], &b).unwrap());
    }

    #[test]
    fn mean_update_examples() {
        let ups = [update(0, &[2.0, 0.0], 0.5), update(1, &[0.0, 2.0], 0.5)];
        assert_eq!(mean_update(&ups).unwrap().as_slice(), &[1.0, 1.0]);
        assert_eq!(mean_update(&[update(0, &[3.0, -1.0], 1.0)]).unwrap().as_slice(), &[3.0, -1.0]);
        let opp = [update(0, &[1.0, 0.0], 0.5), update(1, &[-1.0, 0.0], 0.5)];
        assert!(mean_update(&opp).unwrap().is_zero());
    }

    #[test]
    fn fedprox_examples() {
        let g = [0.3, -0.2];
        assert_eq!(fedprox_gradient_adjustment(&g, &[1.0, 2.0], &[0.0, 0.0], 0.0).unwrap().as_slice(), &g);
        assert_eq!(fedprox_gradient_adjustment(&g, &[1.0, 2.0], &[1.0, 2.0], 5.0).unwrap().as_slice(), &g);
        assert_eq!(
            fedprox_gradient_adjustment(&[0.0, 0.0], &[1.0, -1.0], &[0.0, 0.0], 1.0).unwrap().as_slice(),
            &[1.0, -1.0]
        );
    }
}
