use serde::Serialize;

use crate::aggregation::SyncDiagnostics;
use crate::error::{check_len, Result};
use crate::exec::Execution;
use crate::numeric::{kernels, weighted_sum, ParamVector};

use super::Federation;

/// Metrics for one completed round, measured on the aggregated model
/// except for Γ, which uses the broadcast model the clients trained from.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RoundRecord {
    /// 1-based.
    pub round: usize,
    /// Loss of the aggregated model on each client's own shard.
    pub client_losses: Vec<f64>,
    /// `Σ p_k·loss_k`.
    pub mean_train_loss: f64,
    pub loss_variance: f64,
    pub test_accuracy: Option<f64>,
    /// `Σ p_k‖∇F_k‖² − ‖∇F‖²`.
    pub gamma: f64,
    /// `Σ ρ_k²‖∇F_k‖² − ‖∇F‖²`, with `ρ = p` outside Kuramoto rounds.
    pub gamma_weighted: f64,
    pub kappa_t: Option<f64>,
    pub sync: Option<SyncDiagnostics>,
    pub model_fingerprint: u64,
    pub wall_time_ms: f64,
}

/// Population variance (divide by K).
pub fn loss_variance(losses: &[f64]) -> f64 {
    if losses.is_empty() {
        return 0.0;
    }
    // Shifted by the first loss so identical losses give exactly zero.
    let n = losses.len() as f64;
    let shift = losses[0];
    let mean = losses.iter().map(|l| l - shift).sum::<f64>() / n;
    let sq = losses.iter().map(|l| (l - shift - mean).powi(2)).sum::<f64>() / n;
    sq.max(0.0)
}

/// `(Γ, Γ_ρ)` from exact per-client gradients. `∇F = Σ p_k ∇F_k`.
pub fn diversity_from_gradients(grads: &[ParamVector], p: &[f64], rho: &[f64]) -> Result<(f64, f64)> {
    check_len(grads.len(), p.len())?;
    check_len(grads.len(), rho.len())?;
    let dim = grads.first().map_or(0, |g| g.len());
    let global = weighted_sum(dim, p.iter().zip(grads).map(|(pk, g)| (*pk, g.as_slice())))?;
    let global_sq = kernels::dot(&global, &global);
    let sq: Vec<f64> = grads.iter().map(|g| kernels::dot(g, g)).collect();
    let gamma = p.iter().zip(&sq).map(|(pk, s)| pk * s).sum::<f64>() - global_sq;
    let gamma_weighted = rho.iter().zip(&sq).map(|(r, s)| r * r * s).sum::<f64>() - global_sq;
    Ok((gamma, gamma_weighted))
}

/// Gradient diversity at `w` using full-batch client gradients.
pub fn gradient_diversity(
    w: &[f64],
    federation: &Federation,
    p: &[f64],
    rho: &[f64],
    exec: Execution,
) -> Result<(f64, f64)> {
    let grads = exec
        .map_slice(&federation.clients, |_, c| c.full_gradient(w))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    diversity_from_gradients(&grads, p, rho)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variance_examples() {
        assert_eq!(loss_variance(&[0.7, 0.7, 0.7]), 0.0);
        assert_eq!(loss_variance(&[0.0, 2.0]), 1.0);
        assert_eq!(loss_variance(&[3.5]), 0.0);
    }

    #[test]
    fn diversity_examples() {
        let g = [ParamVector::new(vec![1.0, 0.0]), ParamVector::new(vec![-1.0, 0.0])];
        let (gamma, gw) = diversity_from_gradients(&g, &[0.5, 0.5], &[0.5, 0.5]).unwrap();
        assert_eq!(gamma, 1.0);
        assert_eq!(gw, 0.5);
        let same = vec![ParamVector::new(vec![0.3, 0.1]); 3];
        let p = [0.2, 0.3, 0.5];
        let (gamma, _) = diversity_from_gradients(&same, &p, &p).unwrap();
        assert!(gamma.abs() < 1e-16);
    }

    #[test]
    fn diversity_matches_brute_force() {
        let g = [
            ParamVector::new(vec![0.4, -1.2, 0.3]),
            ParamVector::new(vec![2.0, 0.1, -0.7]),
            ParamVector::new(vec![-0.5, 0.9, 1.1]),
        ];
        let p = [0.2, 0.5, 0.3];
        let rho = [0.6, 0.1, 0.3];
        let (gamma, gw) = diversity_from_gradients(&g, &p, &rho).unwrap();
        // Independent recomputation coordinate by coordinate.
        let mut global_sq = 0.0;
        for j in 0..3 {
            let gj: f64 = (0..3).map(|k| p[k] * g[k][j]).sum();
            global_sq += gj * gj;
        }
        let norms: Vec<f64> = g.iter().map(|v| v.iter().map(|x| x * x).sum()).collect();
        let expect = (0..3).map(|k| p[k] * norms[k]).sum::<f64>() - global_sq;
        let expect_w = (0..3).map(|k| rho[k] * rho[k] * norms[k]).sum::<f64>() - global_sq;
        assert!((gamma - expect).abs() < 1e-12);
        assert!((gw - expect_w).abs() < 1e-12);
        assert!(gamma >= 0.0);
    }
}
