//! Phase-synchronized aggregation.
//!
//! Each client's update is given a phase, the angle between its delta and
//! the weighted mean delta. Two weightings are offered:
//!
//! * [`KuramotoVariant::SineRatio`]: `ρ_k = sin(θ̄ − θ_k) / Σ_j sin(θ̄ − θ_j)`
//!   with `θ̄` the arithmetic mean phase. The denominator vanishes to first
//!   order for every phase set and exactly for two clients, so it is guarded
//!   by `epsilon_sync` and `rho_max`; a tripped guard reverts the round to
//!   the data weights `p_k` and is recorded in [`SyncDiagnostics`].
//! * [`KuramotoVariant::Stabilized`]: `ρ_k ∝ p_k·max(0, cos θ_k)`.
//!
//! The aggregate is `w + κ_t·Σ ρ_k·Δw_k`.

use std::f64::consts::FRAC_PI_2;

use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};
use crate::numeric::{axpy, cosine_similarity, l2norm, weighted_sum, ParamVector};

use super::{fedavg_aggregate, sorted_round, ClientUpdate};

/// Phases closer together than this count as one phase.
const COHERENCE_TOL: f64 = 1e-12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KuramotoVariant {
    SineRatio,
    #[default]
    Stabilized,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KuramotoMode {
    pub variant: KuramotoVariant,
    /// Minimum `|Σ sin(θ̄ − θ_j)|` before falling back.
    pub epsilon_sync: f64,
    /// Maximum `|ρ_k|` before falling back.
    pub rho_max: f64,
    /// Sine-ratio only: zero negative weights and renormalize.
    pub clamp_negative: bool,
}

impl Default for KuramotoMode {
    fn default() -> Self {
        KuramotoMode {
            variant: KuramotoVariant::Stabilized,
            epsilon_sync: 1e-3,
            rho_max: 10.0,
            clamp_negative: false,
        }
    }
}

impl KuramotoMode {
    pub fn sine_ratio() -> Self {
        KuramotoMode {
            variant: KuramotoVariant::SineRatio,
            ..Default::default()
        }
    }

    pub fn stabilized() -> Self {
        KuramotoMode::default()
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.epsilon_sync > 0.0) || !(self.rho_max > 0.0) {
            return Err(Error::usage(
                "epsilon_sync and rho_max must be strictly positive",
            ));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FallbackReason {
    /// The mean update is the zero vector; phases are undefined.
    DegenerateReference,
    /// All phases coincide, so the sine weights are 0/0.
    CoherentPhases,
    /// `|Σ sin(θ̄ − θ_j)| < epsilon_sync`.
    VanishingDenominator,
    /// Some `|ρ_k| > rho_max`.
    WeightBound,
    /// No client kept a positive weight.
    NoPositiveWeight,
}

/// Per-round internals of the phase weighting, in ascending client-id order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SyncDiagnostics {
    pub theta: Vec<f64>,
    pub theta_bar: f64,
    pub rho: Vec<f64>,
    /// `Σ_j sin(θ̄ − θ_j)`, whatever the variant.
    pub denominator: f64,
    pub fallback_used: bool,
    pub fallback_reason: Option<FallbackReason>,
    /// `|K⁻¹ Σ exp(iθ_k)|`.
    pub order_parameter: f64,
    /// Clients whose delta had zero norm and were assigned `θ = π/2`.
    pub zero_norm_clients: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Phases {
    pub theta: Vec<f64>,
    /// Positions (in input order) of zero-norm deltas, assigned `π/2`.
    pub zero_norm: Vec<usize>,
}

/// `θ_k = arccos(cos∠(Δw_k, reference))` for every update, in input order.
pub fn compute_phases(updates: &[ClientUpdate], reference: &[f64]) -> Result<Phases> {
    if l2norm(reference) == 0.0 {
        return Err(Error::Degenerate(
            "mean update has zero norm; aggregate with FedAvg instead".into(),
        ));
    }
    let mut theta = Vec::with_capacity(updates.len());
    let mut zero_norm = Vec::new();
    for (i, u) in updates.iter().enumerate() {
        check_len(reference.len(), u.delta.len())?;
        if l2norm(&u.delta) == 0.0 {
            theta.push(FRAC_PI_2);
            zero_norm.push(i);
        } else {
            theta.push(cosine_similarity(&u.delta, reference)?.acos());
        }
    }
    Ok(Phases { theta, zero_norm })
}

pub fn order_parameter(theta: &[f64]) -> f64 {
    if theta.is_empty() {
        return 0.0;
    }
    let (c, s) = theta
        .iter()
        .fold((0.0, 0.0), |(c, s), t| (c + t.cos(), s + t.sin()));
    (c.hypot(s) / theta.len() as f64).min(1.0)
}

/// Synchronization weights for one round. A tripped guard is not an error:
/// it is reported through `fallback_used` and `rho` is set to `p`.
pub fn kuramoto_weights(
    theta: &[f64],
    p: &[f64],
    mode: &KuramotoMode,
) -> Result<(Vec<f64>, SyncDiagnostics)> {
    if theta.is_empty() {
        return Err(Error::usage("kuramoto weights need at least one client"));
    }
    check_len(theta.len(), p.len())?;
    mode.validate()?;

    let k = theta.len() as f64;
    let theta_bar = theta.iter().sum::<f64>() / k;
    let raw: Vec<f64> = theta.iter().map(|t| (theta_bar - t).sin()).collect();
    let denominator: f64 = raw.iter().sum();

    let mut diag = SyncDiagnostics {
        theta: theta.to_vec(),
        theta_bar,
        rho: Vec::new(),
        denominator,
        fallback_used: false,
        fallback_reason: None,
        order_parameter: order_parameter(theta),
        zero_norm_clients: Vec::new(),
    };

    let (lo, hi) = theta
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &t| (lo.min(t), hi.max(t)));
    let rho = if hi - lo <= COHERENCE_TOL {
        Err(FallbackReason::CoherentPhases)
    } else {
        match mode.variant {
            KuramotoVariant::SineRatio => sine_ratio(&raw, denominator, mode),
            KuramotoVariant::Stabilized => stabilized(theta, p),
        }
    };

    let rho = match rho {
        Ok(rho) => rho,
        Err(reason) => {
            diag.fallback_used = true;
            diag.fallback_reason = Some(reason);
            p.to_vec()
        }
    };
    diag.rho = rho.clone();
    Ok((rho, diag))
}

fn sine_ratio(raw: &[f64], denominator: f64, mode: &KuramotoMode) -> Result<Vec<f64>, FallbackReason> {
    if denominator.abs() < mode.epsilon_sync {
        return Err(FallbackReason::VanishingDenominator);
    }
    let rho: Vec<f64> = raw.iter().map(|r| r / denominator).collect();
    if rho.iter().any(|r| r.abs() > mode.rho_max) {
        return Err(FallbackReason::WeightBound);
    }
    if !mode.clamp_negative {
        return Ok(rho);
    }
    let clamped: Vec<f64> = rho.iter().map(|r| r.max(0.0)).collect();
    let total: f64 = clamped.iter().sum();
    if total <= 0.0 {
        return Err(FallbackReason::NoPositiveWeight);
    }
    Ok(clamped.into_iter().map(|r| r / total).collect())
}

fn stabilized(theta: &[f64], p: &[f64]) -> Result<Vec<f64>, FallbackReason> {
    let raw: Vec<f64> = theta
        .iter()
        .zip(p)
        .map(|(t, pk)| pk * t.cos().max(0.0))
        .collect();
    let total: f64 = raw.iter().sum();
    if total <= 0.0 {
        return Err(FallbackReason::NoPositiveWeight);
    }
    Ok(raw.into_iter().map(|r| r / total).collect())
}

/// `κ_t = κ₀ / (1 + β·t)`.
pub fn kappa_schedule(kappa0: f64, beta: f64, t: usize) -> f64 {
    kappa0 / (1.0 + beta * t as f64)
}

/// `w + κ_t·Σ ρ_k·Δw_k`. A zero mean update makes this exactly
/// [`fedavg_aggregate`].
pub fn kuramoto_aggregate(
    w: &[f64],
    updates: &[ClientUpdate],
    mode: &KuramotoMode,
    kappa_t: f64,
) -> Result<(ParamVector, SyncDiagnostics)> {
    let sorted = sorted_round(updates)?;
    check_len(w.len(), sorted[0].delta.len())?;
    if !kappa_t.is_finite() {
        return Err(Error::usage("coupling strength must be finite"));
    }
    let dim = w.len();
    let ordered: Vec<ClientUpdate> = sorted.into_iter().cloned().collect();
    let p: Vec<f64> = ordered.iter().map(|u| u.p_weight).collect();
    let reference = weighted_sum(dim, ordered.iter().map(|u| (u.p_weight, u.delta.as_slice())))?;

    let phases = match compute_phases(&ordered, &reference) {
        Ok(phases) => phases,
        Err(Error::Degenerate(_)) => {
            let theta = vec![FRAC_PI_2; ordered.len()];
            let diag = SyncDiagnostics {
                order_parameter: order_parameter(&theta),
                theta,
                theta_bar: FRAC_PI_2,
                rho: p,
                denominator: 0.0,
                fallback_used: true,
                fallback_reason: Some(FallbackReason::DegenerateReference),
                zero_norm_clients: Vec::new(),
            };
            return Ok((fedavg_aggregate(w, &ordered)?, diag));
        }
        Err(e) => return Err(e),
    };

    let (rho, mut diag) = kuramoto_weights(&phases.theta, &p, mode)?;
    diag.zero_norm_clients = phases.zero_norm.iter().map(|&i| ordered[i].client_id).collect();
    let combined = weighted_sum(
        dim,
        rho.iter().zip(&ordered).map(|(r, u)| (*r, u.delta.as_slice())),
    )?;
    Ok((axpy(kappa_t, &combined, w)?, diag))
}
