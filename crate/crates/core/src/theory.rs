//! Numerical checks of the one-step descent analysis on quadratic
//! federations with Gaussian gradient noise.
//!
//! The one-step update is `w' = w − η·Σ p_k g_k` with
//! `g_k = ∇F_k(w) + ξ_k` and `E‖ξ_k‖² = σ_k²`. Expectations are Monte-Carlo
//! estimates over `num_mc` seeded draws; a check passes when the estimate is
//! within [`SE_TOLERANCE`] standard errors. Noiseless instances are
//! evaluated with a single exact draw.

use rand::Rng;
use serde::Serialize;

use crate::engine::{diversity_from_gradients, RoundRecord};
use crate::error::{check_len, Error, Result};
use crate::exec::Execution;
use crate::numeric::{kernels, weighted_sum, ParamVector};
use crate::objectives::{largest_eigenvalue, NoiseModel, QuadraticObjective};
use crate::rng::{stream, Purpose};

pub const SE_TOLERANCE: f64 = 4.0;

/// Relative slack for comparisons that are exact in real arithmetic.
pub const EXACT_TOLERANCE: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryInstance {
    pub objectives: Vec<QuadraticObjective>,
    pub p: Vec<f64>,
    pub sigma: Vec<f64>,
    pub eta: f64,
    pub num_mc: usize,
    pub seed: u64,
    smoothness_override: Option<f64>,
}

impl TheoryInstance {
    pub fn new(
        objectives: Vec<QuadraticObjective>,
        p: Vec<f64>,
        sigma: Vec<f64>,
        eta: f64,
        num_mc: usize,
        seed: u64,
    ) -> Result<Self> {
        let first = objectives
            .first()
            .ok_or_else(|| Error::usage("theory instance needs at least one client"))?;
        let dim = first.dim();
        for o in &objectives {
            check_len(dim, o.dim())?;
        }
        check_len(objectives.len(), p.len())?;
        check_len(objectives.len(), sigma.len())?;
        if p.iter().any(|&x| !(x >= 0.0 && x.is_finite())) || (p.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::usage("client weights must be non-negative and sum to 1"));
        }
        if sigma.iter().any(|&s| !(s >= 0.0 && s.is_finite())) {
            return Err(Error::usage("noise scales must be finite and >= 0"));
        }
        if !(eta > 0.0 && eta.is_finite()) {
            return Err(Error::usage(format!("eta must be > 0, got {eta}")));
        }
        if num_mc == 0 {
            return Err(Error::usage("num_mc must be >= 1"));
        }
        Ok(TheoryInstance {
            objectives,
            p,
            sigma,
            eta,
            num_mc,
            seed,
            smoothness_override: None,
        })
    }

    /// Seeded random instance: curvatures `BᵀB/d` with Gaussian `B`,
    /// Gaussian minimizers, random weights, and `η = u/L` with
    /// `u ∈ [0.05, 1]`. `noisy = false` sets every `σ_k = 0`.
    pub fn random(num_clients: usize, dim: usize, noisy: bool, num_mc: usize, seed: u64) -> Result<Self> {
        if num_clients == 0 || dim == 0 {
            return Err(Error::usage("random instance needs clients >= 1 and dim >= 1"));
        }
        let mut rng = stream(seed, Purpose::Instance, num_clients as u64, dim as u64);
        let normal = rand_distr::StandardNormal;
        let mut objectives = Vec::with_capacity(num_clients);
        for _ in 0..num_clients {
            let b: Vec<f64> = (0..dim * dim).map(|_| rng.sample(normal)).collect();
            let mut a = vec![0.0; dim * dim];
            for i in 0..dim {
                for j in 0..dim {
                    let s: f64 = (0..dim).map(|r| b[r * dim + i] * b[r * dim + j]).sum();
                    a[i * dim + j] = s / dim as f64;
                }
            }
            // Exact symmetry regardless of summation rounding.
            for i in 0..dim {
                for j in 0..i {
                    a[i * dim + j] = a[j * dim + i];
                }
            }
            let m: Vec<f64> = (0..dim).map(|_| rng.sample(normal)).collect();
            objectives.push(QuadraticObjective::new(a, ParamVector::new(m))?);
        }
        let raw: Vec<f64> = (0..num_clients).map(|_| rng.random_range(0.2..1.0)).collect();
        let total: f64 = raw.iter().sum();
        let p: Vec<f64> = raw.iter().map(|r| r / total).collect();
        let sigma: Vec<f64> = (0..num_clients)
            .map(|_| if noisy { rng.random_range(0.2..1.5) } else { 0.0 })
            .collect();
        let u: f64 = rng.random_range(0.05..1.0);
        let mut inst = TheoryInstance::new(objectives, p, sigma, 1.0, num_mc, seed)?;
        inst.eta = u / inst.smoothness()?;
        Ok(inst)
    }

    /// Replaces the computed smoothness constant, e.g. with a deliberately
    /// wrong value.
    pub fn with_smoothness(mut self, l: f64) -> Self {
        self.smoothness_override = Some(l);
        self
    }

    pub fn dim(&self) -> usize {
        self.objectives[0].dim()
    }

    pub fn is_noiseless(&self) -> bool {
        self.sigma.iter().all(|&s| s == 0.0)
    }

    /// `σ² = Σ p_k²·σ_k²`.
    pub fn sigma_sq(&self) -> f64 {
        self.p.iter().zip(&self.sigma).map(|(p, s)| p * p * s * s).sum()
    }

    /// Smoothness of the global objective: the largest eigenvalue of
    /// `Σ p_k A_k`, unless overridden.
    pub fn smoothness(&self) -> Result<f64> {
        if let Some(l) = self.smoothness_override {
            return Ok(l);
        }
        let dim = self.dim();
        let a = weighted_sum(
            dim * dim,
            self.p.iter().zip(&self.objectives).map(|(p, o)| (*p, o.curvature())),
        )?;
        largest_eigenvalue(&a, dim)
    }

    pub fn value(&self, w: &[f64]) -> Result<f64> {
        let mut total = 0.0;
        for (p, o) in self.p.iter().zip(&self.objectives) {
            total += p * o.value(w)?;
        }
        Ok(total)
    }

    pub fn client_gradients(&self, w: &[f64]) -> Result<Vec<ParamVector>> {
        self.objectives.iter().map(|o| o.gradient(w)).collect()
    }

    pub fn gradient(&self, w: &[f64]) -> Result<ParamVector> {
        let grads = self.client_gradients(w)?;
        weighted_sum(self.dim(), self.p.iter().zip(&grads).map(|(p, g)| (*p, g.as_slice())))
    }

    /// `Γ = Σ p_k‖∇F_k‖² − ‖∇F‖²`.
    pub fn gamma(&self, w: &[f64]) -> Result<f64> {
        Ok(diversity_from_gradients(&self.client_gradients(w)?, &self.p, &self.p)?.0)
    }

    fn draws(&self) -> usize {
        if self.is_noiseless() {
            1
        } else {
            self.num_mc
        }
    }

    /// Noise vectors of draw `i`, one per client, from independent streams.
    fn noise(&self, i: usize) -> Vec<Vec<f64>> {
        let dim = self.dim();
        self.sigma
            .iter()
            .enumerate()
            .map(|(k, &s)| {
                let mut xi = vec![0.0; dim];
                if s > 0.0 {
                    let mut rng = stream(self.seed, Purpose::MonteCarlo, i as u64, k as u64);
                    NoiseModel::gaussian(s).perturb(&mut xi, &mut rng);
                }
                xi
            })
            .collect()
    }
}

/// Seeded Gaussian evaluation point with per-coordinate std `scale`.
pub fn random_point(dim: usize, scale: f64, seed: u64, index: u64) -> ParamVector {
    let mut rng = stream(seed, Purpose::Instance, index, u64::MAX);
    ParamVector::new(
        (0..dim)
            .map(|_| scale * rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect(),
    )
}

/// Sample mean and standard error of the mean.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn within(estimate: f64, target: f64, se: f64) -> bool {
    (estimate - target).abs() <= SE_TOLERANCE * se + EXACT_TOLERANCE * target.abs().max(1.0)
}

fn at_most(estimate: f64, bound: f64, se: f64) -> bool {
    estimate <= bound + SE_TOLERANCE * se + EXACT_TOLERANCE * bound.abs().max(1.0)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct VarianceDecompositionReport {
    pub draws: usize,
    pub grad_norm_sq: f64,
    /// `Σ p_k²σ_k²`.
    pub sigma_sq: f64,
    pub gamma: f64,
    /// Estimate of `E‖Σ p_k g_k‖²`.
    pub second_moment: f64,
    pub second_moment_se: f64,
    /// Estimate of `E[‖Σ p_k g_k‖² − ‖∇F‖² − Σ p_k²‖g_k − ∇F_k‖²]`, zero in
    /// expectation.
    pub decomposition_gap: f64,
    pub decomposition_gap_se: f64,
    /// Estimate of `E[Σ_{j≠k} p_j p_k ξ_jᵀξ_k]`, zero for independent noise.
    pub cross_term: f64,
    pub cross_term_se: f64,
    pub decomposition_holds: bool,
    pub cross_term_vanishes: bool,
    /// `E‖Σ p_k g_k‖² ≤ ‖∇F‖² + σ²`.
    pub bound_holds: bool,
    pub gamma_nonnegative: bool,
}

impl VarianceDecompositionReport {
    pub fn passed(&self) -> bool {
        self.decomposition_holds && self.cross_term_vanishes && self.bound_holds && self.gamma_nonnegative
    }
}

pub fn variance_decomposition_check(
    inst: &TheoryInstance,
    w: &[f64],
    exec: Execution,
) -> Result<VarianceDecompositionReport> {
    check_len(inst.dim(), w.len())?;
    let grads = inst.client_gradients(w)?;
    let (gamma, _) = diversity_from_gradients(&grads, &inst.p, &inst.p)?;
    let global = inst.gradient(w)?;
    let grad_norm_sq = kernels::dot(&global, &global);
    let dim = inst.dim();

    let rows = exec.map(inst.draws(), |i| {
        let xi = inst.noise(i);
        let mut avg = global.clone().into_vec();
        let mut own = 0.0;
        for (k, x) in xi.iter().enumerate() {
            kernels::axpy_in_place(inst.p[k], x, &mut avg);
            own += inst.p[k] * inst.p[k] * kernels::dot(x, x);
        }
        let mut cross = 0.0;
        for j in 0..xi.len() {
            for k in (j + 1)..xi.len() {
                cross += 2.0 * inst.p[j] * inst.p[k] * kernels::dot(&xi[j], &xi[k]);
            }
        }
        debug_assert_eq!(avg.len(), dim);
        let second = kernels::dot(&avg, &avg);
        (second, second - grad_norm_sq - own, cross)
    });
    let second: Vec<f64> = rows.iter().map(|r| r.0).collect();
    let gap: Vec<f64> = rows.iter().map(|r| r.1).collect();
    let cross: Vec<f64> = rows.iter().map(|r| r.2).collect();
    let (second_moment, second_moment_se) = mean_se(&second);
    let (decomposition_gap, decomposition_gap_se) = mean_se(&gap);
    let (cross_term, cross_term_se) = mean_se(&cross);
    let sigma_sq = inst.sigma_sq();
    let scale = grad_norm_sq + sigma_sq;
    let gamma_tol = EXACT_TOLERANCE * grads.iter().map(|g| kernels::dot(g, g)).fold(1.0, f64::max);

    Ok(VarianceDecompositionReport {
        draws: rows.len(),
        grad_norm_sq,
        sigma_sq,
        gamma,
        second_moment,
        second_moment_se,
        decomposition_gap,
        decomposition_gap_se,
        cross_term,
        cross_term_se,
        decomposition_holds: decomposition_gap.abs()
            <= SE_TOLERANCE * decomposition_gap_se + EXACT_TOLERANCE * scale.max(1.0),
        cross_term_vanishes: cross_term.abs() <= SE_TOLERANCE * cross_term_se + EXACT_TOLERANCE * scale.max(1.0),
        bound_holds: at_most(second_moment, grad_norm_sq + sigma_sq, second_moment_se),
        gamma_nonnegative: gamma >= -gamma_tol,
    })
}

/// Right-hand sides of the one-step descent bound
/// `E F(w') ≤ F(w) − η‖∇F‖² + (Lη²/2)·X + (Lη²/2)·σ²`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundForm {
    /// `X = ‖∇F‖²`, which follows from smoothness and the variance
    /// decomposition. This is the assertable form.
    Complete,
    /// `X = Γ`. Drops a `(Lη²/2)‖∇F‖²` term, so it can fail; reported only.
    DriftOnly,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DescentReport {
    pub form: BoundForm,
    pub smoothness: f64,
    pub eta: f64,
    pub value: f64,
    /// Estimate of `E F(w')`.
    pub expected_next: f64,
    pub expected_next_se: f64,
    pub bound: f64,
    /// `bound − expected_next`; negative when violated.
    pub margin: f64,
    pub holds: bool,
    /// `|margin|` within [`EXACT_TOLERANCE`] on a noiseless instance.
    pub equality: bool,
}

impl DescentReport {
    /// Only the complete form is a mathematical guarantee.
    pub fn assertable(&self) -> bool {
        self.form == BoundForm::Complete
    }
}

/// Estimates `E F(w − η·Σ p_k g_k)`.
pub fn expected_next_value(inst: &TheoryInstance, w: &[f64], exec: Execution) -> Result<(f64, f64)> {
    check_len(inst.dim(), w.len())?;
    let global = inst.gradient(w)?;
    let values = exec
        .map(inst.draws(), |i| {
            let xi = inst.noise(i);
            let mut next = w.to_vec();
            kernels::axpy_in_place(-inst.eta, &global, &mut next);
            for (k, x) in xi.iter().enumerate() {
                kernels::axpy_in_place(-inst.eta * inst.p[k], x, &mut next);
            }
            inst.value(&next)
        })
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    Ok(mean_se(&values))
}

pub fn descent_inequality_check(
    inst: &TheoryInstance,
    w: &[f64],
    form: BoundForm,
    exec: Execution,
) -> Result<DescentReport> {
    let (expected_next, se) = expected_next_value(inst, w, exec)?;
    descent_report(inst, w, form, expected_next, se)
}

/// Both forms from one Monte-Carlo pass.
pub fn descent_checks(inst: &TheoryInstance, w: &[f64], exec: Execution) -> Result<[DescentReport; 2]> {
    let (expected_next, se) = expected_next_value(inst, w, exec)?;
    Ok([
        descent_report(inst, w, BoundForm::Complete, expected_next, se)?,
        descent_report(inst, w, BoundForm::DriftOnly, expected_next, se)?,
    ])
}

fn descent_report(
    inst: &TheoryInstance,
    w: &[f64],
    form: BoundForm,
    expected_next: f64,
    se: f64,
) -> Result<DescentReport> {
    let l = inst.smoothness()?;
    let eta = inst.eta;
    let value = inst.value(w)?;
    let global = inst.gradient(w)?;
    let grad_sq = kernels::dot(&global, &global);
    let x = match form {
        BoundForm::Complete => grad_sq,
        BoundForm::DriftOnly => inst.gamma(w)?,
    };
    let half = l * eta * eta / 2.0;
    let bound = value - eta * grad_sq + half * x + half * inst.sigma_sq();
    let margin = bound - expected_next;
    Ok(DescentReport {
        form,
        smoothness: l,
        eta,
        value,
        expected_next,
        expected_next_se: se,
        bound,
        margin,
        holds: at_most(expected_next, bound, se),
        equality: inst.is_noiseless() && within(expected_next, bound, 0.0),
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftRow {
    pub round: usize,
    pub gamma: f64,
    pub gamma_kuramoto: f64,
    pub fallback: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct DriftReport {
    pub rows: Vec<DriftRow>,
    pub non_fallback_rounds: usize,
    /// Share of non-fallback rounds with `Γ_ρ < Γ`; `None` when every round
    /// fell back.
    pub kuramoto_lower_fraction: Option<f64>,
    pub target_loss: f64,
    pub rounds_to_target_fedavg: Option<usize>,
    pub rounds_to_target_kuramoto: Option<usize>,
}

impl DriftReport {
    /// Counts agree with the rows and every drift is a finite non-negative
    /// (up to rounding) number.
    pub fn is_consistent(&self) -> bool {
        let non_fallback = self.rows.iter().filter(|r| !r.fallback).count();
        let fraction_ok = match self.kuramoto_lower_fraction {
            None => non_fallback == 0,
            Some(f) => non_fallback > 0 && (0.0..=1.0).contains(&f),
        };
        non_fallback == self.non_fallback_rounds
            && fraction_ok
            && self.rows.iter().all(|r| r.gamma >= -1e-9 && r.gamma.is_finite() && r.gamma_kuramoto.is_finite())
    }
}

fn rounds_to_target(records: &[RoundRecord], target: f64) -> Option<usize> {
    records.iter().find(|r| r.mean_train_loss <= target).map(|r| r.round)
}

/// Compares drift per round of a Kuramoto run (`Γ` and `Γ_ρ` at the same
/// broadcast model) and rounds-to-target loss against a paired FedAvg run.
pub fn drift_comparison(fedavg: &[RoundRecord], kuramoto: &[RoundRecord], target_loss: f64) -> Result<DriftReport> {
    check_len(fedavg.len(), kuramoto.len())?;
    let rows: Vec<DriftRow> = kuramoto
        .iter()
        .map(|r| {
            let sync = r
                .sync
                .as_ref()
                .ok_or_else(|| Error::usage(format!("round {} has no synchronization diagnostics", r.round)))?;
            Ok(DriftRow {
                round: r.round,
                gamma: r.gamma,
                gamma_kuramoto: r.gamma_weighted,
                fallback: sync.fallback_used,
            })
        })
        .collect::<Result<_>>()?;
    let active: Vec<&DriftRow> = rows.iter().filter(|r| !r.fallback).collect();
    let kuramoto_lower_fraction = (!active.is_empty())
        .then(|| active.iter().filter(|r| r.gamma_kuramoto < r.gamma).count() as f64 / active.len() as f64);
    Ok(DriftReport {
        non_fallback_rounds: active.len(),
        rows,
        kuramoto_lower_fraction,
        target_loss,
        rounds_to_target_fedavg: rounds_to_target(fedavg, target_loss),
        rounds_to_target_kuramoto: rounds_to_target(kuramoto, target_loss),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::KuramotoMode;
    use crate::engine::{run_federation, AggregatorConfig, Client, Federation, LrSchedule, TrainingConfig};

    fn scalar(m: f64) -> QuadraticObjective {
        QuadraticObjective::isotropic(1.0, ParamVector::new(vec![m])).unwrap()
    }

    fn single(sigma: f64, eta: f64, num_mc: usize) -> TheoryInstance {
        TheoryInstance::new(vec![scalar(0.0)], vec![1.0], vec![sigma], eta, num_mc, 3).unwrap()
    }

    #[test]
    fn sigma_sq_definition() {
        let inst = TheoryInstance::new(
            vec![scalar(0.0), scalar(1.0), scalar(2.0)],
            vec![0.5, 0.3, 0.2],
            vec![2.0, 1.0, 0.5],
            0.1,
            10,
            0,
        )
        .unwrap();
        // 0.25·4 + 0.09·1 + 0.04·0.25
        assert!((inst.sigma_sq() - 1.1).abs() < 1e-15);
    }

    #[test]
    fn noiseless_equality_case() {
        let inst = single(0.0, 0.1, 1);
        let w = [1.0];
        let [complete, drift_only] = descent_checks(&inst, &w, Execution::Sequential).unwrap();
        assert!((complete.expected_next - 0.405).abs() < 1e-15);
        assert!((complete.bound - 0.405).abs() < 1e-15);
        assert!(complete.margin.abs() <= 1e-12);
        assert!(complete.holds && complete.equality);
        assert!((drift_only.bound - 0.400).abs() < 1e-15);
        assert!(!drift_only.holds);
    }

    #[test]
    fn tiny_step_satisfies_both_forms() {
        let inst = single(0.0, 1e-6, 1);
        let [complete, drift_only] = descent_checks(&inst, &[2.0], Execution::Sequential).unwrap();
        assert!(complete.holds);
        assert!(drift_only.holds);
    }

    #[test]
    fn halved_smoothness_breaks_the_bound() {
        let inst = single(0.0, 0.1, 1).with_smoothness(0.5);
        let r = descent_inequality_check(&inst, &[1.0], BoundForm::Complete, Execution::Sequential).unwrap();
        assert!(!r.holds);
    }

    #[test]
    fn noiseless_decomposition_is_exact() {
        let inst = TheoryInstance::random(3, 4, false, 10_000, 8).unwrap();
        let w = [0.3, -0.2, 1.0, 0.5];
        let r = variance_decomposition_check(&inst, &w, Execution::Sequential).unwrap();
        assert_eq!(r.draws, 1);
        assert!((r.second_moment - r.grad_norm_sq).abs() < 1e-12 * r.grad_norm_sq.max(1.0));
        assert!(r.passed());
    }

    #[test]
    fn single_client_unit_noise() {
        let inst = single(1.0, 0.1, 20_000);
        let r = variance_decomposition_check(&inst, &[2.0], Execution::Parallel).unwrap();
        assert!(within(r.second_moment, 4.0 + 1.0, r.second_moment_se), "{r:?}");
        assert!(r.passed());
    }

    #[test]
    fn independent_cross_terms_vanish() {
        let inst = TheoryInstance::new(
            vec![scalar(1.0), scalar(-1.0)],
            vec![0.5, 0.5],
            vec![1.0, 2.0],
            0.1,
            10_000,
            12,
        )
        .unwrap();
        let r = variance_decomposition_check(&inst, &[0.25], Execution::Parallel).unwrap();
        assert!(r.cross_term_se > 0.0);
        assert!(r.cross_term_vanishes && r.decomposition_holds);
        assert!((r.gamma - 1.0).abs() < 1e-15);
    }

    #[test]
    fn noisy_descent_matches_closed_form() {
        // E F(w') for F = ½w², one client: ½(1−η)²w² + ½η²σ².
        let inst = single(0.8, 0.2, 20_000);
        let (mean, se) = expected_next_value(&inst, &[1.5], Execution::Parallel).unwrap();
        let exact = 0.5 * 0.64 * 2.25 + 0.5 * 0.04 * 0.64;
        assert!(within(mean, exact, se), "{mean} vs {exact} ± {se}");
    }

    #[test]
    fn random_instances_are_valid() {
        for seed in 0..5 {
            let inst = TheoryInstance::random(4, 3, true, 100, seed).unwrap();
            let l = inst.smoothness().unwrap();
            assert!(inst.eta > 0.0 && inst.eta * l <= 1.0 + 1e-12);
            assert!(inst.sigma.iter().all(|&s| s > 0.0));
            assert!(inst.gamma(&[0.0; 3]).unwrap() >= 0.0);
        }
        assert_eq!(
            TheoryInstance::random(2, 2, true, 10, 4).unwrap(),
            TheoryInstance::random(2, 2, true, 10, 4).unwrap()
        );
    }

    #[test]
    fn rejects_bad_weights() {
        let err = TheoryInstance::new(vec![scalar(0.0)], vec![0.7], vec![0.0], 0.1, 1, 0);
        assert!(matches!(err, Err(Error::Usage(_))));
    }

    #[test]
    fn weighted_drift_on_opposing_scalars() {
        // Minimizers ±1 at w = 0: ∇F_1 = −1, ∇F_2 = 1, p = (½, ½).
        let grads = [ParamVector::new(vec![-1.0]), ParamVector::new(vec![1.0])];
        let p = [0.5, 0.5];
        let rho = [0.9, 0.1];
        let (gamma, gw) = diversity_from_gradients(&grads, &p, &rho).unwrap();
        let brute_gamma = 0.5 * 1.0 + 0.5 * 1.0 - 0.0;
        let brute_gw = 0.81 * 1.0 + 0.01 * 1.0 - 0.0;
        assert!((gamma - brute_gamma).abs() < 1e-12);
        assert!((gw - brute_gw).abs() < 1e-12);
    }

    fn quadratic_pair(minimizers: &[f64], aggregator: AggregatorConfig) -> (Vec<RoundRecord>, Vec<RoundRecord>) {
        let clients = minimizers
            .iter()
            .enumerate()
            .map(|(k, &m)| Client::quadratic(k, scalar(m), NoiseModel::none()))
            .collect();
        let fed = Federation::new(clients, None).unwrap();
        let base = TrainingConfig {
            rounds: 10,
            local_epochs: 1,
            batch_size: 1,
            lr: 0.3,
            momentum: 0.0,
            lr_schedule: LrSchedule::Constant,
            aggregator: AggregatorConfig::Fedavg,
            seed: 0,
            gradient_diversity: true,
        };
        let w0 = ParamVector::new(vec![3.0]);
        let fa = run_federation(&fed, &base, w0.clone(), Execution::Sequential, |_| {}).unwrap().1;
        let ku_cfg = TrainingConfig { aggregator, ..base };
        let ku = run_federation(&fed, &ku_cfg, w0, Execution::Sequential, |_| {}).unwrap().1;
        (fa, ku)
    }

    #[test]
    fn homogeneous_drift_comparison_is_vacuous() {
        let (fa, ku) = quadratic_pair(&[1.0, 1.0, 1.0], AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 1.0, 0.0));
        let r = drift_comparison(&fa, &ku, 1e-3).unwrap();
        assert!(r.rows.iter().all(|row| row.fallback && row.gamma.abs() < 1e-15));
        assert_eq!(r.kuramoto_lower_fraction, None);
        assert!(r.is_consistent());
        assert_eq!(r.rounds_to_target_fedavg, r.rounds_to_target_kuramoto);
    }

    #[test]
    fn heterogeneous_drift_report_is_consistent() {
        let minimizers: Vec<f64> = (0..10).map(|k| (k as f64 - 4.5) * 0.8).collect();
        let (fa, ku) = quadratic_pair(&minimizers, AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 1.0, 0.0));
        let r = drift_comparison(&fa, &ku, 5.0).unwrap();
        assert_eq!(r.rows.len(), 10);
        assert!(r.is_consistent());
        assert!(r.rounds_to_target_fedavg.is_some());
    }

    #[test]
    fn drift_comparison_requires_sync_diagnostics() {
        let (fa, _) = quadratic_pair(&[0.0, 1.0], AggregatorConfig::Fedavg);
        assert!(drift_comparison(&fa, &fa, 1.0).is_err());
    }
}
