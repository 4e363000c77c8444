//! The federated round loop: broadcast, parallel local training,
//! aggregation and per-round metrics.

mod config;
mod local;
mod metrics;

pub use config::{AggregatorConfig, DatasetSpec, FederatedConfig, LrSchedule, ModelSpec, TrainingConfig};
pub use local::{cosine_lr, local_train, steps_per_epoch, Controls, LocalOutcome};
pub use metrics::{diversity_from_gradients, gradient_diversity, loss_variance, RoundRecord};

use std::time::Instant;

use crate::aggregation::{
    fedavg_aggregate, kappa_schedule, kuramoto_aggregate, scaffold_server_step, ClientUpdate, ScaffoldState,
};
use crate::data::{label_shard_partition, load_idx, ClusterGenerator, LabeledDataset};
use crate::error::{Error, Result};
use crate::exec::Execution;
use crate::numeric::ParamVector;
use crate::objectives::{Batch, NoiseModel, Objective, PredictiveObjective, QuadraticObjective};
use crate::rng::{stream, Purpose};

/// One participant: its objective, its private data (predictive objectives
/// only) and its gradient noise.
#[derive(Clone, Debug)]
pub struct Client {
    pub id: usize,
    pub objective: Objective,
    pub shard: Option<LabeledDataset>,
    /// Determines `p_k` and the number of steps per epoch.
    pub num_samples: usize,
    pub noise: NoiseModel,
}

impl Client {
    pub fn supervised(id: usize, model: PredictiveObjective, shard: LabeledDataset, noise: NoiseModel) -> Self {
        Client {
            id,
            num_samples: shard.len(),
            objective: Objective::Predictive(model),
            shard: Some(shard),
            noise,
        }
    }

    /// A quadratic client takes one gradient step per epoch.
    pub fn quadratic(id: usize, objective: QuadraticObjective, noise: NoiseModel) -> Self {
        Client {
            id,
            objective: Objective::Quadratic(objective),
            shard: None,
            num_samples: 1,
            noise,
        }
    }

    /// Overrides the sample count, and with it the client's aggregation
    /// weight and steps per epoch.
    pub fn with_samples(mut self, num_samples: usize) -> Self {
        self.num_samples = num_samples;
        self
    }

    fn full_batch(&self) -> (Vec<usize>, Option<&LabeledDataset>) {
        match &self.shard {
            Some(s) => ((0..s.len()).collect(), Some(s)),
            None => (Vec::new(), None),
        }
    }

    /// Loss on the client's whole shard.
    pub fn full_loss(&self, w: &[f64]) -> Result<f64> {
        let (idx, data) = self.full_batch();
        self.objective.value(w, data.map(|data| Batch { data, indices: &idx }))
    }

    /// Exact gradient on the client's whole shard.
    pub fn full_gradient(&self, w: &[f64]) -> Result<ParamVector> {
        let (idx, data) = self.full_batch();
        Ok(self
            .objective
            .exact_gradient(w, data.map(|data| Batch { data, indices: &idx }))?
            .1)
    }
}

#[derive(Clone, Debug)]
pub struct Federation {
    pub clients: Vec<Client>,
    pub test_set: Option<LabeledDataset>,
}

impl Federation {
    pub fn new(clients: Vec<Client>, test_set: Option<LabeledDataset>) -> Result<Self> {
        let first = clients
            .first()
            .ok_or_else(|| Error::usage("a federation needs at least one client"))?;
        let dim = first.objective.param_count();
        for (i, c) in clients.iter().enumerate() {
            if c.id != i {
                return Err(Error::usage(format!("client at position {i} has id {}", c.id)));
            }
            if c.objective.param_count() != dim {
                return Err(Error::DimensionMismatch {
                    expected: dim,
                    found: c.objective.param_count(),
                });
            }
            if c.num_samples == 0 {
                return Err(Error::usage(format!("client {i} has no samples")));
            }
            c.noise.validate()?;
        }
        Ok(Federation { clients, test_set })
    }

    /// Builds clients from a config: loads or synthesizes data, label-shards
    /// it and attaches the model.
    pub fn from_config(cfg: &FederatedConfig) -> Result<Self> {
        cfg.validate()?;
        let (train, test) = load_dataset(cfg)?;
        let model = build_model(cfg, &train)?;
        let partition = label_shard_partition(&train, cfg.num_clients, cfg.shards_per_client, cfg.seed)?;
        partition.validate(train.len())?;
        let clients = partition
            .assignments
            .iter()
            .enumerate()
            .map(|(k, idx)| Ok(Client::supervised(k, model.clone(), train.subset(idx)?, cfg.noise)))
            .collect::<Result<Vec<_>>>()?;
        Federation::new(clients, Some(test))
    }

    pub fn dim(&self) -> usize {
        self.clients[0].objective.param_count()
    }

    pub fn total_samples(&self) -> usize {
        self.clients.iter().map(|c| c.num_samples).sum()
    }

    pub fn weights(&self) -> Vec<f64> {
        let total = self.total_samples() as f64;
        self.clients.iter().map(|c| c.num_samples as f64 / total).collect()
    }

    /// Seeded initial model: Glorot for networks, zero for quadratics.
    pub fn initial_model(&self, seed: u64) -> ParamVector {
        match &self.clients[0].objective {
            Objective::Predictive(p) => p.init_params(&mut stream(seed, Purpose::Init, 0, 0)),
            Objective::Quadratic(q) => ParamVector::zeros(q.dim()),
        }
    }

    fn predictive_model(&self) -> Option<&PredictiveObjective> {
        match &self.clients[0].objective {
            Objective::Predictive(p) => Some(p),
            Objective::Quadratic(_) => None,
        }
    }
}

/// Training and test data described by the config.
pub fn load_dataset(cfg: &FederatedConfig) -> Result<(LabeledDataset, LabeledDataset)> {
    match &cfg.dataset {
        DatasetSpec::Synthetic {
            classes,
            per_class,
            test_per_class,
            dim,
            spread,
            seed,
        } => {
            let g = ClusterGenerator::new(*classes, *dim, *spread, seed.unwrap_or(cfg.seed))?;
            Ok((g.sample(*per_class, 0)?, g.sample(*test_per_class, 1)?))
        }
        DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            subset,
            test_subset,
        } => {
            let mut train = load_idx(train_images, train_labels)?;
            let mut test = load_idx(test_images, test_labels)?;
            if let Some(n) = subset {
                train = train.head(*n)?;
            }
            if let Some(n) = test_subset {
                test = test.head(*n)?;
            }
            let shards = cfg.num_clients * cfg.shards_per_client;
            if shards > train.len() {
                return Err(Error::usage(format!(
                    "num_clients * shards_per_client = {shards} exceeds the {} training samples",
                    train.len()
                )));
            }
            Ok((train, test))
        }
    }
}

fn build_model(cfg: &FederatedConfig, train: &LabeledDataset) -> Result<PredictiveObjective> {
    match &cfg.model {
        ModelSpec::Logistic => PredictiveObjective::logistic(train.dim(), train.num_classes()),
        ModelSpec::Mlp { hidden } => PredictiveObjective::mlp(train.dim(), hidden, train.num_classes()),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ServerState {
    /// Rounds completed so far.
    pub round: usize,
    pub model: ParamVector,
    pub scaffold: Option<ScaffoldState>,
}

impl ServerState {
    pub fn new(model: ParamVector, federation: &Federation, cfg: &TrainingConfig) -> Self {
        let scaffold = matches!(cfg.aggregator, AggregatorConfig::Scaffold)
            .then(|| ScaffoldState::new(model.len(), federation.clients.len()));
        ServerState {
            round: 0,
            model,
            scaffold,
        }
    }
}

/// One communication round.
pub fn run_round(
    state: &ServerState,
    federation: &Federation,
    cfg: &TrainingConfig,
    exec: Execution,
) -> Result<(ServerState, RoundRecord)> {
    let started = Instant::now();
    let t = state.round;
    let w = &state.model;
    let total = federation.total_samples();
    let broadcast = w.fingerprint();

    let outcomes = exec.map_slice(&federation.clients, |k, client| {
        let controls = state.scaffold.as_ref().map(|s| Controls {
            server: &s.server_control,
            client: &s.client_controls[k],
        });
        local_train(w, client, cfg, t, total, controls)
    });
    let outcomes = outcomes.into_iter().collect::<Result<Vec<_>>>()?;
    if let Some(o) = outcomes.iter().find(|o| o.start_fingerprint != broadcast) {
        return Err(Error::Numeric(format!(
            "client {} did not start from the broadcast model",
            o.update.client_id
        )));
    }
    let updates: Vec<ClientUpdate> = outcomes.iter().map(|o| o.update.clone()).collect();

    let mut kappa_t = None;
    let mut sync = None;
    let mut scaffold = None;
    let model = match &cfg.aggregator {
        AggregatorConfig::Fedavg | AggregatorConfig::Fedprox { .. } => fedavg_aggregate(w, &updates)?,
        AggregatorConfig::Kuramoto { kappa0, beta, .. } => {
            let k = kappa_schedule(*kappa0, *beta, t);
            let mode = cfg.aggregator.kuramoto_mode().expect("kuramoto aggregator");
            let (model, diag) = kuramoto_aggregate(w, &updates, &mode, k)?;
            kappa_t = Some(k);
            sync = Some(diag);
            model
        }
        AggregatorConfig::Scaffold => {
            let s = state
                .scaffold
                .as_ref()
                .ok_or_else(|| Error::usage("SCAFFOLD round without control state"))?;
            let deltas: Vec<ParamVector> = outcomes
                .iter()
                .map(|o| o.control_delta.clone().expect("scaffold client returns control delta"))
                .collect();
            let (model, next) = scaffold_server_step(s, w, &updates, &deltas, 1.0)?;
            scaffold = Some(next);
            model
        }
    };
    if !model.is_finite() {
        return Err(Error::Numeric(format!("model diverged in round {}", t + 1)));
    }

    let p = federation.weights();
    let (gamma, gamma_weighted) = if cfg.gradient_diversity {
        let rho = sync.as_ref().map(|d| d.rho.as_slice()).unwrap_or(&p);
        gradient_diversity(w, federation, &p, rho, exec)?
    } else {
        (f64::NAN, f64::NAN)
    };

    let client_losses = exec
        .map_slice(&federation.clients, |_, c| c.full_loss(&model))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let mean_train_loss = client_losses.iter().zip(&p).map(|(l, pk)| l * pk).sum();
    let test_accuracy = match (federation.predictive_model(), &federation.test_set) {
        (Some(m), Some(test)) => Some(m.accuracy(&model, test)?),
        _ => None,
    };

    let record = RoundRecord {
        round: t + 1,
        loss_variance: loss_variance(&client_losses),
        client_losses,
        mean_train_loss,
        test_accuracy,
        gamma,
        gamma_weighted,
        kappa_t,
        model_fingerprint: model.fingerprint(),
        sync,
        wall_time_ms: started.elapsed().as_secs_f64() * 1e3,
    };
    let next = ServerState {
        round: t + 1,
        model,
        scaffold: scaffold.or_else(|| state.scaffold.clone()),
    };
    Ok((next, record))
}

/// Drives a federation for `cfg.rounds` rounds from `initial`.
pub fn run_federation<F>(
    federation: &Federation,
    cfg: &TrainingConfig,
    initial: ParamVector,
    exec: Execution,
    mut on_round: F,
) -> Result<(ServerState, Vec<RoundRecord>)>
where
    F: FnMut(&RoundRecord),
{
    cfg.validate()?;
    if initial.len() != federation.dim() {
        return Err(Error::DimensionMismatch {
            expected: federation.dim(),
            found: initial.len(),
        });
    }
    let mut state = ServerState::new(initial, federation, cfg);
    let mut records = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let (next, record) = run_round(&state, federation, cfg, exec)?;
        on_round(&record);
        records.push(record);
        state = next;
    }
    Ok((state, records))
}

/// Validates, builds the federation and runs every round.
pub fn run_experiment(cfg: &FederatedConfig, exec: Execution) -> Result<Vec<RoundRecord>> {
    run_experiment_with(cfg, exec, |_| {})
}

pub fn run_experiment_with<F>(cfg: &FederatedConfig, exec: Execution, on_round: F) -> Result<Vec<RoundRecord>>
where
    F: FnMut(&RoundRecord),
{
    let federation = Federation::from_config(cfg)?;
    let initial = federation.initial_model(cfg.seed);
    Ok(run_federation(&federation, &cfg.training(), initial, exec, on_round)?.1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::aggregation::{FallbackReason, KuramotoMode};
    use crate::data::synthesize_clusters;
    use crate::numeric::kernels;

    fn training(aggregator: AggregatorConfig, rounds: usize, epochs: usize, batch: usize) -> TrainingConfig {
        TrainingConfig {
            rounds,
            local_epochs: epochs,
            batch_size: batch,
            lr: 0.1,
            momentum: 0.0,
            lr_schedule: LrSchedule::Constant,
            aggregator,
            seed: 5,
            gradient_diversity: true,
        }
    }

    fn synthetic_config(aggregator: AggregatorConfig) -> FederatedConfig {
        FederatedConfig {
            num_clients: 4,
            rounds: 3,
            local_epochs: 2,
            batch_size: 8,
            lr: 0.05,
            momentum: 0.9,
            lr_schedule: LrSchedule::Cosine,
            shards_per_client: 2,
            seed: 17,
            aggregator,
            dataset: DatasetSpec::Synthetic {
                classes: 4,
                per_class: 20,
                test_per_class: 10,
                dim: 5,
                spread: 0.8,
                seed: None,
            },
            model: ModelSpec::Mlp { hidden: vec![8] },
            noise: NoiseModel::default(),
            gradient_diversity: true,
        }
    }

    fn homogeneous(k: usize, model: &PredictiveObjective) -> Federation {
        let shard = synthesize_clusters(3, 8, 4, 0.6, 2).unwrap();
        let clients = (0..k)
            .map(|i| Client::supervised(i, model.clone(), shard.clone(), NoiseModel::none()))
            .collect();
        Federation::new(clients, Some(shard)).unwrap()
    }

    #[test]
    fn single_client_matches_centralized_sgd() {
        let q = QuadraticObjective::from_diagonal(&[1.0, 3.0], ParamVector::new(vec![1.0, -2.0])).unwrap();
        let fed = Federation::new(vec![Client::quadratic(0, q.clone(), NoiseModel::none())], None).unwrap();
        let cfg = training(AggregatorConfig::Fedavg, 5, 1, 1);
        let (state, records) =
            run_federation(&fed, &cfg, ParamVector::zeros(2), Execution::Sequential, |_| {}).unwrap();
        let mut w = ParamVector::zeros(2);
        for _ in 0..5 {
            let g = q.gradient(&w).unwrap();
            kernels::axpy_in_place(-0.1, &g, &mut w);
        }
        assert_eq!(state.model, w);
        assert_eq!(records.len(), 5);
        assert!(records.iter().all(|r| r.loss_variance == 0.0 && r.gamma.abs() < 1e-15));
    }

    #[test]
    fn homogeneous_limit() {
        let model = PredictiveObjective::mlp(4, &[6], 3).unwrap();
        let fed = homogeneous(3, &model);
        let w0 = fed.initial_model(1);
        for aggregator in [
            AggregatorConfig::Fedavg,
            AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 0.5, 0.0),
            AggregatorConfig::kuramoto(KuramotoMode::sine_ratio(), 1.0, 0.0),
            AggregatorConfig::Scaffold,
        ] {
            let cfg = training(aggregator, 3, 2, 64);
            let (_, records) = run_federation(&fed, &cfg, w0.clone(), Execution::Parallel, |_| {}).unwrap();
            for r in &records {
                assert!(r.loss_variance.abs() < 1e-12);
                assert!(r.gamma.abs() < 1e-12);
                if let Some(sync) = &r.sync {
                    assert!(sync.fallback_used);
                }
            }
        }
    }

    #[test]
    fn coherent_kuramoto_round_equals_fedavg_bitwise() {
        let model = PredictiveObjective::logistic(4, 3).unwrap();
        let fed = homogeneous(4, &model);
        let w0 = fed.initial_model(3);
        let run = |aggregator| {
            let cfg = training(aggregator, 4, 2, 64);
            run_federation(&fed, &cfg, w0.clone(), Execution::Sequential, |_| {}).unwrap()
        };
        let (fa, fa_rec) = run(AggregatorConfig::Fedavg);
        let (ku, ku_rec) = run(AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 1.0, 0.0));
        assert_eq!(fa.model.fingerprint(), ku.model.fingerprint());
        for (a, b) in fa_rec.iter().zip(&ku_rec) {
            assert_eq!(a.model_fingerprint, b.model_fingerprint);
            assert_eq!(a.test_accuracy, b.test_accuracy);
            let sync = b.sync.as_ref().unwrap();
            assert!(sync.fallback_used);
            assert_eq!(sync.fallback_reason, Some(FallbackReason::CoherentPhases));
        }
    }

    #[test]
    fn zero_coupling_freezes_model() {
        let cfg = synthetic_config(AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 0.0, 0.0));
        let fed = Federation::from_config(&cfg).unwrap();
        let w0 = fed.initial_model(cfg.seed);
        let (state, _) = run_federation(&fed, &cfg.training(), w0.clone(), Execution::Parallel, |_| {}).unwrap();
        assert_eq!(state.model, w0);
    }

    fn strip_time(mut records: Vec<RoundRecord>) -> Vec<RoundRecord> {
        for r in &mut records {
            r.wall_time_ms = 0.0;
        }
        records
    }

    #[test]
    fn deterministic_across_execution_modes() {
        for aggregator in [
            AggregatorConfig::Fedavg,
            AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 0.1, 0.0),
            AggregatorConfig::Scaffold,
            AggregatorConfig::Fedprox { mu_prox: 0.01 },
        ] {
            let cfg = synthetic_config(aggregator);
            let a = strip_time(run_experiment(&cfg, Execution::Sequential).unwrap());
            let b = strip_time(run_experiment(&cfg, Execution::Parallel).unwrap());
            let c = strip_time(run_experiment(&cfg, Execution::Parallel).unwrap());
            assert_eq!(a.len(), 3);
            assert_eq!(a, b);
            assert_eq!(b, c);
            for r in &a {
                assert!(r.gamma >= -1e-9);
                assert!(r.loss_variance >= 0.0);
                let acc = r.test_accuracy.unwrap();
                assert!((0.0..=1.0).contains(&acc));
            }
        }
    }

    #[test]
    fn seed_changes_trajectory() {
        let mut cfg = synthetic_config(AggregatorConfig::Fedavg);
        let a = run_experiment(&cfg, Execution::Sequential).unwrap();
        cfg.seed += 1;
        let b = run_experiment(&cfg, Execution::Sequential).unwrap();
        assert_ne!(a[2].model_fingerprint, b[2].model_fingerprint);
    }

    #[test]
    fn validation_happens_before_compute() {
        let mut cfg = synthetic_config(AggregatorConfig::Fedavg);
        cfg.rounds = 0;
        assert!(matches!(run_experiment(&cfg, Execution::Sequential), Err(Error::Usage(_))));
        let mut cfg = synthetic_config(AggregatorConfig::Fedavg);
        cfg.shards_per_client = 30;
        let err = run_experiment(&cfg, Execution::Sequential).unwrap_err();
        assert!(err.to_string().contains("shards_per_client"), "{err}");
    }

    #[test]
    fn progress_callback_sees_every_round() {
        let cfg = synthetic_config(AggregatorConfig::Fedavg);
        let mut seen = Vec::new();
        run_experiment_with(&cfg, Execution::Sequential, |r| seen.push(r.round)).unwrap();
        assert_eq!(seen, vec![1, 2, 3]);
    }

    #[test]
    fn client_weights_sum_to_one() {
        let cfg = synthetic_config(AggregatorConfig::Fedavg);
        let fed = Federation::from_config(&cfg).unwrap();
        let p = fed.weights();
        assert_eq!(p.len(), 4);
        assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(fed.clients.iter().all(|c| c.num_samples == 20));
    }
}
