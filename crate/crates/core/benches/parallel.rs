//! Sequential vs rayon execution of one federated round and of the
//! Monte-Carlo theory checks. Build with `--no-default-features` to see the
//! sequential fallback (both arms then run sequentially).

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use kfl_core::aggregation::KuramotoMode;
use kfl_core::engine::{
    run_round, AggregatorConfig, DatasetSpec, FederatedConfig, Federation, LrSchedule, ModelSpec, ServerState,
};
use kfl_core::exec::Execution;
use kfl_core::objectives::NoiseModel;
use kfl_core::theory::{descent_checks, random_point, variance_decomposition_check, TheoryInstance};

const MODES: [(&str, Execution); 2] = [("sequential", Execution::Sequential), ("parallel", Execution::Parallel)];

fn benchmark_config(aggregator: AggregatorConfig) -> FederatedConfig {
    FederatedConfig {
        num_clients: 10,
        rounds: 100,
        local_epochs: 2,
        batch_size: 64,
        lr: 0.5,
        momentum: 0.9,
        lr_schedule: LrSchedule::Cosine,
        shards_per_client: 3,
        seed: 0,
        aggregator,
        dataset: DatasetSpec::Synthetic {
            classes: 10,
            per_class: 100,
            test_per_class: 50,
            dim: 10,
            spread: 1.3,
            seed: None,
        },
        model: ModelSpec::Mlp { hidden: vec![64, 64] },
        noise: NoiseModel::none(),
        gradient_diversity: true,
    }
}

fn round(c: &mut Criterion) {
    let mut group = c.benchmark_group("round");
    group.sample_size(20);
    for aggregator in [
        AggregatorConfig::Fedavg,
        AggregatorConfig::kuramoto(KuramotoMode::stabilized(), 0.1, 0.0),
        AggregatorConfig::Scaffold,
    ] {
        let cfg = benchmark_config(aggregator);
        let federation = Federation::from_config(&cfg).unwrap();
        let training = cfg.training();
        let state = ServerState::new(federation.initial_model(cfg.seed), &federation, &training);
        for (name, exec) in MODES {
            group.bench_function(BenchmarkId::new(cfg.aggregator.name(), name), |b| {
                b.iter(|| run_round(&state, &federation, &training, exec).unwrap())
            });
        }
    }
    group.finish();
}

fn monte_carlo(c: &mut Criterion) {
    let mut group = c.benchmark_group("monte_carlo");
    group.sample_size(20);
    let inst = TheoryInstance::random(4, 3, true, 10_000, 7).unwrap();
    let w = random_point(3, 2.0, 7, 0);
    for (name, exec) in MODES {
        group.bench_function(BenchmarkId::new("variance_decomposition", name), |b| {
            b.iter(|| variance_decomposition_check(&inst, &w, exec).unwrap())
        });
        group.bench_function(BenchmarkId::new("descent", name), |b| {
            b.iter(|| descent_checks(&inst, &w, exec).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, round, monte_carlo);
criterion_main!(benches);
