use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::aggregation::{KuramotoMode, KuramotoVariant};
use crate::error::{Error, Result};
use crate::objectives::NoiseModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    Constant,
    /// One cosine decay over all `T·E` epochs.
    #[default]
    Cosine,
    /// Cosine decay restarted at every round.
    CosinePerRound,
}

fn default_kappa0() -> f64 {
    0.1
}

fn default_epsilon_sync() -> f64 {
    KuramotoMode::default().epsilon_sync
}

fn default_rho_max() -> f64 {
    KuramotoMode::default().rho_max
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum AggregatorConfig {
    Fedavg,
    Kuramoto {
        #[serde(default)]
        variant: KuramotoVariant,
        #[serde(default = "default_kappa0")]
        kappa0: f64,
        #[serde(default)]
        beta: f64,
        #[serde(default = "default_epsilon_sync")]
        epsilon_sync: f64,
        #[serde(default = "default_rho_max")]
        rho_max: f64,
        #[serde(default)]
        clamp_negative: bool,
    },
    Scaffold,
    Fedprox {
        mu_prox: f64,
    },
}

impl AggregatorConfig {
    pub fn kuramoto(mode: KuramotoMode, kappa0: f64, beta: f64) -> Self {
        AggregatorConfig::Kuramoto {
            variant: mode.variant,
            kappa0,
            beta,
            epsilon_sync: mode.epsilon_sync,
            rho_max: mode.rho_max,
            clamp_negative: mode.clamp_negative,
        }
    }

    pub fn kuramoto_mode(&self) -> Option<KuramotoMode> {
        match *self {
            AggregatorConfig::Kuramoto {
                variant,
                epsilon_sync,
                rho_max,
                clamp_negative,
                ..
            } => Some(KuramotoMode {
                variant,
                epsilon_sync,
                rho_max,
                clamp_negative,
            }),
            _ => None,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            AggregatorConfig::Fedavg => "fedavg",
            AggregatorConfig::Kuramoto { .. } => "kuramoto",
            AggregatorConfig::Scaffold => "scaffold",
            AggregatorConfig::Fedprox { .. } => "fedprox",
        }
    }

    fn validate(&self) -> Result<()> {
        match self {
            AggregatorConfig::Kuramoto { kappa0, beta, .. } => {
                if !(*kappa0 >= 0.0 && kappa0.is_finite()) {
                    return Err(Error::usage(format!("aggregator.kappa0 must be >= 0, got {kappa0}")));
                }
                if !(*beta >= 0.0 && beta.is_finite()) {
                    return Err(Error::usage(format!("aggregator.beta must be >= 0, got {beta}")));
                }
                self.kuramoto_mode().unwrap().validate()
            }
            AggregatorConfig::Fedprox { mu_prox } if !(*mu_prox >= 0.0) => Err(Error::usage(
                format!("aggregator.mu_prox must be >= 0, got {mu_prox}"),
            )),
            _ => Ok(()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DatasetSpec {
    /// Gaussian clusters; train and test share centers.
    Synthetic {
        classes: usize,
        per_class: usize,
        test_per_class: usize,
        dim: usize,
        spread: f64,
        /// Defaults to the run seed.
        #[serde(default)]
        seed: Option<u64>,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        /// Use only the first `subset` training samples.
        #[serde(default)]
        subset: Option<usize>,
        #[serde(default)]
        test_subset: Option<usize>,
    },
}

fn default_hidden() -> Vec<usize> {
    vec![64, 64]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ModelSpec {
    Logistic,
    Mlp {
        #[serde(default = "default_hidden")]
        hidden: Vec<usize>,
    },
}

/// One complete experiment.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FederatedConfig {
    pub num_clients: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    #[serde(default)]
    pub lr_schedule: LrSchedule,
    pub shards_per_client: usize,
    pub seed: u64,
    pub aggregator: AggregatorConfig,
    pub dataset: DatasetSpec,
    pub model: ModelSpec,
    #[serde(default)]
    pub noise: NoiseModel,
    /// Compute Γ(t) each round (one extra full-batch gradient pass).
    #[serde(default = "default_true")]
    pub gradient_diversity: bool,
}

fn default_true() -> bool {
    true
}

/// The round-loop parameters, independent of where client data comes from.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainingConfig {
    pub rounds: usize,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub lr_schedule: LrSchedule,
    pub aggregator: AggregatorConfig,
    pub seed: u64,
    pub gradient_diversity: bool,
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.rounds == 0 {
            return Err(Error::usage("rounds must be >= 1"));
        }
        if self.local_epochs == 0 {
            return Err(Error::usage("local_epochs must be >= 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch_size must be >= 1"));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::usage(format!("lr must be finite and >= 0, got {}", self.lr)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::usage(format!("momentum must be in [0, 1), got {}", self.momentum)));
        }
        self.aggregator.validate()
    }
}

impl FederatedConfig {
    pub fn training(&self) -> TrainingConfig {
        TrainingConfig {
            rounds: self.rounds,
            local_epochs: self.local_epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            lr_schedule: self.lr_schedule,
            aggregator: self.aggregator.clone(),
            seed: self.seed,
            gradient_diversity: self.gradient_diversity,
        }
    }

    /// Everything checkable without touching data.
    pub fn validate(&self) -> Result<()> {
        if self.num_clients == 0 {
            return Err(Error::usage("num_clients must be >= 1"));
        }
        if self.shards_per_client == 0 {
            return Err(Error::usage("shards_per_client must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::usage(format!("lr must be > 0, got {}", self.lr)));
        }
        self.training().validate()?;
        self.noise.validate()?;
        match &self.dataset {
            DatasetSpec::Synthetic {
                classes,
                per_class,
                test_per_class,
                dim,
                spread,
                ..
            } => {
                if *classes < 2 || *per_class == 0 || *test_per_class == 0 || *dim == 0 {
                    return Err(Error::usage(
                        "synthetic dataset needs classes >= 2 and positive per_class, test_per_class, dim",
                    ));
                }
                if !(*spread > 0.0) {
                    return Err(Error::usage("dataset.spread must be > 0"));
                }
                let n = classes * per_class;
                let shards = self.num_clients * self.shards_per_client;
                if shards > n {
                    return Err(Error::usage(format!(
                        "num_clients * shards_per_client = {shards} exceeds the {n} training samples"
                    )));
                }
            }
            DatasetSpec::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                ..
            } => {
                for p in [train_images, train_labels, test_images, test_labels] {
                    if !p.is_file() {
                        return Err(Error::usage(format!("dataset file not found: {}", p.display())));
                    }
                }
            }
        }
        if let ModelSpec::Mlp { hidden } = &self.model {
            if hidden.iter().any(|&h| h == 0) {
                return Err(Error::usage("model.hidden sizes must be >= 1"));
            }
        }
        Ok(())
    }
}
