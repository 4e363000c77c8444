//! The TOML experiment file.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kfl_core::aggregation::KuramotoMode;
use kfl_core::engine::{AggregatorConfig, DatasetSpec, FederatedConfig};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentFile {
    pub federation: Option<FederatedConfig>,
    #[serde(default)]
    pub output: OutputSection,
    pub sweep: Option<SweepSection>,
    pub theory: Option<TheorySection>,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// Output directory, relative to the config file.
    pub dir: Option<PathBuf>,
    /// Fill the wall_time_ms column. Off by default so reruns are
    /// byte-identical.
    #[serde(default)]
    pub timing: bool,
}

/// A κ₀ sweep value: a coupling strength, or plain FedAvg.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum KappaValue {
    Coupling(f64),
    Label(KappaLabel),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum KappaLabel {
    NoSync,
}

impl KappaValue {
    pub fn label(&self) -> String {
        match self {
            KappaValue::Coupling(k) => format!("kappa0={k}"),
            KappaValue::Label(KappaLabel::NoSync) => "no-sync".to_string(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    #[serde(default)]
    pub kappa0: Vec<KappaValue>,
    #[serde(default)]
    pub shards_per_client: Vec<usize>,
    #[serde(default)]
    pub seed: Vec<u64>,
}

fn default_instances() -> usize {
    20
}
fn default_clients() -> usize {
    4
}
fn default_dim() -> usize {
    3
}
fn default_num_mc() -> usize {
    10_000
}
fn default_one() -> f64 {
    1.0
}
fn default_true() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TheorySection {
    #[serde(default = "default_instances")]
    pub instances: usize,
    #[serde(default = "default_clients")]
    pub clients: usize,
    #[serde(default = "default_dim")]
    pub dim: usize,
    #[serde(default = "default_num_mc")]
    pub num_mc: usize,
    #[serde(default)]
    pub seed: u64,
    /// Gaussian gradient noise on the random instances.
    #[serde(default = "default_true")]
    pub noisy: bool,
    /// Multiplies every computed smoothness constant. Values below 1
    /// produce invalid bounds on purpose.
    #[serde(default = "default_one")]
    pub smoothness_scale: f64,
    #[serde(default)]
    pub drift: DriftSection,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DriftSection {
    pub clients: usize,
    pub dim: usize,
    pub rounds: usize,
    pub local_epochs: usize,
    /// Local step as a fraction of `1/L_max`.
    pub step_fraction: f64,
    pub kappa0: f64,
    /// Defaults to FedAvg's final loss plus 1% of its initial gap.
    pub target_loss: Option<f64>,
}

impl Default for DriftSection {
    fn default() -> Self {
        DriftSection {
            clients: 10,
            dim: 5,
            rounds: 30,
            local_epochs: 3,
            step_fraction: 0.5,
            kappa0: 1.0,
            target_loss: None,
        }
    }
}

impl TheorySection {
    pub fn validate(&self) -> Result<()> {
        if self.instances == 0 || self.clients == 0 || self.dim == 0 {
            bail!("theory.instances, theory.clients and theory.dim must be >= 1");
        }
        if self.num_mc < 10_000 {
            bail!("theory.num_mc must be >= 10000, got {}", self.num_mc);
        }
        if !(self.smoothness_scale > 0.0 && self.smoothness_scale.is_finite()) {
            bail!("theory.smoothness_scale must be > 0");
        }
        let d = &self.drift;
        if d.clients < 2 || d.dim == 0 || d.rounds == 0 || d.local_epochs == 0 {
            bail!("theory.drift needs clients >= 2 and positive dim, rounds, local_epochs");
        }
        if !(d.step_fraction > 0.0 && d.step_fraction <= 1.0) {
            bail!("theory.drift.step_fraction must be in (0, 1]");
        }
        if !(d.kappa0 >= 0.0 && d.kappa0.is_finite()) {
            bail!("theory.drift.kappa0 must be >= 0");
        }
        Ok(())
    }
}

impl ExperimentFile {
    pub fn parse(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    /// Reads, parses and resolves relative paths against the file's
    /// directory. Parse errors carry line and column.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut file = Self::parse(&text).with_context(|| format!("invalid config {}", path.display()))?;
        let base = path.parent().unwrap_or(Path::new(""));
        file.resolve_paths(base);
        Ok(file)
    }

    fn resolve_paths(&mut self, base: &Path) {
        let join = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(DatasetSpec::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            ..
        }) = self.federation.as_mut().map(|f| &mut f.dataset)
        {
            join(train_images);
            join(train_labels);
            join(test_images);
            join(test_labels);
        }
        if let Some(dir) = self.output.dir.as_mut() {
            join(dir);
        }
    }

    pub fn federation(&self) -> Result<&FederatedConfig> {
        self.federation.as_ref().context("config has no [federation] section")
    }

    pub fn theory(&self) -> Result<&TheorySection> {
        self.theory.as_ref().context("config has no [theory] section")
    }

    /// `--out` wins over `output.dir`; the fallback is `runs/<config stem>`.
    pub fn output_dir(&self, cli_out: Option<&Path>, config_path: &Path) -> PathBuf {
        if let Some(out) = cli_out {
            return out.to_path_buf();
        }
        self.output.dir.clone().unwrap_or_else(|| {
            let stem = config_path.file_stem().and_then(|s| s.to_str()).unwrap_or("run");
            PathBuf::from("runs").join(stem)
        })
    }
}

/// One sweep cell: the label and the derived config.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub kappa: Option<KappaValue>,
    pub config: FederatedConfig,
}

/// Cartesian product of the sweep axes, κ₀ outermost. Missing axes keep the
/// base value.
pub fn sweep_cells(base: &FederatedConfig, sweep: &SweepSection) -> Result<Vec<SweepCell>> {
    if sweep.kappa0.is_empty() && sweep.shards_per_client.is_empty() && sweep.seed.is_empty() {
        bail!("[sweep] needs at least one non-empty axis (kappa0, shards_per_client, seed)");
    }
    let kappas: Vec<Option<KappaValue>> = if sweep.kappa0.is_empty() {
        vec![None]
    } else {
        sweep.kappa0.iter().copied().map(Some).collect()
    };
    let shards = if sweep.shards_per_client.is_empty() {
        vec![base.shards_per_client]
    } else {
        sweep.shards_per_client.clone()
    };
    let seeds = if sweep.seed.is_empty() { vec![base.seed] } else { sweep.seed.clone() };

    let mut cells = Vec::new();
    for kappa in &kappas {
        for &s in &shards {
            for &seed in &seeds {
                let mut config = base.clone();
                config.shards_per_client = s;
                config.seed = seed;
                let mut label = Vec::new();
                if let Some(k) = kappa {
                    config.aggregator = kappa_aggregator(&base.aggregator, *k)?;
                    label.push(k.label());
                }
                if !sweep.shards_per_client.is_empty() {
                    label.push(format!("s={s}"));
                }
                if !sweep.seed.is_empty() {
                    label.push(format!("seed={seed}"));
                }
                cells.push(SweepCell {
                    label: label.join("_"),
                    kappa: *kappa,
                    config,
                });
            }
        }
    }
    Ok(cells)
}

/// `no-sync` is FedAvg; a number sets κ₀ on the base Kuramoto settings (or
/// the stabilized defaults when the base aggregator is something else).
fn kappa_aggregator(base: &AggregatorConfig, kappa: KappaValue) -> Result<AggregatorConfig> {
    Ok(match kappa {
        KappaValue::Label(KappaLabel::NoSync) => AggregatorConfig::Fedavg,
        KappaValue::Coupling(k) => {
            if !(k >= 0.0 && k.is_finite()) {
                bail!("sweep.kappa0 values must be >= 0, got {k}");
            }
            match base {
                AggregatorConfig::Kuramoto { beta, .. } => {
                    AggregatorConfig::kuramoto(base.kuramoto_mode().unwrap(), k, *beta)
                }
                _ => AggregatorConfig::kuramoto(KuramotoMode::default(), k, 0.0),
            }
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
[federation]
num_clients = 2
rounds = 3
local_epochs = 1
batch_size = 8
lr = 0.1
momentum = 0.0
shards_per_client = 1
seed = 1

[federation.aggregator]
kind = "kuramoto"
kappa0 = 0.5

[federation.dataset]
kind = "synthetic"
classes = 2
per_class = 10
test_per_class = 5
dim = 3
spread = 0.5

[federation.model]
kind = "logistic"

[sweep]
kappa0 = [0.005, 0.1, "no-sync"]
seed = [1, 2]
"#;

    #[test]
    fn parses_minimal_file() {
        let f = ExperimentFile::parse(MINIMAL).unwrap();
        let fed = f.federation().unwrap();
        assert_eq!(fed.num_clients, 2);
        assert!(fed.gradient_diversity);
        assert_eq!(fed.aggregator.kuramoto_mode(), Some(KuramotoMode::default()));
        let sweep = f.sweep.unwrap();
        assert_eq!(sweep.kappa0[2], KappaValue::Label(KappaLabel::NoSync));
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let bad = MINIMAL.replace("momentum = 0.0", "momentum = 0.0\nmomentom = 0.9");
        let err = format!("{:#}", ExperimentFile::parse(&bad).unwrap_err());
        assert!(err.contains("momentom"), "{err}");
        assert!(err.contains("line 9"), "{err}");
        let bad = MINIMAL.replace("[sweep]", "[sweeep]");
        assert!(ExperimentFile::parse(&bad).is_err());
    }

    #[test]
    fn sweep_product_and_labels() {
        let f = ExperimentFile::parse(MINIMAL).unwrap();
        let cells = sweep_cells(f.federation().unwrap(), f.sweep.as_ref().unwrap()).unwrap();
        let labels: Vec<&str> = cells.iter().map(|c| c.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "kappa0=0.005_seed=1",
                "kappa0=0.005_seed=2",
                "kappa0=0.1_seed=1",
                "kappa0=0.1_seed=2",
                "no-sync_seed=1",
                "no-sync_seed=2"
            ]
        );
        assert_eq!(cells[4].config.aggregator, AggregatorConfig::Fedavg);
        assert_eq!(cells[3].config.seed, 2);
    }

    #[test]
    fn empty_sweep_rejected() {
        let f = ExperimentFile::parse(MINIMAL).unwrap();
        assert!(sweep_cells(f.federation().unwrap(), &SweepSection::default()).is_err());
    }
}
