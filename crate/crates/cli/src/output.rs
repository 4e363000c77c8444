//! Metrics CSV, run manifest and sweep summary.

use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use kfl_core::engine::{DatasetSpec, FederatedConfig, RoundRecord};
use serde::Serialize;
use sha2::{Digest, Sha256};

/// Column order of every metrics CSV.
pub const METRICS_COLUMNS: [&str; 10] = [
    "round",
    "mean_train_loss",
    "loss_variance",
    "test_accuracy",
    "gamma",
    "gamma_weighted",
    "kappa_t",
    "fallback",
    "order_parameter",
    "wall_time_ms",
];

pub const SUMMARY_COLUMNS: [&str; 7] = [
    "method",
    "kappa0",
    "shards_per_client",
    "seed",
    "max_test_accuracy",
    "round",
    "status",
];

/// Shortest round-trip representation; empty for missing or NaN.
pub fn fmt_f64(x: Option<f64>) -> String {
    match x {
        Some(v) if !v.is_nan() => format!("{v}"),
        _ => String::new(),
    }
}

pub fn metrics_row(r: &RoundRecord, timing: bool) -> Vec<String> {
    let sync = r.sync.as_ref();
    vec![
        r.round.to_string(),
        fmt_f64(Some(r.mean_train_loss)),
        fmt_f64(Some(r.loss_variance)),
        fmt_f64(r.test_accuracy),
        fmt_f64(Some(r.gamma)),
        fmt_f64(Some(r.gamma_weighted)),
        fmt_f64(r.kappa_t),
        sync.map(|s| u8::from(s.fallback_used).to_string()).unwrap_or_default(),
        fmt_f64(sync.map(|s| s.order_parameter)),
        fmt_f64(timing.then_some(r.wall_time_ms)),
    ]
}

pub fn write_metrics(path: &Path, records: &[RoundRecord], timing: bool) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(METRICS_COLUMNS)?;
    for r in records {
        w.write_record(metrics_row(r, timing))?;
    }
    w.flush()?;
    Ok(())
}

/// Streams rows as rounds finish.
pub struct MetricsSink {
    writer: csv::Writer<fs::File>,
    timing: bool,
}

impl MetricsSink {
    pub fn create(path: &Path, timing: bool) -> Result<Self> {
        let mut writer = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
        writer.write_record(METRICS_COLUMNS)?;
        Ok(MetricsSink { writer, timing })
    }

    pub fn push(&mut self, r: &RoundRecord) -> Result<()> {
        self.writer.write_record(metrics_row(r, self.timing))?;
        self.writer.flush()?;
        Ok(())
    }
}

/// Best test accuracy and the first round attaining it.
pub fn max_accuracy(records: &[RoundRecord]) -> Option<(f64, usize)> {
    let mut best: Option<(f64, usize)> = None;
    for r in records {
        if let Some(a) = r.test_accuracy {
            if best.is_none_or(|(b, _)| a > b) {
                best = Some((a, r.round));
            }
        }
    }
    best
}

#[derive(Clone, Debug, PartialEq)]
pub struct SummaryRow {
    pub method: String,
    pub kappa0: Option<f64>,
    pub shards_per_client: usize,
    pub seed: u64,
    pub max_test_accuracy: Option<f64>,
    pub round: Option<usize>,
    pub status: String,
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))?;
    w.write_record(SUMMARY_COLUMNS)?;
    for r in rows {
        w.write_record([
            r.method.clone(),
            fmt_f64(r.kappa0),
            r.shards_per_client.to_string(),
            r.seed.to_string(),
            fmt_f64(r.max_test_accuracy),
            r.round.map(|x| x.to_string()).unwrap_or_default(),
            r.status.clone(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Clone, Debug, Serialize)]
pub struct InputHash {
    pub path: PathBuf,
    pub sha256: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct Manifest<'a> {
    pub tool: &'static str,
    pub version: &'static str,
    pub command: &'a str,
    pub seed: u64,
    pub config: &'a FederatedConfig,
    pub inputs: Vec<InputHash>,
    /// SHA-256 over the canonical config JSON followed by every input hash.
    pub content_hash: String,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Config files plus any dataset files the config points at.
pub fn hash_inputs(config_path: &Path, config: &FederatedConfig) -> Result<Vec<InputHash>> {
    let mut paths = vec![config_path.to_path_buf()];
    if let DatasetSpec::Idx {
        train_images,
        train_labels,
        test_images,
        test_labels,
        ..
    } = &config.dataset
    {
        paths.extend([train_images, train_labels, test_images, test_labels].map(|p| p.clone()));
    }
    paths
        .into_iter()
        .map(|path| {
            let bytes = fs::read(&path).with_context(|| format!("reading {}", path.display()))?;
            Ok(InputHash {
                sha256: sha256_hex(&bytes),
                path,
            })
        })
        .collect()
}

pub fn write_manifest(path: &Path, command: &str, config_path: &Path, config: &FederatedConfig) -> Result<()> {
    let inputs = hash_inputs(config_path, config)?;
    let mut hasher = Sha256::new();
    hasher.update(serde_json::to_vec(config)?);
    for i in &inputs {
        hasher.update(i.sha256.as_bytes());
    }
    let content_hash = hasher.finalize().iter().map(|b| format!("{b:02x}")).collect();
    let manifest = Manifest {
        tool: "kfl",
        version: env!("CARGO_PKG_VERSION"),
        command,
        seed: config.seed,
        config,
        inputs,
        content_hash,
    };
    let mut text = serde_json::to_string_pretty(&manifest)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))?;
    Ok(())
}
