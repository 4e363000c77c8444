//! The four subcommands. Each prints a human-readable report to `log` and
//! writes machine-readable files under the output directory.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use kfl_core::aggregation::KuramotoMode;
use kfl_core::data::{label_shard_partition, partition_stats, PartitionStats};
use kfl_core::engine::{
    load_dataset, run_experiment_with, run_federation, AggregatorConfig, Client, FederatedConfig, Federation,
    LrSchedule, RoundRecord, TrainingConfig,
};
use kfl_core::exec::Execution;
use kfl_core::numeric::ParamVector;
use kfl_core::objectives::{NoiseModel, QuadraticObjective};
use kfl_core::theory::{
    descent_checks, drift_comparison, random_point, variance_decomposition_check, DescentReport, DriftReport, TheoryInstance,
};

use crate::config::{sweep_cells, ExperimentFile, KappaLabel, KappaValue, TheorySection};
use crate::output::{fmt_f64, max_accuracy, write_manifest, write_summary, MetricsSink, SummaryRow};

/// Options shared by every subcommand.
#[derive(Clone, Debug, Default)]
pub struct CommonArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub seed: Option<u64>,
    pub timing: bool,
}

/// Process exit status: 0 on success, 1 when a run or an assertable check
/// failed.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    Failed,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Ok => 0,
            Status::Failed => 1,
        }
    }
}

/// Runs `f` inside a rayon pool of `threads` workers, or the global pool.
pub fn with_threads<T, F>(threads: Option<usize>, f: F) -> Result<T>
where
    T: Send,
    F: FnOnce() -> T + Send,
{
    match threads {
        None => Ok(f()),
        Some(0) => bail!("--threads must be >= 1"),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new().num_threads(n).build()?;
            Ok(pool.install(f))
        }
    }
}

fn load(args: &CommonArgs) -> Result<ExperimentFile> {
    ExperimentFile::load(&args.config)
}

fn federation_config(file: &ExperimentFile, args: &CommonArgs) -> Result<FederatedConfig> {
    let mut cfg = file.federation()?.clone();
    if let Some(seed) = args.seed {
        cfg.seed = seed;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Runs one experiment, streaming `metrics.csv` and writing
/// `manifest.json` into `dir`.
pub fn run_into(
    cfg: &FederatedConfig,
    dir: &Path,
    config_path: &Path,
    command: &str,
    timing: bool,
    log: &mut dyn Write,
) -> Result<Vec<RoundRecord>> {
    cfg.validate()?;
    create_dir(dir)?;
    write_manifest(&dir.join("manifest.json"), command, config_path, cfg)?;
    let mut sink = MetricsSink::create(&dir.join("metrics.csv"), timing)?;
    let mut sink_error = None;
    let rounds = cfg.rounds;
    let records = run_experiment_with(cfg, Execution::Parallel, |r| {
        if sink_error.is_none() {
            sink_error = sink.push(r).err();
        }
        let _ = writeln!(
            log,
            "round {}/{rounds}  loss {:.4}  var {:.4}  acc {}",
            r.round,
            r.mean_train_loss,
            r.loss_variance,
            r.test_accuracy.map_or("-".into(), |a| format!("{:.4}", a))
        );
    })?;
    if let Some(e) = sink_error {
        return Err(e);
    }
    Ok(records)
}

pub fn cmd_run(args: &CommonArgs, log: &mut dyn Write) -> Result<Status> {
    let file = load(args)?;
    let cfg = federation_config(&file, args)?;
    let dir = file.output_dir(args.out.as_deref(), &args.config);
    let timing = args.timing || file.output.timing;
    writeln!(log, "{} run: {} clients, {} rounds -> {}", cfg.aggregator.name(), cfg.num_clients, cfg.rounds, dir.display())?;
    run_into(&cfg, &dir, &args.config, "run", timing, log)?;
    Ok(Status::Ok)
}

pub fn cmd_sweep(args: &CommonArgs, log: &mut dyn Write) -> Result<Status> {
    let file = load(args)?;
    let base = federation_config(&file, args)?;
    let sweep = file.sweep.as_ref().context("config has no [sweep] section")?;
    let cells = sweep_cells(&base, sweep)?;
    let dir = file.output_dir(args.out.as_deref(), &args.config);
    create_dir(&dir)?;
    let timing = args.timing || file.output.timing;

    let mut rows = Vec::with_capacity(cells.len());
    let mut status = Status::Ok;
    for cell in &cells {
        writeln!(log, "cell {}", cell.label)?;
        let cell_dir = dir.join("cells").join(&cell.label);
        let result = run_into(&cell.config, &cell_dir, &args.config, "sweep", timing, &mut std::io::sink());
        let method = match cell.kappa {
            Some(KappaValue::Label(KappaLabel::NoSync)) => "no-sync".to_string(),
            _ => cell.config.aggregator.name().to_string(),
        };
        let kappa0 = match cell.config.aggregator {
            AggregatorConfig::Kuramoto { kappa0, .. } => Some(kappa0),
            _ => None,
        };
        let (max_test_accuracy, round, cell_status) = match result {
            Ok(records) => {
                let best = max_accuracy(&records);
                (best.map(|b| b.0), best.map(|b| b.1), "ok".to_string())
            }
            Err(e) => {
                status = Status::Failed;
                writeln!(log, "  failed: {e:#}")?;
                (None, None, format!("error: {e:#}"))
            }
        };
        rows.push(SummaryRow {
            method,
            kappa0,
            shards_per_client: cell.config.shards_per_client,
            seed: cell.config.seed,
            max_test_accuracy,
            round,
            status: cell_status,
        });
    }
    write_summary(&dir.join("summary.csv"), &rows)?;
    writeln!(log, "\n{:<10} {:>8} {:>4} {:>6} {:>10} {:>6}", "method", "kappa0", "s", "seed", "max acc %", "round")?;
    for r in &rows {
        writeln!(
            log,
            "{:<10} {:>8} {:>4} {:>6} {:>10} {:>6}",
            r.method,
            fmt_f64(r.kappa0),
            r.shards_per_client,
            r.seed,
            r.max_test_accuracy.map_or("-".into(), |a| format!("{:.2}", 100.0 * a)),
            r.round.map_or("-".into(), |x| x.to_string()),
        )?;
    }
    Ok(status)
}

pub fn cmd_partition_stats(args: &CommonArgs, log: &mut dyn Write) -> Result<Status> {
    let file = load(args)?;
    let cfg = federation_config(&file, args)?;
    let stats = compute_partition_stats(&cfg)?;
    writeln!(log, "client  samples  distinct  histogram")?;
    for (k, h) in stats.histograms.iter().enumerate() {
        let counts: Vec<String> = h.iter().map(|c| c.to_string()).collect();
        writeln!(
            log,
            "{k:>6}  {:>7}  {:>8}  {}",
            h.iter().sum::<usize>(),
            stats.distinct_labels[k],
            counts.join(" ")
        )?;
    }
    writeln!(log, "mean distinct labels per client: {}", stats.mean_distinct_labels)?;
    if let Some(out) = &args.out {
        create_dir(out)?;
        let path = out.join("partition_stats.csv");
        let mut w = csv::Writer::from_path(&path)?;
        let classes = stats.histograms.first().map_or(0, |h| h.len());
        let mut header = vec!["client".to_string(), "samples".into(), "distinct_labels".into()];
        header.extend((0..classes).map(|c| format!("label_{c}")));
        w.write_record(&header)?;
        for (k, h) in stats.histograms.iter().enumerate() {
            let mut row = vec![k.to_string(), h.iter().sum::<usize>().to_string(), stats.distinct_labels[k].to_string()];
            row.extend(h.iter().map(|c| c.to_string()));
            w.write_record(&row)?;
        }
        w.flush()?;
    }
    Ok(Status::Ok)
}

pub fn compute_partition_stats(cfg: &FederatedConfig) -> Result<PartitionStats> {
    let (train, _) = load_dataset(cfg)?;
    let partition = label_shard_partition(&train, cfg.num_clients, cfg.shards_per_client, cfg.seed)?;
    partition.validate(train.len())?;
    Ok(partition_stats(&partition, &train))
}

/// One row of the theory report.
#[derive(Clone, Debug, PartialEq)]
pub struct TheoryRow {
    pub check: String,
    pub instance: String,
    pub estimate: f64,
    pub standard_error: f64,
    pub bound: f64,
    pub holds: bool,
    pub assertable: bool,
}

#[derive(Clone, Debug)]
pub struct TheoryOutcome {
    pub rows: Vec<TheoryRow>,
    pub drift: DriftReport,
}

impl TheoryOutcome {
    pub fn assertable_failures(&self) -> usize {
        self.rows.iter().filter(|r| r.assertable && !r.holds).count() + usize::from(!self.drift.is_consistent())
    }
}

fn descent_rows(rows: &mut Vec<TheoryRow>, instance: &str, reports: &[DescentReport; 2]) {
    for r in reports {
        rows.push(TheoryRow {
            check: format!("descent-{}", match r.form {
                kfl_core::theory::BoundForm::Complete => "complete",
                kfl_core::theory::BoundForm::DriftOnly => "drift-only",
            }),
            instance: instance.to_string(),
            estimate: r.expected_next,
            standard_error: r.expected_next_se,
            bound: r.bound,
            holds: r.holds,
            assertable: r.assertable(),
        });
    }
}

fn scaled(inst: TheoryInstance, scale: f64) -> Result<TheoryInstance> {
    if scale == 1.0 {
        return Ok(inst);
    }
    let l = inst.smoothness()?;
    Ok(inst.with_smoothness(l * scale))
}

/// Every theory check described by `section`.
pub fn run_theory(section: &TheorySection, exec: Execution) -> Result<TheoryOutcome> {
    section.validate()?;
    let mut rows = Vec::new();

    // Single-client noiseless ½w² with η = 0.1: the complete bound is tight.
    let unit = QuadraticObjective::isotropic(1.0, ParamVector::zeros(1))?;
    let eq = scaled(
        TheoryInstance::new(vec![unit], vec![1.0], vec![0.0], 0.1, section.num_mc, section.seed)?,
        section.smoothness_scale,
    )?;
    let eq_reports = descent_checks(&eq, &[1.0], exec)?;
    rows.push(TheoryRow {
        check: "equality-case".into(),
        instance: "single-client".into(),
        estimate: eq_reports[0].expected_next,
        standard_error: 0.0,
        bound: eq_reports[0].bound,
        holds: eq_reports[0].equality,
        assertable: true,
    });
    descent_rows(&mut rows, "single-client", &eq_reports);

    for i in 0..section.instances {
        let seed = section.seed.wrapping_add(i as u64);
        let noisy = TheoryInstance::random(section.clients, section.dim, section.noisy, section.num_mc, seed)?;
        let mut noiseless = noisy.clone();
        noiseless.sigma = vec![0.0; section.clients];
        let w = random_point(section.dim, 2.0, seed, i as u64);
        let noisy = scaled(noisy, section.smoothness_scale)?;
        let noiseless = scaled(noiseless, section.smoothness_scale)?;

        let v = variance_decomposition_check(&noisy, &w, exec)?;
        let name = format!("random-{i}");
        rows.push(TheoryRow {
            check: "variance-decomposition".into(),
            instance: name.clone(),
            estimate: v.second_moment,
            standard_error: v.second_moment_se,
            bound: v.grad_norm_sq + v.sigma_sq,
            holds: v.decomposition_holds && v.cross_term_vanishes && v.bound_holds,
            assertable: true,
        });
        rows.push(TheoryRow {
            check: "gamma-nonnegative".into(),
            instance: name.clone(),
            estimate: v.gamma,
            standard_error: 0.0,
            bound: 0.0,
            holds: v.gamma_nonnegative,
            assertable: true,
        });
        descent_rows(&mut rows, &name, &descent_checks(&noisy, &w, exec)?);
        descent_rows(&mut rows, &format!("{name}-noiseless"), &descent_checks(&noiseless, &w, exec)?);
    }

    let drift = drift_pair(section, exec)?;
    Ok(TheoryOutcome { rows, drift })
}

/// Paired FedAvg / Kuramoto runs on a heterogeneous quadratic federation.
pub fn drift_pair(section: &TheorySection, exec: Execution) -> Result<DriftReport> {
    let d = &section.drift;
    let inst = TheoryInstance::random(d.clients, d.dim, false, 1, section.seed ^ 0x5eed)?;
    let mut l_max: f64 = 0.0;
    for o in &inst.objectives {
        l_max = l_max.max(o.smoothness_constant()?);
    }
    let clients = inst
        .objectives
        .iter()
        .enumerate()
        .map(|(k, o)| Client::quadratic(k, o.clone(), NoiseModel::none()))
        .collect();
    let federation = Federation::new(clients, None)?;
    let base = TrainingConfig {
        rounds: d.rounds,
        local_epochs: d.local_epochs,
        batch_size: 1,
        lr: d.step_fraction / l_max,
        momentum: 0.0,
        lr_schedule: LrSchedule::Constant,
        aggregator: AggregatorConfig::Fedavg,
        seed: section.seed,
        gradient_diversity: true,
    };
    let w0 = ParamVector::zeros(d.dim);
    let (_, fedavg) = run_federation(&federation, &base, w0.clone(), exec, |_| {})?;
    let ku_cfg = TrainingConfig {
        aggregator: AggregatorConfig::kuramoto(KuramotoMode::stabilized(), d.kappa0, 0.0),
        ..base
    };
    let (_, kuramoto) = run_federation(&federation, &ku_cfg, w0.clone(), exec, |_| {})?;
    let target = match d.target_loss {
        Some(t) => t,
        None => {
            let start: f64 = federation
                .clients
                .iter()
                .zip(federation.weights())
                .map(|(c, p)| c.full_loss(&w0).map(|l| p * l))
                .sum::<kfl_core::Result<f64>>()?;
            let end = fedavg.last().map_or(start, |r| r.mean_train_loss);
            end + 0.01 * (start - end)
        }
    };
    Ok(drift_comparison(&fedavg, &kuramoto, target)?)
}

pub fn cmd_check_theory(args: &CommonArgs, log: &mut dyn Write) -> Result<Status> {
    let file = load(args)?;
    let mut section = file.theory()?.clone();
    if let Some(seed) = args.seed {
        section.seed = seed;
    }
    section.validate()?;
    let outcome = run_theory(&section, Execution::Parallel)?;

    for r in &outcome.rows {
        writeln!(
            log,
            "{:<5} {:<24} {:<18} estimate {:.12e} (se {:.2e})  bound {:.12e}{}",
            if r.holds { "ok" } else { "FAIL" },
            r.check,
            r.instance,
            r.estimate,
            r.standard_error,
            r.bound,
            if r.assertable { "" } else { "  [informational]" }
        )?;
    }
    let drift = &outcome.drift;
    writeln!(
        log,
        "drift comparison: {} rounds, {} without fallback, Γ_ρ < Γ in {} of them; rounds to loss {:.6}: fedavg {}, kuramoto {}; consistent: {}",
        drift.rows.len(),
        drift.non_fallback_rounds,
        drift.kuramoto_lower_fraction.map_or("n/a".into(), |f| format!("{:.1}%", 100.0 * f)),
        drift.target_loss,
        drift.rounds_to_target_fedavg.map_or("never".into(), |r| r.to_string()),
        drift.rounds_to_target_kuramoto.map_or("never".into(), |r| r.to_string()),
        drift.is_consistent()
    )?;

    if let Some(out) = &args.out.clone().or_else(|| file.output.dir.clone()) {
        create_dir(out)?;
        let mut w = csv::Writer::from_path(out.join("theory.csv"))?;
        w.write_record(["check", "instance", "estimate", "standard_error", "bound", "holds", "assertable"])?;
        for r in &outcome.rows {
            w.write_record([
                r.check.clone(),
                r.instance.clone(),
                fmt_f64(Some(r.estimate)),
                fmt_f64(Some(r.standard_error)),
                fmt_f64(Some(r.bound)),
                r.holds.to_string(),
                r.assertable.to_string(),
            ])?;
        }
        w.flush()?;
        let mut d = csv::Writer::from_path(out.join("drift.csv"))?;
        d.write_record(["round", "gamma", "gamma_kuramoto", "fallback"])?;
        for r in &drift.rows {
            d.write_record([
                r.round.to_string(),
                fmt_f64(Some(r.gamma)),
                fmt_f64(Some(r.gamma_kuramoto)),
                u8::from(r.fallback).to_string(),
            ])?;
        }
        d.flush()?;
    }

    let failures = outcome.assertable_failures();
    writeln!(log, "{} assertable check(s) failed", failures)?;
    Ok(if failures == 0 { Status::Ok } else { Status::Failed })
}
