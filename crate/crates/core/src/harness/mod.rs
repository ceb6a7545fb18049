//! Experiment orchestration: data, training, the expansion protocol,
//! checkpoints and the files the command line writes.

pub mod checkpoint;
pub mod config;
pub mod data;
pub mod experiment;
pub mod report;
pub mod train;

use std::path::Path;

use serde::Serialize;

use crate::error::Result;
use crate::manifold::{sweep_from_samples, ManifoldEstimate, SweepCell};
use crate::ranking::Aggregate;

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use config::{DatasetSource, ExperimentConfig, PlanSpec, DEFAULT_CONFIG};
pub use data::{load_dataset, Splits};
pub use experiment::{prepare_base, run_expansion_experiment, BaseRun, ExperimentOutcome};
pub use report::{correlate, parse_records, records_to_csv, Column, CorrelationReport, ExperimentRecord, Pick, Target};
pub use train::{train_to_early_stop, EarlyStopper, TrainOutcome, TrainSettings, TrainState};

#[derive(Clone, Debug, Serialize)]
pub struct BaseSummary {
    pub seed: u64,
    pub accuracy: f64,
    pub best_epoch: usize,
    pub stopped_epoch: usize,
    pub lambda: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunSummary {
    /// Units: accuracies and gains are fractions, the manifold metric is in percent.
    pub units: &'static str,
    pub q: f64,
    pub n: usize,
    pub bases: Vec<BaseSummary>,
    pub failures: Vec<String>,
    pub correlations: Vec<CorrelationReport>,
}

impl RunSummary {
    pub fn kendall(&self, column: &str) -> Option<&Aggregate> {
        self.correlations.iter().find(|c| c.column == column).map(|c| &c.kendall)
    }
}

/// Correlation reports for the manifold metric and every proxy against `G*_T`.
pub fn correlation_reports(records: &[ExperimentRecord]) -> Vec<CorrelationReport> {
    Column::all_metrics()
        .into_iter()
        .map(|c| correlate(records, c, Pick::Earliest, Target::BestGain))
        .collect()
}

/// Writes the correlation table and the per-figure tables for `records`.
pub fn write_reports(records: &[ExperimentRecord], out_dir: &Path) -> Result<Vec<CorrelationReport>> {
    let reports = correlation_reports(records);
    report::write_file(out_dir.join("fig2_correlations.csv"), &report::correlation_table(&reports))?;
    let (traj, tau) = report::trajectory_tables(records);
    report::write_file(out_dir.join("fig3_trajectories.csv"), &traj)?;
    report::write_file(out_dir.join("fig3_tau_by_epoch.csv"), &tau)?;
    Ok(reports)
}

/// The full protocol. Writes `experiments.csv`, `edges.csv`, the figure
/// tables and `summary.json` into `out_dir`.
pub fn run_and_write(cfg: &ExperimentConfig, out_dir: &Path) -> Result<RunSummary> {
    let splits = load_dataset(&cfg.data)?;
    let outcome = run_expansion_experiment(cfg, &splits)?;
    report::write_file(out_dir.join("experiments.csv"), &records_to_csv(&outcome.records))?;

    let mut chains = Vec::new();
    for base in &outcome.bases {
        let lambda = base.samples.quantile(cfg.q)?;
        chains.push((
            format!("base@{}", base.seed),
            ManifoldEstimate::score(&base.samples, lambda, cfg.n)?.edge_log(),
        ));
        for (seed, plan, metric, samples) in outcome.initial.iter().filter(|(s, ..)| *s == base.seed) {
            chains.push((
                format!("{plan}@{seed}"),
                ManifoldEstimate::score(samples, metric.lambda, cfg.n)?.edge_log(),
            ));
        }
    }
    report::write_file(out_dir.join("edges.csv"), &report::edges_to_csv(&chains))?;

    let correlations = write_reports(&outcome.records, out_dir)?;
    let summary = RunSummary {
        units: "acc/gain: fraction; manifold_metric: percent",
        q: cfg.q,
        n: cfg.n,
        bases: outcome
            .bases
            .iter()
            .map(|b| {
                Ok(BaseSummary {
                    seed: b.seed,
                    accuracy: b.acc(),
                    best_epoch: b.outcome.best_epoch,
                    stopped_epoch: b.outcome.stopped_epoch,
                    lambda: b.samples.quantile(cfg.q)?,
                })
            })
            .collect::<Result<_>>()?,
        failures: outcome.failures.iter().map(|f| f.reason.clone()).collect(),
        correlations,
    };
    let json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    report::write_file(out_dir.join("summary.json"), &json)?;
    Ok(summary)
}

/// `(q, n)` grid of `M_0` for every seed and plan, from one chain of length
/// `max(sweep_n)` per model.
pub fn run_sweep(cfg: &ExperimentConfig, splits: &Splits) -> Result<Vec<(u64, Vec<SweepCell>)>> {
    let max_n = cfg.sweep_n.iter().copied().max().unwrap_or(cfg.n);
    let mut out = Vec::new();
    for &seed in &cfg.seeds {
        let (model, outcome) = experiment::train_base(cfg, splits, seed)?;
        let base = experiment::prepare_base_from(cfg, splits, seed, model, outcome, max_n)?;
        let mut candidates = Vec::new();
        for plan in cfg.plans() {
            let expanded = experiment::expand_checked(cfg, splits, &base, &plan)?;
            let samples = experiment::candidate_samples(cfg, &base, &expanded.model, &expanded.params, max_n)?;
            candidates.push((plan.id(), samples));
        }
        out.push((seed, sweep_from_samples(&base.samples, &candidates, &cfg.sweep_q, &cfg.sweep_n)?));
    }
    Ok(out)
}

/// Writes `sweep.csv` and, when gains are available, the sensitivity table
/// of mean Kendall tau between `M_0` and `G*_T` per `(q, n)`.
pub fn write_sweep(grid: &[(u64, Vec<SweepCell>)], gains: Option<&[ExperimentRecord]>, out_dir: &Path) -> Result<()> {
    let cells: Vec<SweepCell> = grid
        .iter()
        .flat_map(|(seed, cells)| {
            cells.iter().map(move |c| SweepCell {
                plan: format!("{}@{seed}", c.plan),
                ..c.clone()
            })
        })
        .collect();
    report::write_file(out_dir.join("sweep.csv"), &report::sweep_to_csv(&cells))?;
    if let Some(records) = gains {
        let mut table = String::from("q,n,kendall_mean,kendall_std,degenerate\n");
        let first = grid.first().map(|(_, c)| c.as_slice()).unwrap_or(&[]);
        let mut keys: Vec<(f64, usize)> = Vec::new();
        for c in first {
            if !keys.contains(&(c.q, c.n)) {
                keys.push((c.q, c.n));
            }
        }
        for (q, n) in keys {
            // Substitute the sweep's M_0 into the t = 0 rows and correlate.
            let mut rows: Vec<ExperimentRecord> = records.to_vec();
            for r in rows.iter_mut() {
                r.manifold_metric = None;
                if r.epoch == 0 {
                    r.manifold_metric = grid
                        .iter()
                        .find(|(s, _)| *s == r.seed)
                        .and_then(|(_, cells)| cells.iter().find(|c| c.q == q && c.n == n && c.plan == r.plan))
                        .map(|c| c.metric.value);
                }
            }
            let rep = correlate(&rows, Column::ManifoldMetric, Pick::Earliest, Target::BestGain);
            let mean = rep.kendall.mean.map(|v| v.to_string()).unwrap_or_default();
            let std = rep.kendall.std.map(|v| v.to_string()).unwrap_or_default();
            table.push_str(&format!("{q},{n},{mean},{std},{}\n", rep.kendall.degenerate));
        }
        report::write_file(out_dir.join("fig4_sensitivity.csv"), &table)?;
    }
    Ok(())
}
