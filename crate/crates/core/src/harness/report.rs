//! CSV rows, correlation reports and per-figure plot data.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::manifold::{EdgeRecord, SweepCell};
use crate::proxies::ProxyKind;
use crate::ranking::{aggregate, correlations, Aggregate, CorrelationSet, PairedSeries};

pub const EXPERIMENTS_HEADER: &str =
    "seed,plan,epoch,acc,gain,best_gain,manifold_metric,gradnorm,jacov,snip,grasp,synflow,sotl_e";
pub const EDGES_HEADER: &str = "plan,i,barrier,is_edge";
pub const SWEEP_HEADER: &str = "q,n,plan,M";

/// One row of `experiments.csv`. Accuracies are fractions in `[0, 1]`;
/// `manifold_metric` is in percent.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ExperimentRecord {
    pub seed: u64,
    pub plan: String,
    pub epoch: usize,
    pub acc: f64,
    pub gain: f64,
    pub best_gain: f64,
    pub manifold_metric: Option<f64>,
    /// Indexed like [`ProxyKind::ALL`].
    pub proxies: [Option<f64>; 6],
}

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl ExperimentRecord {
    pub fn proxy(&self, kind: ProxyKind) -> Option<f64> {
        self.proxies[ProxyKind::ALL.iter().position(|&k| k == kind).unwrap()]
    }

    pub fn to_csv_line(&self) -> String {
        let mut s = format!(
            "{},{},{},{},{},{},{}",
            self.seed,
            self.plan,
            self.epoch,
            self.acc,
            self.gain,
            self.best_gain,
            opt(self.manifold_metric)
        );
        for p in &self.proxies {
            s.push(',');
            s.push_str(&opt(*p));
        }
        s
    }

    pub fn value(&self, column: Column) -> Option<f64> {
        match column {
            Column::ManifoldMetric => self.manifold_metric,
            Column::Proxy(k) => self.proxy(k),
            Column::Gain => Some(self.gain),
        }
    }
}

pub fn records_to_csv(records: &[ExperimentRecord]) -> String {
    let mut out = String::from(EXPERIMENTS_HEADER);
    out.push('\n');
    for r in records {
        out.push_str(&r.to_csv_line());
        out.push('\n');
    }
    out
}

fn field<T: FromStr>(value: &str, line: usize, name: &str) -> Result<T> {
    value.parse().map_err(|_| Error::invalid(format!("line {line}: bad {name} value {value:?}")))
}

fn opt_field(value: &str, line: usize, name: &str) -> Result<Option<f64>> {
    if value.is_empty() {
        Ok(None)
    } else {
        field(value, line, name).map(Some)
    }
}

/// Parses `experiments.csv` text (header required).
pub fn parse_records(text: &str) -> Result<Vec<ExperimentRecord>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == EXPERIMENTS_HEADER => {}
        _ => return Err(Error::invalid(format!("missing header {EXPERIMENTS_HEADER:?}"))),
    }
    let names: Vec<&str> = EXPERIMENTS_HEADER.split(',').collect();
    lines
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let line = i + 1;
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() != names.len() {
                return Err(Error::invalid(format!(
                    "line {line}: {} columns, expected {}",
                    cols.len(),
                    names.len()
                )));
            }
            let mut proxies = [None; 6];
            for (k, p) in proxies.iter_mut().enumerate() {
                *p = opt_field(cols[7 + k], line, names[7 + k])?;
            }
            Ok(ExperimentRecord {
                seed: field(cols[0], line, "seed")?,
                plan: cols[1].to_string(),
                epoch: field(cols[2], line, "epoch")?,
                acc: field(cols[3], line, "acc")?,
                gain: field(cols[4], line, "gain")?,
                best_gain: field(cols[5], line, "best_gain")?,
                manifold_metric: opt_field(cols[6], line, "manifold_metric")?,
                proxies,
            })
        })
        .collect()
}

/// Groups rows by `(seed, plan)` keeping first-appearance plan order.
fn cells(records: &[ExperimentRecord]) -> BTreeMap<u64, Vec<(String, Vec<&ExperimentRecord>)>> {
    let mut out: BTreeMap<u64, Vec<(String, Vec<&ExperimentRecord>)>> = BTreeMap::new();
    for r in records {
        let plans = out.entry(r.seed).or_default();
        match plans.iter_mut().find(|(p, _)| *p == r.plan) {
            Some((_, rows)) => rows.push(r),
            None => plans.push((r.plan.clone(), vec![r])),
        }
    }
    for plans in out.values_mut() {
        for (_, rows) in plans.iter_mut() {
            rows.sort_by_key(|r| r.epoch);
        }
    }
    out
}

/// Checks row invariants: accuracy in range, `G*` equal to the running max
/// of `G`, and `|G_0| <= g0_tolerance`.
pub fn validate_records(records: &[ExperimentRecord], g0_tolerance: f64) -> Result<()> {
    for (seed, plans) in cells(records) {
        for (plan, rows) in plans {
            let mut best = f64::NEG_INFINITY;
            for r in rows {
                if !(0.0..=1.0).contains(&r.acc) {
                    return Err(Error::invalid(format!("seed {seed} plan {plan} epoch {}: acc {}", r.epoch, r.acc)));
                }
                if r.epoch == 0 && r.gain.abs() > g0_tolerance {
                    return Err(Error::invalid(format!("seed {seed} plan {plan}: G_0 = {}", r.gain)));
                }
                best = best.max(r.gain);
                if r.best_gain != best {
                    return Err(Error::invalid(format!(
                        "seed {seed} plan {plan} epoch {}: best_gain {} but running max {best}",
                        r.epoch, r.best_gain
                    )));
                }
                if let Some(m) = r.manifold_metric {
                    if !(-100.0..=100.0).contains(&m) {
                        return Err(Error::invalid(format!("manifold metric {m} outside [-100, 100]")));
                    }
                }
            }
        }
    }
    Ok(())
}

/// A scored column of `experiments.csv`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum Column {
    ManifoldMetric,
    Proxy(ProxyKind),
    Gain,
}

impl Column {
    pub fn name(self) -> &'static str {
        match self {
            Column::ManifoldMetric => "manifold_metric",
            Column::Proxy(k) => k.name(),
            Column::Gain => "gain",
        }
    }

    /// Sign that makes higher values mean better candidates.
    pub fn orientation(self) -> f64 {
        match self {
            Column::Proxy(k) => k.orientation(),
            _ => 1.0,
        }
    }

    /// The manifold metric followed by every proxy.
    pub fn all_metrics() -> Vec<Column> {
        std::iter::once(Column::ManifoldMetric)
            .chain(ProxyKind::ALL.into_iter().map(Column::Proxy))
            .collect()
    }
}

impl FromStr for Column {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "manifold_metric" | "M" | "m" => Ok(Column::ManifoldMetric),
            "gain" => Ok(Column::Gain),
            other => other.parse().map(Column::Proxy),
        }
    }
}

/// Which row supplies a candidate's metric value.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Pick {
    /// Earliest epoch where the column is present (t = 0 for zero-cost
    /// scores, t = 1 for SoTL-E).
    Earliest,
    Epoch(usize),
}

/// Correlation target.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Target {
    /// `G*_T`, the best gain over the horizon.
    BestGain,
    /// `G_T`, the gain at the last epoch.
    FinalGain,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeedCorrelation {
    pub seed: u64,
    pub candidates: usize,
    pub coefficients: Option<CorrelationSet>,
}

#[derive(Clone, Debug, Serialize)]
pub struct CorrelationReport {
    pub column: &'static str,
    pub per_seed: Vec<SeedCorrelation>,
    pub kendall: Aggregate,
    pub spearman: Aggregate,
    pub pearson: Aggregate,
    /// All `(seed, plan)` pairs treated as one series.
    pub pooled: Option<CorrelationSet>,
}

fn series_for(rows: &[(String, Vec<&ExperimentRecord>)], column: Column, pick: Pick, target: Target) -> (Vec<String>, Vec<f64>, Vec<f64>) {
    let mut ids = Vec::new();
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (plan, cell) in rows {
        let x = match pick {
            Pick::Earliest => cell.iter().find_map(|r| r.value(column)),
            Pick::Epoch(t) => cell.iter().find(|r| r.epoch == t).and_then(|r| r.value(column)),
        };
        let last = cell.last().unwrap();
        let y = match target {
            Target::BestGain => last.best_gain,
            Target::FinalGain => last.gain,
        };
        if let Some(x) = x {
            ids.push(plan.clone());
            xs.push(column.orientation() * x);
            ys.push(y);
        }
    }
    (ids, xs, ys)
}

/// Correlates `column` with the gain target across plans, per seed, then
/// aggregates across seeds (degenerate seeds are counted, not averaged).
pub fn correlate(records: &[ExperimentRecord], column: Column, pick: Pick, target: Target) -> CorrelationReport {
    let mut per_seed = Vec::new();
    let (mut pooled_ids, mut pooled_x, mut pooled_y) = (Vec::new(), Vec::new(), Vec::new());
    for (seed, rows) in cells(records) {
        let (ids, xs, ys) = series_for(&rows, column, pick, target);
        pooled_ids.extend(ids.iter().map(|p| format!("{seed}/{p}")));
        pooled_x.extend_from_slice(&xs);
        pooled_y.extend_from_slice(&ys);
        let candidates = xs.len();
        let coefficients = PairedSeries::new(ids, xs, ys).ok().map(|s| correlations(&s));
        per_seed.push(SeedCorrelation {
            seed,
            candidates,
            coefficients,
        });
    }
    let collect = |f: fn(&CorrelationSet) -> crate::ranking::Correlation| {
        let vals: Vec<_> = per_seed
            .iter()
            .map(|s| s.coefficients.as_ref().map_or(crate::ranking::Correlation::Degenerate, f))
            .collect();
        aggregate(&vals)
    };
    CorrelationReport {
        column: column.name(),
        kendall: collect(|c| c.kendall),
        spearman: collect(|c| c.spearman),
        pearson: collect(|c| c.pearson),
        pooled: PairedSeries::new(pooled_ids, pooled_x, pooled_y).ok().map(|s| correlations(&s)),
        per_seed,
    }
}

fn coef(c: Option<crate::ranking::Correlation>) -> String {
    match c {
        Some(crate::ranking::Correlation::Value(v)) => v.to_string(),
        Some(crate::ranking::Correlation::Degenerate) => "degenerate".into(),
        None => "n/a".into(),
    }
}

fn agg_cell(a: &Aggregate) -> (String, String) {
    (opt(a.mean), opt(a.std))
}

/// Correlation table: one row per metric and aggregation.
pub fn correlation_table(reports: &[CorrelationReport]) -> String {
    let mut out = String::from("metric,aggregation,kendall,spearman,pearson\n");
    for r in reports {
        for s in &r.per_seed {
            let c = s.coefficients.as_ref();
            let _ = writeln!(
                out,
                "{},seed{},{},{},{}",
                r.column,
                s.seed,
                coef(c.map(|c| c.kendall)),
                coef(c.map(|c| c.spearman)),
                coef(c.map(|c| c.pearson))
            );
        }
        let (km, ks) = agg_cell(&r.kendall);
        let (sm, ss) = agg_cell(&r.spearman);
        let (pm, ps) = agg_cell(&r.pearson);
        let _ = writeln!(out, "{},mean,{km},{sm},{pm}", r.column);
        let _ = writeln!(out, "{},std,{ks},{ss},{ps}", r.column);
        let _ = writeln!(
            out,
            "{},degenerate,{},{},{}",
            r.column, r.kendall.degenerate, r.spearman.degenerate, r.pearson.degenerate
        );
        let p = r.pooled.as_ref();
        let _ = writeln!(
            out,
            "{},pooled,{},{},{}",
            r.column,
            coef(p.map(|c| c.kendall)),
            coef(p.map(|c| c.spearman)),
            coef(p.map(|c| c.pearson))
        );
    }
    out
}

/// Trajectory data: gain and metric per epoch, plus the mean Kendall tau
/// between each epoch's value and `G*_T` for the manifold metric and SoTL-E.
pub fn trajectory_tables(records: &[ExperimentRecord]) -> (String, String) {
    let mut traj = String::from("seed,plan,epoch,gain,best_gain,manifold_metric\n");
    for r in records {
        let _ = writeln!(
            traj,
            "{},{},{},{},{},{}",
            r.seed,
            r.plan,
            r.epoch,
            r.gain,
            r.best_gain,
            opt(r.manifold_metric)
        );
    }
    let epochs: BTreeSet<usize> = records.iter().map(|r| r.epoch).collect();
    let mut tau = String::from("epoch,metric,kendall_mean,kendall_std,degenerate\n");
    for &t in &epochs {
        for column in [Column::ManifoldMetric, Column::Proxy(ProxyKind::SotlE)] {
            if !records.iter().any(|r| r.epoch == t && r.value(column).is_some()) {
                continue;
            }
            let rep = correlate(records, column, Pick::Epoch(t), Target::BestGain);
            let (m, s) = agg_cell(&rep.kendall);
            let _ = writeln!(tau, "{t},{},{m},{s},{}", column.name(), rep.kendall.degenerate);
        }
    }
    (traj, tau)
}

pub fn edges_to_csv(chains: &[(String, Vec<EdgeRecord>)]) -> String {
    let mut out = String::from(EDGES_HEADER);
    out.push('\n');
    for (plan, edges) in chains {
        for e in edges {
            let _ = writeln!(out, "{plan},{},{},{}", e.index, e.barrier, u8::from(e.is_edge));
        }
    }
    out
}

pub fn sweep_to_csv(cells: &[SweepCell]) -> String {
    let mut out = String::from(SWEEP_HEADER);
    out.push('\n');
    for c in cells {
        let _ = writeln!(out, "{},{},{},{}", c.q, c.n, c.plan, c.metric.value);
    }
    out
}

pub fn write_file(path: impl AsRef<Path>, contents: &str) -> Result<()> {
    let path = path.as_ref();
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(seed: u64, plan: &str, epoch: usize, gain: f64, best: f64, m: Option<f64>) -> ExperimentRecord {
        ExperimentRecord {
            seed,
            plan: plan.into(),
            epoch,
            acc: 0.5 + gain,
            gain,
            best_gain: best,
            manifold_metric: m,
            proxies: [None, None, None, None, None, Some(1.5)],
        }
    }

    #[test]
    fn csv_roundtrip() {
        let rows = vec![row(0, "a", 0, 0.0, 0.0, Some(12.5)), row(0, "a", 1, 0.1, 0.1, None)];
        let text = records_to_csv(&rows);
        assert_eq!(parse_records(&text).unwrap(), rows);
        assert!(parse_records("seed,plan\n").is_err());
    }

    #[test]
    fn running_max_is_checked() {
        let good = vec![row(0, "a", 0, 0.0, 0.0, None), row(0, "a", 1, -0.1, 0.0, None)];
        validate_records(&good, 0.0).unwrap();
        let bad = vec![row(0, "a", 0, 0.0, 0.0, None), row(0, "a", 1, 0.2, 0.1, None)];
        assert!(validate_records(&bad, 0.0).is_err());
    }

    #[test]
    fn gain_column_correlates_perfectly_with_itself() {
        let mut rows = Vec::new();
        for seed in 0..2 {
            for (i, plan) in ["a", "b", "c"].iter().enumerate() {
                let g = i as f64 * 0.1;
                rows.push(row(seed, plan, 0, 0.0, 0.0, Some(g)));
                rows.push(row(seed, plan, 1, g, g, None));
            }
        }
        let r = correlate(&rows, Column::ManifoldMetric, Pick::Earliest, Target::BestGain);
        assert_eq!(r.kendall.mean, Some(1.0));
        assert_eq!(r.kendall.count, 2);
        let c = correlate(&rows, Column::Proxy(ProxyKind::SotlE), Pick::Earliest, Target::BestGain);
        assert_eq!(c.kendall.degenerate, 2);
    }
}
