//! The expansion protocol: train a base model to early stopping, expand it
//! with every plan, check function preservation, score the expanded model at
//! `t = 0` and keep training for `T` epochs while tracking the gain.

use rayon::prelude::*;

use crate::batch::Dataset;
use crate::error::{Error, Result};
use crate::expand::expand;
use crate::harness::config::{ExperimentConfig, PlanSpec};
use crate::harness::data::Splits;
use crate::harness::report::ExperimentRecord;
use crate::harness::train::{metric_batch, train_to_early_stop, TrainOutcome, TrainSettings, TrainState};
use crate::manifold::{BarrierSampleSet, ChainOptions, ManifoldMetric, MetricSeeds, MetricTerm};
use crate::models::{build, Model};
use crate::objective::BatchLoss;
use crate::params::ParameterVector;
use crate::proxies::{compute_proxies, sotl_e, ProxyKind};

/// A trained base model and everything the plans share.
#[derive(Clone, Debug)]
pub struct BaseRun {
    pub seed: u64,
    pub model: Model,
    pub outcome: TrainOutcome,
    pub metric_batch: Dataset,
    pub chain_seeds: MetricSeeds,
    /// `B*`: the base chain, reused by every candidate of this seed.
    pub samples: BarrierSampleSet,
}

impl BaseRun {
    pub fn params(&self) -> &ParameterVector<f32> {
        &self.outcome.best.params
    }

    pub fn acc(&self) -> f64 {
        self.outcome.best_acc
    }
}

fn chain_options(cfg: &ExperimentConfig) -> ChainOptions {
    ChainOptions { parallel: cfg.parallel }
}

/// Trains the base model for `seed` to early stopping.
pub fn train_base(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<(Model, TrainOutcome)> {
    let spec = cfg.model_spec()?;
    let (model, init) = build::<f32>(&spec, cfg.cell_seed(seed, None, "init"))?;
    let outcome = train_to_early_stop(
        &model,
        init,
        &splits.train,
        &splits.val,
        &TrainSettings::from(cfg),
        cfg.cell_seed(seed, None, "shuffle"),
    )?;
    Ok((model, outcome))
}

/// Base training plus the metric batch and the base barrier chain.
pub fn prepare_base(cfg: &ExperimentConfig, splits: &Splits, seed: u64) -> Result<BaseRun> {
    let (model, outcome) = train_base(cfg, splits, seed)?;
    prepare_base_from(cfg, splits, seed, model, outcome, cfg.n)
}

pub fn prepare_base_from(
    cfg: &ExperimentConfig,
    splits: &Splits,
    seed: u64,
    model: Model,
    outcome: TrainOutcome,
    chain_len: usize,
) -> Result<BaseRun> {
    let metric_batch = metric_batch(
        &splits.train,
        cfg.batch_size,
        outcome.best.shuffle_seed,
        cfg.metric_batch_index,
    )?;
    let chain_seeds = MetricSeeds::derived(cfg.cell_seed(seed, None, "manifold"));
    let objective = BatchLoss::new(&model, &metric_batch);
    let samples = MetricTerm::new(&model, &objective, &outcome.best.params, cfg.permutation_layer()).samples(
        chain_len,
        chain_seeds.base,
        chain_options(cfg),
    )?;
    Ok(BaseRun {
        seed,
        model,
        outcome,
        metric_batch,
        chain_seeds,
        samples,
    })
}

/// The candidate chain of `(model, params)` on the base's metric batch.
pub fn candidate_samples(
    cfg: &ExperimentConfig,
    base: &BaseRun,
    model: &Model,
    params: &ParameterVector<f32>,
    chain_len: usize,
) -> Result<BarrierSampleSet> {
    let objective = BatchLoss::new(model, &base.metric_batch);
    MetricTerm::new(model, &objective, params, cfg.permutation_layer()).samples(
        chain_len,
        base.chain_seeds.candidate,
        chain_options(cfg),
    )
}

/// `M` of a candidate against the base chain, with the configured `(q, n)`.
pub fn metric_against_base(
    cfg: &ExperimentConfig,
    base: &BaseRun,
    model: &Model,
    params: &ParameterVector<f32>,
) -> Result<ManifoldMetric> {
    let cand = candidate_samples(cfg, base, model, params, cfg.n)?;
    ManifoldMetric::from_samples(&base.samples, &cand, cfg.q, cfg.n)
}

/// Expanded model at `t = 0`, after the preservation gate.
pub struct Expanded {
    pub model: Model,
    pub params: ParameterVector<f32>,
    pub acc: f64,
}

/// Expands the base model and checks `|A(θ⁽⁰⁾) - A(φ*)| <= tolerance`.
pub fn expand_checked(cfg: &ExperimentConfig, splits: &Splits, base: &BaseRun, plan: &PlanSpec) -> Result<Expanded> {
    let id = plan.id();
    let resolved = plan.resolve(&base.model, cfg.cell_seed(base.seed, Some(&id), "expand"), cfg.split_noise)?;
    let (model, params) = expand(&base.model, base.params(), &resolved)?;
    let acc = model.accuracy(&params, &splits.val)?;
    let diff = (acc - base.acc()).abs();
    if diff > cfg.preservation_tolerance {
        let logits_before = base.model.forward(base.params(), splits.val.inputs())?;
        let logits_after = model.forward(&params, splits.val.inputs())?;
        return Err(Error::NotPreserved(format!(
            "seed {} plan {id} ({resolved}): accuracy {acc} vs base {} (tolerance {}), max logit difference {}",
            base.seed,
            base.acc(),
            cfg.preservation_tolerance,
            logits_before.max_abs_diff(&logits_after)?
        )));
    }
    Ok(Expanded { model, params, acc })
}

fn proxy_row(values: &[(ProxyKind, f64)]) -> [Option<f64>; 6] {
    let mut row = [None; 6];
    for &(kind, v) in values {
        let i = ProxyKind::ALL.iter().position(|&k| k == kind).unwrap();
        row[i] = Some(v);
    }
    row
}

/// Output of one `(seed, plan)` cell.
#[derive(Clone, Debug)]
pub struct PlanRun {
    /// Rows for epochs `0..=T`.
    pub rows: Vec<ExperimentRecord>,
    /// The candidate chain at `t = 0`.
    pub initial_samples: BarrierSampleSet,
    pub initial_metric: ManifoldMetric,
}

pub fn run_plan(cfg: &ExperimentConfig, splits: &Splits, base: &BaseRun, plan: &PlanSpec) -> Result<PlanRun> {
    let id = plan.id();
    let expanded = expand_checked(cfg, splits, base, plan)?;
    let zero_cost: Vec<ProxyKind> = cfg.proxies.iter().copied().filter(|&k| k != ProxyKind::SotlE).collect();
    let scores = compute_proxies(&expanded.model, &expanded.params, &base.metric_batch, &zero_cost, None)?;
    let initial_samples = candidate_samples(cfg, base, &expanded.model, &expanded.params, cfg.n)?;
    let m0 = ManifoldMetric::from_samples(&base.samples, &initial_samples, cfg.q, cfg.n)?;

    let gain0 = expanded.acc - base.acc();
    let mut rows = vec![ExperimentRecord {
        seed: base.seed,
        plan: id.clone(),
        epoch: 0,
        acc: expanded.acc,
        gain: gain0,
        best_gain: gain0,
        manifold_metric: Some(m0.value),
        proxies: proxy_row(&scores.iter().map(|s| (s.kind, s.value)).collect::<Vec<_>>()),
    }];

    let mut state = TrainState::new(
        expanded.model,
        expanded.params,
        cfg.optimizer,
        cfg.cell_seed(base.seed, Some(&id), "shuffle"),
    );
    let mut best_gain = gain0;
    for t in 1..=cfg.epochs {
        let (acc, losses) = {
            let s = state.run_epoch(&splits.train, &splits.val, cfg.batch_size)?;
            (s.val_acc, s.batch_losses.clone())
        };
        let gain = acc - base.acc();
        best_gain = best_gain.max(gain);
        let metric = if t % cfg.metric_stride == 0 || t == cfg.epochs {
            Some(metric_against_base(cfg, base, &state.model, &state.params)?.value)
        } else {
            None
        };
        let sotl = if cfg.proxies.contains(&ProxyKind::SotlE) {
            vec![(ProxyKind::SotlE, sotl_e(&losses)?)]
        } else {
            Vec::new()
        };
        rows.push(ExperimentRecord {
            seed: base.seed,
            plan: id.clone(),
            epoch: t,
            acc,
            gain,
            best_gain,
            manifold_metric: metric,
            proxies: proxy_row(&sotl),
        });
    }
    Ok(PlanRun {
        rows,
        initial_samples,
        initial_metric: m0,
    })
}

/// A plan that failed (for example the preservation gate) and was skipped.
#[derive(Clone, Debug, PartialEq)]
pub struct PlanFailure {
    pub seed: u64,
    pub plan: String,
    pub reason: String,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutcome {
    pub records: Vec<ExperimentRecord>,
    pub failures: Vec<PlanFailure>,
    pub bases: Vec<BaseRun>,
    /// `(seed, plan id, t = 0 metric and chain)` for every successful cell.
    pub initial: Vec<(u64, String, ManifoldMetric, BarrierSampleSet)>,
}

/// Runs every `(seed, plan)` cell. Rows come out ordered by seed, plan (in
/// config order) and epoch whether or not cells ran in parallel.
pub fn run_expansion_experiment(cfg: &ExperimentConfig, splits: &Splits) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let bases: Vec<BaseRun> = if cfg.parallel {
        cfg.seeds.par_iter().map(|&s| prepare_base(cfg, splits, s)).collect::<Result<_>>()?
    } else {
        cfg.seeds.iter().map(|&s| prepare_base(cfg, splits, s)).collect::<Result<_>>()?
    };
    let plans = cfg.plans();
    let cells: Vec<(usize, usize)> = (0..bases.len()).flat_map(|b| (0..plans.len()).map(move |p| (b, p))).collect();
    let run = |&(b, p): &(usize, usize)| run_plan(cfg, splits, &bases[b], &plans[p]);
    let results: Vec<Result<PlanRun>> = if cfg.parallel {
        cells.par_iter().map(run).collect()
    } else {
        cells.iter().map(run).collect()
    };
    let mut records = Vec::new();
    let mut failures = Vec::new();
    let mut initial = Vec::new();
    for (&(b, p), result) in cells.iter().zip(results) {
        match result {
            Ok(run) => {
                records.extend(run.rows);
                initial.push((bases[b].seed, plans[p].id(), run.initial_metric, run.initial_samples));
            }
            Err(e @ Error::NotPreserved(_)) => failures.push(PlanFailure {
                seed: bases[b].seed,
                plan: plans[p].id(),
                reason: e.to_string(),
            }),
            Err(e) => return Err(e),
        }
    }
    Ok(ExperimentOutcome {
        records,
        failures,
        bases,
        initial,
    })
}
