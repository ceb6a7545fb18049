//! Loss barriers and the chain estimator of minima-manifold size.
//!
//! Starting from a trained point θ, the chain draws `n` distinct
//! function-preserving permutations π₁..πₙ of one layer and forms the nodes
//! θ₁ = θ, θᵢ₊₁ = P(θ, πᵢ). Only consecutive nodes are compared, so the node
//! graph has degree at most two and the edge count is bounded by `n`. Edge
//! `i` exists when the absolute midpoint barrier between θᵢ and θᵢ₊₁ is at
//! most λ; the manifold ratio is `edges / n`.
//!
//! The expansion metric fixes λ as the nearest-rank q-quantile of the base
//! model's barrier sample and reports `100 * (m(candidate) - m(base))`.
//!
//! Node losses are cached, so a chain of length `n` costs exactly `2n + 1`
//! loss evaluations. Evaluation can run on the rayon pool; results are
//! written by index and are bit-identical to the serial path.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::Model;
use crate::objective::Objective;
use crate::params::{lerp, ParameterVector};
use crate::permute::{apply, Permutation, PermutationSampler};
use crate::rng;
use crate::tensor::Real;

/// Which of the three barrier evaluation points produced a bad loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BarrierPoint {
    First,
    Second,
    Midpoint,
}

fn checked<T: Real>(value: Result<T>, point: BarrierPoint, index: Option<usize>) -> Result<T> {
    let v = value?;
    if v.is_finite() {
        Ok(v)
    } else {
        let at = index.map(|i| format!(" (chain position {i})")).unwrap_or_default();
        Err(Error::NonFinite(format!("loss at {point:?} barrier point{at}")))
    }
}

fn barrier_from_losses<T: Real>(first: T, second: T, mid: T) -> T {
    mid - (first + second) * T::lit(0.5)
}

/// `L((θ₁ + θ₂)/2) - (L(θ₁) + L(θ₂))/2`. May be negative.
pub fn barrier_midpoint<T: Real, O: Objective<T> + ?Sized>(
    objective: &O,
    first: &ParameterVector<T>,
    second: &ParameterVector<T>,
) -> Result<T> {
    let mid = lerp(first, second, T::lit(0.5))?;
    let l1 = checked(objective.loss(first), BarrierPoint::First, None)?;
    let l2 = checked(objective.loss(second), BarrierPoint::Second, None)?;
    let lm = checked(objective.loss(&mid), BarrierPoint::Midpoint, None)?;
    Ok(barrier_from_losses(l1, l2, lm))
}

/// Deviation `L(αθ₁ + (1-α)θ₂) - [αL(θ₁) + (1-α)L(θ₂)]` at every grid point.
/// The maximum over a dense grid approximates the supremum barrier.
pub fn barrier_curve<T: Real, O: Objective<T> + ?Sized>(
    objective: &O,
    first: &ParameterVector<T>,
    second: &ParameterVector<T>,
    grid: &[f64],
) -> Result<Vec<(f64, T)>> {
    if grid.is_empty() {
        return Err(Error::invalid("barrier curve needs a non-empty grid"));
    }
    if let Some(a) = grid.iter().find(|a| !(0.0..=1.0).contains(*a)) {
        return Err(Error::invalid(format!("grid point {a} outside [0, 1]")));
    }
    first.check_layout(second)?;
    let l1 = checked(objective.loss(first), BarrierPoint::First, None)?;
    let l2 = checked(objective.loss(second), BarrierPoint::Second, None)?;
    grid.iter()
        .map(|&a| {
            let alpha = T::lit(a);
            let point = lerp(first, second, alpha)?;
            let l = checked(objective.loss(&point), BarrierPoint::Midpoint, None)?;
            Ok((a, l - (alpha * l1 + (T::one() - alpha) * l2)))
        })
        .collect()
}

/// Evenly spaced grid over `[0, 1]` with `points` entries.
pub fn uniform_grid(points: usize) -> Vec<f64> {
    match points {
        0 => Vec::new(),
        1 => vec![0.5],
        _ => (0..points).map(|i| i as f64 / (points - 1) as f64).collect(),
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleSource {
    pub params_fingerprint: u64,
    pub layer: usize,
    pub seed: u64,
    pub batch_fingerprint: u64,
}

/// Absolute midpoint barriers of one chain, in generation order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BarrierSampleSet {
    barriers: Vec<f64>,
    signed: Vec<f64>,
    node_losses: Vec<f64>,
    permutations: Vec<Permutation>,
    pub source: SampleSource,
}

impl BarrierSampleSet {
    /// Wraps externally computed barriers (absolute values are taken).
    pub fn from_barriers(signed: Vec<f64>, source: SampleSource) -> Result<Self> {
        if signed.is_empty() {
            return Err(Error::invalid("barrier sample set cannot be empty"));
        }
        if signed.iter().any(|b| !b.is_finite()) {
            return Err(Error::NonFinite("barrier sample".into()));
        }
        Ok(Self {
            barriers: signed.iter().map(|b| b.abs()).collect(),
            signed,
            node_losses: Vec::new(),
            permutations: Vec::new(),
            source,
        })
    }

    pub fn barriers(&self) -> &[f64] {
        &self.barriers
    }

    /// Barriers before taking the absolute value.
    pub fn signed(&self) -> &[f64] {
        &self.signed
    }

    /// `L(θ₁)..L(θₙ₊₁)`; empty for sets built from raw barriers.
    pub fn node_losses(&self) -> &[f64] {
        &self.node_losses
    }

    pub fn permutations(&self) -> &[Permutation] {
        &self.permutations
    }

    pub fn len(&self) -> usize {
        self.barriers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.barriers.is_empty()
    }

    /// First `n` samples, as generated by a chain of length `n` with the same seed.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!("prefix {n} outside [1, {}]", self.len())));
        }
        Ok(Self {
            barriers: self.barriers[..n].to_vec(),
            signed: self.signed[..n].to_vec(),
            node_losses: self.node_losses.get(..n + 1).map(<[f64]>::to_vec).unwrap_or_default(),
            permutations: self.permutations.get(..n).map(<[Permutation]>::to_vec).unwrap_or_default(),
            source: self.source,
        })
    }

    pub fn quantile(&self, q: f64) -> Result<f64> {
        quantile(&self.barriers, q)
    }

    /// Number of the first `n` barriers that are `<= lambda`.
    pub fn edges_within(&self, lambda: f64, n: usize) -> Result<usize> {
        if n == 0 || n > self.len() {
            return Err(Error::invalid(format!("edge count over {n} of {} samples", self.len())));
        }
        Ok(self.barriers[..n].iter().filter(|&&b| b <= lambda).count())
    }
}

/// Nearest-rank quantile: the `ceil(q n)`-th smallest value, `q ∈ (0, 1)`.
pub fn quantile(values: &[f64], q: f64) -> Result<f64> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level {q} outside (0, 1)")));
    }
    if values.is_empty() {
        return Err(Error::invalid("quantile of an empty sample"));
    }
    let n = values.len();
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    Ok(sorted[nearest_rank(q, n) - 1])
}

/// 1-based rank `ceil(q n)` clamped to `[1, n]`, robust to `q n` landing a
/// few ulps above an integer.
pub(crate) fn nearest_rank(q: f64, n: usize) -> usize {
    let qn = q * n as f64;
    let k = (qn - qn.abs() * 4.0 * f64::EPSILON).ceil() as usize;
    k.clamp(1, n)
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainOptions {
    /// Evaluate node and midpoint losses on the rayon pool.
    pub parallel: bool,
}

/// Runs the chain and records `|barrier|` for each consecutive node pair.
pub fn barrier_samples<T: Real, O: Objective<T> + ?Sized>(
    model: &Model,
    objective: &O,
    params: &ParameterVector<T>,
    layer: usize,
    n: usize,
    seed: u64,
) -> Result<BarrierSampleSet> {
    barrier_samples_with(model, objective, params, layer, n, seed, ChainOptions::default())
}

pub fn barrier_samples_with<T: Real, O: Objective<T> + ?Sized>(
    model: &Model,
    objective: &O,
    params: &ParameterVector<T>,
    layer: usize,
    n: usize,
    seed: u64,
    options: ChainOptions,
) -> Result<BarrierSampleSet> {
    if n == 0 {
        return Err(Error::invalid("chain length must be at least 1"));
    }
    let handle = model.layer_handle(layer)?;
    let mut sampler = PermutationSampler::new(seed);
    let permutations = (0..n).map(|_| sampler.sample(handle)).collect::<Result<Vec<_>>>()?;

    let node = |j: usize| -> Result<ParameterVector<T>> {
        if j == 0 {
            Ok(params.clone())
        } else {
            apply(model, params, &permutations[j - 1])
        }
    };

    let (node_losses, mid_losses): (Vec<T>, Vec<T>) = if options.parallel {
        let nodes = (0..=n)
            .into_par_iter()
            .map(|j| {
                let point = if j == 0 { BarrierPoint::First } else { BarrierPoint::Second };
                checked(objective.loss(&node(j)?), point, Some(j))
            })
            .collect::<Result<Vec<_>>>()?;
        let mids = (0..n)
            .into_par_iter()
            .map(|i| {
                let mid = lerp(&node(i)?, &node(i + 1)?, T::lit(0.5))?;
                checked(objective.loss(&mid), BarrierPoint::Midpoint, Some(i))
            })
            .collect::<Result<Vec<_>>>()?;
        (nodes, mids)
    } else {
        let mut nodes = Vec::with_capacity(n + 1);
        let mut mids = Vec::with_capacity(n);
        let mut prev = params.clone();
        nodes.push(checked(objective.loss(&prev), BarrierPoint::First, Some(0))?);
        for j in 1..=n {
            let next = node(j)?;
            nodes.push(checked(objective.loss(&next), BarrierPoint::Second, Some(j))?);
            let mid = lerp(&prev, &next, T::lit(0.5))?;
            mids.push(checked(objective.loss(&mid), BarrierPoint::Midpoint, Some(j - 1))?);
            prev = next;
        }
        (nodes, mids)
    };

    let signed: Vec<f64> = (0..n)
        .map(|i| barrier_from_losses(node_losses[i], node_losses[i + 1], mid_losses[i]).to_f64_lossless())
        .collect();
    Ok(BarrierSampleSet {
        barriers: signed.iter().map(|b| b.abs()).collect(),
        signed,
        node_losses: node_losses.iter().map(|l| l.to_f64_lossless()).collect(),
        permutations,
        source: SampleSource {
            params_fingerprint: params.fingerprint(),
            layer,
            seed,
            batch_fingerprint: objective.fingerprint(),
        },
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub index: usize,
    pub barrier: f64,
    pub is_edge: bool,
}

/// Result of one manifold-detection run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldEstimate {
    pub edges: usize,
    pub n: usize,
    pub ratio: f64,
    pub lambda: f64,
    pub samples: BarrierSampleSet,
}

impl ManifoldEstimate {
    /// Scores the first `n` samples against `lambda` (ties count as edges).
    pub fn score(samples: &BarrierSampleSet, lambda: f64, n: usize) -> Result<Self> {
        if !(lambda >= 0.0) {
            return Err(Error::invalid(format!("threshold {lambda} must be non-negative")));
        }
        let edges = samples.edges_within(lambda, n)?;
        Ok(Self {
            edges,
            n,
            ratio: edges as f64 / n as f64,
            lambda,
            samples: samples.prefix(n)?,
        })
    }

    /// Same edge log under a different threshold.
    pub fn rescore(&self, lambda: f64) -> Result<Self> {
        Self::score(&self.samples, lambda, self.n)
    }

    pub fn edge_log(&self) -> Vec<EdgeRecord> {
        self.samples
            .barriers()
            .iter()
            .enumerate()
            .map(|(i, &b)| EdgeRecord {
                index: i + 1,
                barrier: b,
                is_edge: b <= self.lambda,
            })
            .collect()
    }
}

/// Edge ratio `e / n` of a fresh chain under threshold `lambda`.
pub fn manifold_ratio<T: Real, O: Objective<T> + ?Sized>(
    model: &Model,
    objective: &O,
    params: &ParameterVector<T>,
    layer: usize,
    lambda: f64,
    n: usize,
    seed: u64,
) -> Result<ManifoldEstimate> {
    let samples = barrier_samples(model, objective, params, layer, n, seed)?;
    ManifoldEstimate::score(&samples, lambda, n)
}

/// Seeds of the base and candidate chains.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricSeeds {
    pub base: u64,
    pub candidate: u64,
}

impl MetricSeeds {
    /// Independent base and candidate streams derived from one seed.
    pub fn derived(seed: u64) -> Self {
        Self {
            base: rng::derive_seed(seed, &[rng::tag("manifold/base")]),
            candidate: rng::derive_seed(seed, &[rng::tag("manifold/candidate")]),
        }
    }

    /// Both chains use the same stream.
    pub fn shared(seed: u64) -> Self {
        Self {
            base: seed,
            candidate: seed,
        }
    }
}

/// One side of the metric: a model, its objective on the metric batch, its
/// parameters and the layer to permute.
pub struct MetricTerm<'a, T: Real, O: Objective<T> + ?Sized> {
    pub model: &'a Model,
    pub objective: &'a O,
    pub params: &'a ParameterVector<T>,
    pub layer: usize,
}

impl<'a, T: Real, O: Objective<T> + ?Sized> MetricTerm<'a, T, O> {
    pub fn new(model: &'a Model, objective: &'a O, params: &'a ParameterVector<T>, layer: usize) -> Self {
        Self {
            model,
            objective,
            params,
            layer,
        }
    }

    pub fn samples(&self, n: usize, seed: u64, options: ChainOptions) -> Result<BarrierSampleSet> {
        barrier_samples_with(self.model, self.objective, self.params, self.layer, n, seed, options)
    }
}

/// Change in manifold ratio, in percent.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifoldMetric {
    pub value: f64,
    pub q: f64,
    pub n: usize,
    pub lambda: f64,
    pub base_ratio: f64,
    pub candidate_ratio: f64,
}

impl ManifoldMetric {
    /// Scores the first `n` samples of both chains with λ taken from the base chain.
    pub fn from_samples(base: &BarrierSampleSet, candidate: &BarrierSampleSet, q: f64, n: usize) -> Result<Self> {
        if base.source.batch_fingerprint != candidate.source.batch_fingerprint {
            return Err(Error::BatchMismatch {
                base: base.source.batch_fingerprint,
                candidate: candidate.source.batch_fingerprint,
            });
        }
        let base_prefix = base.prefix(n)?;
        let lambda = base_prefix.quantile(q)?;
        let base_ratio = base.edges_within(lambda, n)? as f64 / n as f64;
        let candidate_ratio = candidate.edges_within(lambda, n)? as f64 / n as f64;
        Ok(Self {
            value: 100.0 * (candidate_ratio - base_ratio),
            q,
            n,
            lambda,
            base_ratio,
            candidate_ratio,
        })
    }
}

/// `100 * (m(candidate, λ, n) - m(base, λ, n))` with `λ` the q-quantile of the
/// base chain's barriers. The base edge count reuses that same chain.
pub fn manifold_metric<T: Real, O: Objective<T> + ?Sized, P: Objective<T> + ?Sized>(
    base: &MetricTerm<'_, T, O>,
    candidate: &MetricTerm<'_, T, P>,
    q: f64,
    n: usize,
    seeds: MetricSeeds,
) -> Result<ManifoldMetric> {
    check_batches(base.objective.fingerprint(), candidate.objective.fingerprint())?;
    let base_set = base.samples(n, seeds.base, ChainOptions::default())?;
    let cand_set = candidate.samples(n, seeds.candidate, ChainOptions::default())?;
    ManifoldMetric::from_samples(&base_set, &cand_set, q, n)
}

fn check_batches(base: u64, candidate: u64) -> Result<()> {
    if base == candidate {
        Ok(())
    } else {
        Err(Error::BatchMismatch { base, candidate })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub q: f64,
    pub n: usize,
    pub plan: String,
    pub metric: ManifoldMetric,
}

/// Metric grid over `(q, n)` computed from one chain of length `max(N)` per
/// model: each cell uses the first `n` barriers.
pub fn sensitivity_sweep<T: Real, O: Objective<T> + ?Sized, P: Objective<T> + ?Sized>(
    base: &MetricTerm<'_, T, O>,
    candidates: &[(String, MetricTerm<'_, T, P>)],
    qs: &[f64],
    ns: &[usize],
    seeds: MetricSeeds,
    options: ChainOptions,
) -> Result<Vec<SweepCell>> {
    let max_n = *ns.iter().max().ok_or_else(|| Error::invalid("empty n grid"))?;
    for (_, c) in candidates {
        check_batches(base.objective.fingerprint(), c.objective.fingerprint())?;
    }
    let base_set = base.samples(max_n, seeds.base, options)?;
    let sets = candidates
        .iter()
        .map(|(name, c)| Ok((name.clone(), c.samples(max_n, seeds.candidate, options)?)))
        .collect::<Result<Vec<_>>>()?;
    sweep_from_samples(&base_set, &sets, qs, ns)
}

/// Slices precomputed chains into the `(q, n)` grid.
pub fn sweep_from_samples(
    base: &BarrierSampleSet,
    candidates: &[(String, BarrierSampleSet)],
    qs: &[f64],
    ns: &[usize],
) -> Result<Vec<SweepCell>> {
    let mut cells = Vec::with_capacity(qs.len() * ns.len() * candidates.len());
    for (plan, set) in candidates {
        for &q in qs {
            for &n in ns {
                cells.push(SweepCell {
                    q,
                    n,
                    plan: plan.clone(),
                    metric: ManifoldMetric::from_samples(base, set, q, n)?,
                });
            }
        }
    }
    Ok(cells)
}
