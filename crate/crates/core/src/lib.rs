//! Measuring the size of minima manifolds created by function-preserving
//! network expansion, and using it to predict post-expansion training gains.
//!
//! The crate bundles a small CPU neural-network core (dense and 3x3 conv
//! layers with hand-written reverse mode), Net2Net-style widening and
//! deepening, permutation samplers, the loss-barrier chain estimator,
//! zero-cost proxies, rank correlations and an experiment harness.

pub mod batch;
pub mod error;
pub mod expand;
pub mod harness;
pub mod kernels;
pub mod manifold;
pub mod models;
pub mod objective;
pub mod optim;
pub mod params;
pub mod permute;
pub mod proxies;
pub mod ranking;
pub mod rng;
pub mod tensor;
mod units;

pub use batch::{Batch, Dataset};
pub use error::{Error, Result};
pub use expand::{deepen, expand, widen, widen_with_mappings, ExpansionPlan, UnitMapping, WidenPlan};
pub use manifold::{
    barrier_curve, barrier_midpoint, barrier_samples, manifold_metric, manifold_ratio, quantile, sensitivity_sweep,
    BarrierSampleSet, ManifoldEstimate, ManifoldMetric, MetricSeeds, MetricTerm,
};
pub use models::{build, cross_entropy, LayerHandle, LayerSpec, Model, ModelSpec, ParamKind};
pub use objective::{hvp, BatchLoss, CountingObjective, Differentiable, Objective};
pub use optim::{optimizer_step, OptimizerConfig, OptimizerKind, OptimizerState};
pub use params::{lerp, ParamLayout, ParameterVector, Segment};
pub use permute::{apply, sample_permutation, Permutation, PermutationSampler};
pub use proxies::{compute_proxies, grad_norm, grasp, jacov, snip, sotl_e, synflow, ProxyKind, ProxyScore};
pub use ranking::{kendall_tau, pearson, spearman, Correlation, PairedSeries};
pub use tensor::{Real, Tensor};
