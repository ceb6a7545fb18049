//! Zero-cost proxies and the SoTL-E training baseline.
//!
//! Every score here is oriented so that a higher value should mean a better
//! candidate, except SoTL-E which is stored raw and negated by
//! [`ProxyScore::ranking_value`].

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::objective::{hvp, BatchLoss, Differentiable};
use crate::params::ParameterVector;
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProxyKind {
    GradNorm,
    Jacov,
    Snip,
    Grasp,
    SynFlow,
    SotlE,
}

impl ProxyKind {
    pub const ALL: [ProxyKind; 6] = [
        ProxyKind::GradNorm,
        ProxyKind::Jacov,
        ProxyKind::Snip,
        ProxyKind::Grasp,
        ProxyKind::SynFlow,
        ProxyKind::SotlE,
    ];

    /// The five scores computable from a single batch without training.
    pub const ZERO_COST: [ProxyKind; 5] = [
        ProxyKind::GradNorm,
        ProxyKind::Jacov,
        ProxyKind::Snip,
        ProxyKind::Grasp,
        ProxyKind::SynFlow,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProxyKind::GradNorm => "gradnorm",
            ProxyKind::Jacov => "jacov",
            ProxyKind::Snip => "snip",
            ProxyKind::Grasp => "grasp",
            ProxyKind::SynFlow => "synflow",
            ProxyKind::SotlE => "sotl_e",
        }
    }

    /// Lower raw SoTL-E is better, everything else is higher-is-better.
    pub fn orientation(self) -> f64 {
        if self == ProxyKind::SotlE {
            -1.0
        } else {
            1.0
        }
    }
}

impl fmt::Display for ProxyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ProxyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let key = s.trim().to_ascii_lowercase().replace('-', "_");
        ProxyKind::ALL
            .into_iter()
            .find(|k| k.name() == key)
            .ok_or_else(|| Error::invalid(format!("unknown proxy {s:?}")))
    }
}

/// Parses a comma-separated list such as `gradnorm,snip`.
pub fn parse_kinds(list: &str) -> Result<Vec<ProxyKind>> {
    list.split(',').filter(|s| !s.trim().is_empty()).map(str::parse).collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyScore {
    pub kind: ProxyKind,
    pub value: f64,
    pub batch_fingerprint: u64,
    pub params_fingerprint: u64,
}

impl ProxyScore {
    pub fn ranking_value(&self) -> f64 {
        self.kind.orientation() * self.value
    }
}

fn finite(value: f64, what: &str) -> Result<f64> {
    if value.is_finite() {
        Ok(value)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn checked_grad<T: Real, D: Differentiable<T> + ?Sized>(objective: &D, params: &ParameterVector<T>) -> Result<ParameterVector<T>> {
    let g = objective.grad(params)?;
    if g.is_finite() {
        Ok(g)
    } else {
        Err(Error::NonFinite("gradient".into()))
    }
}

/// Sum over parameter segments of the L2 norm of that segment's gradient.
pub fn grad_norm<T: Real, D: Differentiable<T> + ?Sized>(objective: &D, params: &ParameterVector<T>) -> Result<f64> {
    let g = checked_grad(objective, params)?;
    let total = (0..g.layout().segments().len())
        .map(|i| g.segment(i).iter().map(|x| x.to_f64_lossless().powi(2)).sum::<f64>().sqrt())
        .sum();
    finite(total, "gradnorm")
}

/// Saliency magnitude `Σ |θ ⊙ ∂L/∂θ|`.
pub fn snip<T: Real, D: Differentiable<T> + ?Sized>(objective: &D, params: &ParameterVector<T>) -> Result<f64> {
    let g = checked_grad(objective, params)?;
    let total = params
        .flatten()
        .iter()
        .zip(g.flatten())
        .map(|(w, d)| (w.to_f64_lossless() * d.to_f64_lossless()).abs())
        .sum();
    finite(total, "snip")
}

/// `-θᵀ(H g)` with `g` the gradient and `H g` from central differences.
pub fn grasp<T: Real, D: Differentiable<T> + ?Sized>(objective: &D, params: &ParameterVector<T>) -> Result<f64> {
    let g = checked_grad(objective, params)?;
    let hg = hvp(objective, params, &g)?;
    let total: f64 = params
        .flatten()
        .iter()
        .zip(hg.flatten())
        .map(|(w, h)| w.to_f64_lossless() * h.to_f64_lossless())
        .sum();
    finite(-total, "grasp")
}

/// Data-free saliency: with every parameter replaced by its magnitude and an
/// all-ones input, `R = Σ logits` and the score is `Σ |θ| ⊙ ∂R/∂|θ|`.
/// Computed in double precision on a copy; `params` is never touched.
pub fn synflow<T: Real>(model: &Model, params: &ParameterVector<T>) -> Result<f64> {
    let abs: ParameterVector<f64> = params.cast::<f64>().map(f64::abs);
    let mut shape = vec![1];
    shape.extend_from_slice(model.input_shape());
    let ones = Tensor::filled(shape, 1.0);
    let upstream = Tensor::filled(vec![1, model.num_classes()], 1.0);
    let (grads, _) = model.vjp(&abs, &ones, &upstream)?;
    let total = abs.dot(&grads)?;
    finite(total, "synflow")
}

/// Power-iteration settings for [`jacov`].
pub const JACOV_TOLERANCE: f64 = 1e-6;
pub const JACOV_MAX_ITERS: usize = 1000;

/// Largest eigenvalue of the batch covariance of the input Jacobian of
/// `Σ logits`. Each row of `J` is one example's input gradient; the
/// covariance divides by `B - 1`.
pub fn jacov<T: Real>(model: &Model, params: &ParameterVector<T>, batch: &Batch<T>) -> Result<f64> {
    let b = batch.len();
    if b < 2 {
        return Err(Error::invalid("jacov needs a batch of at least 2 examples"));
    }
    let upstream = Tensor::filled(vec![b, model.num_classes()], T::one());
    let (_, dx) = model.vjp(params, batch.inputs(), &upstream)?;
    let d = dx.row_len();
    let j: Vec<f64> = dx.data().iter().map(|x| x.to_f64_lossless()).collect();
    if j.iter().any(|x| !x.is_finite()) {
        return Err(Error::NonFinite("input jacobian".into()));
    }
    jacobian_covariance_top_eigenvalue(&j, b, d)
}

/// Top eigenvalue of `cov(J)` for a row-major `rows x cols` matrix.
pub fn jacobian_covariance_top_eigenvalue(j: &[f64], rows: usize, cols: usize) -> Result<f64> {
    let mut centered = j.to_vec();
    for c in 0..cols {
        // Offset by the first row so a constant column centers to exact zeros.
        let first = j[c];
        let mean = first + (0..rows).map(|r| j[r * cols + c] - first).sum::<f64>() / rows as f64;
        for r in 0..rows {
            centered[r * cols + c] -= mean;
        }
    }
    let scale = 1.0 / (rows as f64 - 1.0);
    // The non-zero spectrum of JᵀJ equals that of JJᵀ; iterate on the smaller.
    let (dim, matrix) = if rows <= cols {
        let mut g = vec![0.0; rows * rows];
        for a in 0..rows {
            for b in a..rows {
                let v: f64 = (0..cols).map(|c| centered[a * cols + c] * centered[b * cols + c]).sum::<f64>() * scale;
                g[a * rows + b] = v;
                g[b * rows + a] = v;
            }
        }
        (rows, g)
    } else {
        let mut s = vec![0.0; cols * cols];
        for a in 0..cols {
            for b in a..cols {
                let v: f64 = (0..rows).map(|r| centered[r * cols + a] * centered[r * cols + b]).sum::<f64>() * scale;
                s[a * cols + b] = v;
                s[b * cols + a] = v;
            }
        }
        (cols, s)
    };
    power_iteration(&matrix, dim, JACOV_TOLERANCE, JACOV_MAX_ITERS)
}

/// Dominant eigenvalue of a symmetric positive semi-definite matrix. Stops
/// when the residual `‖Av - λv‖` falls below `tol * λ`.
pub fn power_iteration(a: &[f64], dim: usize, tol: f64, max_iters: usize) -> Result<f64> {
    let trace: f64 = (0..dim).map(|i| a[i * dim + i]).sum();
    if trace == 0.0 {
        return Ok(0.0);
    }
    let matvec = |v: &[f64]| -> Vec<f64> {
        (0..dim).map(|r| (0..dim).map(|c| a[r * dim + c] * v[c]).sum()).collect()
    };
    // Centering puts the ones vector in the null space, so start elsewhere.
    let mut v: Vec<f64> = (0..dim)
        .map(|i| 1.0 + ((crate::rng::mix(i as u64) >> 11) as f64 / (1u64 << 53) as f64))
        .collect();
    normalize(&mut v);
    let mut residual = f64::INFINITY;
    for _ in 0..max_iters {
        let av = matvec(&v);
        let lambda: f64 = v.iter().zip(&av).map(|(x, y)| x * y).sum();
        residual = av.iter().zip(&v).map(|(y, x)| (y - lambda * x).powi(2)).sum::<f64>().sqrt();
        if residual <= tol * lambda.abs() || residual == 0.0 {
            return Ok(lambda);
        }
        v = av;
        if normalize(&mut v) == 0.0 {
            return Ok(0.0);
        }
    }
    Err(Error::NoConvergence {
        iterations: max_iters,
        residual,
    })
}

fn normalize(v: &mut [f64]) -> f64 {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if n > 0.0 {
        v.iter_mut().for_each(|x| *x /= n);
    }
    n
}

/// Sum of one epoch's per-batch training losses.
pub fn sotl_e(losses: &[f64]) -> Result<f64> {
    if losses.is_empty() {
        return Err(Error::invalid("SoTL-E needs at least one recorded loss"));
    }
    finite(losses.iter().sum(), "sotl_e")
}

/// Scores `kinds` for one candidate on `batch`. SoTL-E needs `epoch_losses`.
pub fn compute_proxies<T: Real>(
    model: &Model,
    params: &ParameterVector<T>,
    batch: &Batch<T>,
    kinds: &[ProxyKind],
    epoch_losses: Option<&[f64]>,
) -> Result<Vec<ProxyScore>> {
    let objective = BatchLoss::new(model, batch);
    let batch_fingerprint = batch.fingerprint();
    let params_fingerprint = params.fingerprint();
    kinds
        .iter()
        .map(|&kind| {
            let value = match kind {
                ProxyKind::GradNorm => grad_norm(&objective, params)?,
                ProxyKind::Jacov => jacov(model, params, batch)?,
                ProxyKind::Snip => snip(&objective, params)?,
                ProxyKind::Grasp => grasp(&objective, params)?,
                ProxyKind::SynFlow => synflow(model, params)?,
                ProxyKind::SotlE => sotl_e(epoch_losses.ok_or_else(|| Error::invalid("SoTL-E requested without an epoch loss log"))?)?,
            };
            Ok(ProxyScore {
                kind,
                value,
                batch_fingerprint,
                params_fingerprint,
            })
        })
        .collect()
}
