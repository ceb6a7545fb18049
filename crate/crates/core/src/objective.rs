//! Scalar objectives over parameter vectors.
//!
//! Barrier estimation only needs loss values; the proxies also need gradients
//! and Hessian-vector products. Both are expressed as traits so the same code
//! runs on a model/batch pair, on analytic surrogates in tests, and behind an
//! instrumented counter.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::models::Model;
use crate::params::ParameterVector;
use crate::tensor::Real;

pub trait Objective<T: Real>: Sync {
    fn loss(&self, params: &ParameterVector<T>) -> Result<T>;

    /// Identifies the data the objective is evaluated on.
    fn fingerprint(&self) -> u64 {
        0
    }
}

pub trait Differentiable<T: Real>: Objective<T> {
    fn loss_and_grad(&self, params: &ParameterVector<T>) -> Result<(T, ParameterVector<T>)>;

    fn grad(&self, params: &ParameterVector<T>) -> Result<ParameterVector<T>> {
        self.loss_and_grad(params).map(|(_, g)| g)
    }
}

/// Mean cross-entropy of a model on one fixed batch.
pub struct BatchLoss<'a, T: Real = f32> {
    model: &'a Model,
    batch: &'a Batch<T>,
    fingerprint: u64,
}

impl<'a, T: Real> BatchLoss<'a, T> {
    pub fn new(model: &'a Model, batch: &'a Batch<T>) -> Self {
        Self {
            model,
            batch,
            fingerprint: batch.fingerprint(),
        }
    }

    pub fn model(&self) -> &Model {
        self.model
    }

    pub fn batch(&self) -> &Batch<T> {
        self.batch
    }
}

impl<T: Real> Objective<T> for BatchLoss<'_, T> {
    fn loss(&self, params: &ParameterVector<T>) -> Result<T> {
        self.model.loss(params, self.batch)
    }

    fn fingerprint(&self) -> u64 {
        self.fingerprint
    }
}

impl<T: Real> Differentiable<T> for BatchLoss<'_, T> {
    fn loss_and_grad(&self, params: &ParameterVector<T>) -> Result<(T, ParameterVector<T>)> {
        self.model.loss_and_grad(params, self.batch)
    }
}

/// Wraps an objective and counts loss evaluations.
pub struct CountingObjective<O> {
    inner: O,
    calls: AtomicUsize,
}

impl<O> CountingObjective<O> {
    pub fn new(inner: O) -> Self {
        Self {
            inner,
            calls: AtomicUsize::new(0),
        }
    }

    pub fn calls(&self) -> usize {
        self.calls.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.calls.store(0, Ordering::SeqCst);
    }

    pub fn inner(&self) -> &O {
        &self.inner
    }
}

impl<T: Real, O: Objective<T>> Objective<T> for CountingObjective<O> {
    fn loss(&self, params: &ParameterVector<T>) -> Result<T> {
        self.calls.fetch_add(1, Ordering::SeqCst);
        self.inner.loss(params)
    }

    fn fingerprint(&self) -> u64 {
        self.inner.fingerprint()
    }
}

/// Default central-difference step for gradient differences: cbrt(machine eps).
pub fn default_hvp_step<T: Real>() -> T {
    T::epsilon().cbrt()
}

/// Hessian-vector product by central differences of the gradient:
/// `(g(θ + h v) - g(θ - h v)) / 2h` with `h = step / ‖v‖`.
///
/// A zero direction returns the zero vector.
pub fn hvp<T: Real, D: Differentiable<T> + ?Sized>(
    objective: &D,
    params: &ParameterVector<T>,
    v: &ParameterVector<T>,
) -> Result<ParameterVector<T>> {
    hvp_with_step(objective, params, v, default_hvp_step())
}

pub fn hvp_with_step<T: Real, D: Differentiable<T> + ?Sized>(
    objective: &D,
    params: &ParameterVector<T>,
    v: &ParameterVector<T>,
    step: T,
) -> Result<ParameterVector<T>> {
    params.check_layout(v)?;
    if !v.is_finite() {
        return Err(Error::NonFinite("hvp direction".into()));
    }
    let norm = v.norm();
    if norm == T::zero() {
        return Ok(ParameterVector::zeros(v.layout().clone()));
    }
    let h = step / norm;
    let mut plus = params.clone();
    plus.add_scaled(v, h)?;
    let mut minus = params.clone();
    minus.add_scaled(v, -h)?;
    let mut out = objective.grad(&plus)?;
    let g_minus = objective.grad(&minus)?;
    out.add_scaled(&g_minus, -T::one())?;
    out.scale(T::one() / (h + h));
    if !out.is_finite() {
        return Err(Error::NonFinite("hessian-vector product".into()));
    }
    Ok(out)
}
