#![allow(dead_code)]

use std::sync::Arc;

use manifold_gain::{Batch, Differentiable, Objective, ParamLayout, ParameterVector, Real, Result, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(shape: Vec<usize>, seed: u64) -> Tensor<T> {
    let mut r = rng(seed);
    Tensor::from_fn(shape, |_| T::lit(r.random_range(-1.0..1.0)))
}

pub fn random_batch<T: Real>(shape: &[usize], rows: usize, classes: usize, seed: u64) -> Batch<T> {
    let mut full = vec![rows];
    full.extend_from_slice(shape);
    let mut r = rng(seed ^ 0x5eed);
    let targets = (0..rows).map(|_| r.random_range(0..classes)).collect();
    Batch::new(random_tensor(full, seed), targets).unwrap()
}

pub fn flat_layout(len: usize) -> Arc<ParamLayout> {
    let mut l = ParamLayout::new();
    l.push("w", vec![len]);
    Arc::new(l)
}

pub fn vector(values: &[f64]) -> ParameterVector<f64> {
    ParameterVector::unflatten(values.to_vec(), flat_layout(values.len())).unwrap()
}

/// `L(w) = ½ wᵀ A w + bᵀ w` with a dense symmetric `A`.
pub struct Quadratic {
    pub a: Vec<f64>,
    pub b: Vec<f64>,
    pub dim: usize,
}

impl Quadratic {
    pub fn random_spd(dim: usize, seed: u64) -> Self {
        let mut r = rng(seed);
        let m: Vec<f64> = (0..dim * dim).map(|_| r.random_range(-1.0..1.0)).collect();
        let mut a = vec![0.0; dim * dim];
        for i in 0..dim {
            for j in 0..dim {
                a[i * dim + j] = (0..dim).map(|k| m[k * dim + i] * m[k * dim + j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 };
            }
        }
        let b = (0..dim).map(|_| r.random_range(-1.0..1.0)).collect();
        Self { a, b, dim }
    }

    pub fn matvec(&self, v: &[f64]) -> Vec<f64> {
        (0..self.dim).map(|i| (0..self.dim).map(|j| self.a[i * self.dim + j] * v[j]).sum()).collect()
    }
}

impl Objective<f64> for Quadratic {
    fn loss(&self, p: &ParameterVector<f64>) -> Result<f64> {
        let w = p.flatten();
        let aw = self.matvec(w);
        Ok(0.5 * w.iter().zip(&aw).map(|(x, y)| x * y).sum::<f64>() + w.iter().zip(&self.b).map(|(x, y)| x * y).sum::<f64>())
    }
}

impl Differentiable<f64> for Quadratic {
    fn loss_and_grad(&self, p: &ParameterVector<f64>) -> Result<(f64, ParameterVector<f64>)> {
        let w = p.flatten();
        let g: Vec<f64> = self.matvec(w).iter().zip(&self.b).map(|(x, y)| x + y).collect();
        Ok((self.loss(p)?, ParameterVector::unflatten(g, p.layout().clone())?))
    }
}

/// Scalar surrogate `L(w) = f(w[0])` with derivative `df`.
pub struct Scalar<F, G> {
    pub f: F,
    pub df: G,
}

impl<F: Fn(f64) -> f64 + Sync, G: Fn(f64) -> f64 + Sync> Objective<f64> for Scalar<F, G> {
    fn loss(&self, p: &ParameterVector<f64>) -> Result<f64> {
        Ok((self.f)(p.flatten()[0]))
    }
}

impl<F: Fn(f64) -> f64 + Sync, G: Fn(f64) -> f64 + Sync> Differentiable<f64> for Scalar<F, G> {
    fn loss_and_grad(&self, p: &ParameterVector<f64>) -> Result<(f64, ParameterVector<f64>)> {
        let w = p.flatten()[0];
        Ok(((self.f)(w), vector(&[(self.df)(w)])))
    }
}

/// `|a - b| / max(|a|, |b|)`, with `0/0 = 0`.
pub fn rel_err(a: f64, b: f64) -> f64 {
    let scale = a.abs().max(b.abs());
    if scale == 0.0 {
        0.0
    } else {
        (a - b).abs() / scale
    }
}

/// Central difference of a model loss at coordinate `i`.
pub fn central_difference<T: Real>(
    model: &manifold_gain::Model,
    params: &ParameterVector<T>,
    batch: &Batch<T>,
    i: usize,
    eps: T,
) -> f64 {
    let mut plus = params.clone();
    plus.flatten_mut()[i] = plus.flatten()[i] + eps;
    let mut minus = params.clone();
    minus.flatten_mut()[i] = minus.flatten()[i] - eps;
    let lp = model.loss(&plus, batch).unwrap().to_f64_lossless();
    let lm = model.loss(&minus, batch).unwrap().to_f64_lossless();
    (lp - lm) / (2.0 * eps.to_f64_lossless())
}

/// A 20-unit MLP fitted to a random linear teacher, and its training data.
pub fn trained_mlp(seed: u64) -> (manifold_gain::Model, ParameterVector<f32>, Batch<f32>) {
    use manifold_gain::harness::train::TrainState;
    let spec = manifold_gain::ModelSpec::from_arch("F1(20)", vec![8], 4).unwrap();
    let (model, init) = manifold_gain::build::<f32>(&spec, seed).unwrap();
    let x: Tensor<f32> = random_tensor(vec![256, 8], seed);
    let teacher: Tensor<f32> = random_tensor(vec![8, 4], seed ^ 7);
    let targets = (0..256)
        .map(|r| {
            let row = x.row(r);
            (0..4)
                .map(|c| (0..8).map(|k| row[k] * teacher.data()[k * 4 + c]).sum::<f32>())
                .enumerate()
                .fold((0, f32::NEG_INFINITY), |best, (c, v)| if v > best.1 { (c, v) } else { best })
                .0
        })
        .collect();
    let data = Batch::new(x, targets).unwrap();
    let mut state = TrainState::new(model.clone(), init, manifold_gain::OptimizerConfig::adam(0.01), seed);
    for _ in 0..40 {
        state.run_epoch(&data, &data, 64).unwrap();
    }
    (model, state.params, data)
}
