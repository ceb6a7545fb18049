//! SGD, Adam and AdamW updates over flat parameter vectors.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParameterVector;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum OptimizerKind {
    Sgd,
    Adam,
    AdamW,
}

impl fmt::Display for OptimizerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimizerKind::Sgd => "sgd",
            OptimizerKind::Adam => "adam",
            OptimizerKind::AdamW => "adamw",
        })
    }
}

impl FromStr for OptimizerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            "adamw" => Ok(OptimizerKind::AdamW),
            other => Err(Error::invalid(format!("unknown optimizer '{other}'"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// L2 penalty for SGD/Adam, decoupled decay for AdamW.
    pub weight_decay: f64,
}

impl Default for OptimizerConfig {
    /// AdamW(lr 1e-3, betas (0.9, 0.999), weight decay 1e-4).
    fn default() -> Self {
        Self {
            kind: OptimizerKind::AdamW,
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-4,
        }
    }
}

impl OptimizerConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Sgd,
            lr,
            weight_decay: 0.0,
            ..Self::default()
        }
    }

    pub fn adam(lr: f64) -> Self {
        Self {
            kind: OptimizerKind::Adam,
            lr,
            weight_decay: 0.0,
            ..Self::default()
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct OptimizerState<T = f32> {
    pub config: OptimizerConfig,
    pub step: u64,
    pub first_moment: Vec<T>,
    pub second_moment: Vec<T>,
}

impl<T: Real> OptimizerState<T> {
    pub fn new(config: OptimizerConfig, len: usize) -> Self {
        let moments = if config.kind == OptimizerKind::Sgd { 0 } else { len };
        Self {
            config,
            step: 0,
            first_moment: vec![T::zero(); moments],
            second_moment: vec![T::zero(); moments],
        }
    }

    /// Updates `params` in place. Gradients are validated before anything changes.
    pub fn apply(&mut self, params: &mut ParameterVector<T>, grads: &ParameterVector<T>) -> Result<()> {
        params.check_layout(grads)?;
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let c = self.config;
        let lr = T::lit(c.lr);
        let wd = T::lit(c.weight_decay);
        let w = params.flatten_mut();
        let g = grads.flatten();
        match c.kind {
            OptimizerKind::Sgd => {
                for (wi, &gi) in w.iter_mut().zip(g) {
                    *wi = *wi - lr * (gi + wd * *wi);
                }
            }
            OptimizerKind::Adam | OptimizerKind::AdamW => {
                if self.first_moment.len() != w.len() {
                    return Err(Error::Layout("optimizer moments do not match parameters".into()));
                }
                let t = (self.step + 1) as i32;
                let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
                let bc1 = T::one() - b1.powi(t);
                let bc2 = T::one() - b2.powi(t);
                let eps = T::lit(c.eps);
                let decoupled = c.kind == OptimizerKind::AdamW;
                for i in 0..w.len() {
                    let mut gi = g[i];
                    if decoupled {
                        w[i] = w[i] - lr * wd * w[i];
                    } else {
                        gi = gi + wd * w[i];
                    }
                    let m = b1 * self.first_moment[i] + (T::one() - b1) * gi;
                    let v = b2 * self.second_moment[i] + (T::one() - b2) * gi * gi;
                    self.first_moment[i] = m;
                    self.second_moment[i] = v;
                    let m_hat = m / bc1;
                    let v_hat = v / bc2;
                    w[i] = w[i] - lr * m_hat / (v_hat.sqrt() + eps);
                }
            }
        }
        self.step += 1;
        Ok(())
    }
}

/// Functional form: returns the next state and parameters, leaving inputs untouched.
pub fn optimizer_step<T: Real>(
    state: &OptimizerState<T>,
    params: &ParameterVector<T>,
    grads: &ParameterVector<T>,
) -> Result<(OptimizerState<T>, ParameterVector<T>)> {
    let mut next_state = state.clone();
    let mut next_params = params.clone();
    next_state.apply(&mut next_params, grads)?;
    Ok((next_state, next_params))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::params::ParamLayout;

    fn scalar(v: f64) -> ParameterVector<f64> {
        let mut l = ParamLayout::new();
        l.push("w", vec![1]);
        ParameterVector::unflatten(vec![v], Arc::new(l)).unwrap()
    }

    #[test]
    fn sgd_step() {
        let s = OptimizerState::new(OptimizerConfig::sgd(0.1), 1);
        let (s2, w) = optimizer_step(&s, &scalar(1.0), &scalar(0.5)).unwrap();
        assert!((w.flatten()[0] - 0.95).abs() < 1e-15);
        assert_eq!(s2.step, 1);
        assert_eq!(s.step, 0);
    }

    #[test]
    fn adam_first_step_matches_unrolled_recurrence() {
        let cfg = OptimizerConfig::adam(0.01);
        let s = OptimizerState::new(cfg, 1);
        let (_, w) = optimizer_step(&s, &scalar(1.0), &scalar(1.0)).unwrap();
        // m = 0.1, v = 0.001; m_hat = 1, v_hat = 1.
        let m_hat = (1.0 - 0.9) * 1.0 / (1.0 - 0.9);
        let v_hat = (1.0 - 0.999) * 1.0 / (1.0 - 0.999f64);
        let expected = 1.0 - 0.01 * m_hat / (v_hat.sqrt() + 1e-8);
        assert!((w.flatten()[0] - expected).abs() < 1e-15);
        assert!((w.flatten()[0] - (1.0 - 0.01 / (1.0 + 1e-8))).abs() < 1e-12);
    }

    #[test]
    fn adamw_shrinks_by_decoupled_decay() {
        let mut cfg = OptimizerConfig::adam(0.01);
        let adam = OptimizerState::new(cfg, 1);
        cfg.kind = OptimizerKind::AdamW;
        cfg.weight_decay = 0.1;
        let adamw = OptimizerState::new(cfg, 1);
        let w0 = 2.0;
        let (_, a) = optimizer_step(&adam, &scalar(w0), &scalar(0.3)).unwrap();
        let (_, b) = optimizer_step(&adamw, &scalar(w0), &scalar(0.3)).unwrap();
        let shrink = a.flatten()[0] - b.flatten()[0];
        assert!((shrink - 0.01 * 0.1 * w0).abs() < 1e-12);
    }

    #[test]
    fn non_finite_gradient_leaves_state_untouched() {
        let mut s = OptimizerState::new(OptimizerConfig::default(), 1);
        let mut w = scalar(1.0);
        assert!(s.apply(&mut w, &scalar(f64::NAN)).is_err());
        assert_eq!(w.flatten()[0], 1.0);
        assert_eq!(s.step, 0);
        assert_eq!(s.first_moment, vec![0.0]);
    }
}
