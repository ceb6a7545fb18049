//! Function-preserving expansion (Net2Net-style).
//!
//! Widening copies randomly chosen existing units into the new slots and
//! divides each copy's outgoing weights by the number of replicas, so the
//! next layer sees the same pre-activations. Deepening inserts a 3x3 conv
//! whose kernel is the channel-wise identity followed by a ReLU; on the
//! non-negative activations behind a ReLU this is an exact no-op.

use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::models::{LayerSpec, Model, ModelSpec, Op, ParamKind};
use crate::params::ParameterVector;
use crate::tensor::Real;
use crate::units::{outgoing_offsets, reindex_units, unit_axis, Incoming};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WidenPlan {
    /// `(layer index, new width)` pairs, applied in order.
    pub targets: Vec<(usize, usize)>,
    pub duplication_seed: u64,
    /// Std of Gaussian noise added to the incoming weights of new units. Zero
    /// keeps the expansion exactly function-preserving.
    pub noise_scale: f64,
    /// Relative zero-sum perturbation of the outgoing weights of replicated
    /// units. Replicas of one source keep the same total outgoing weight, so
    /// the function is preserved, but they no longer receive identical
    /// gradients and can diverge during training.
    #[serde(default)]
    pub split_noise: f64,
}

impl WidenPlan {
    pub fn new(layer: usize, new_width: usize, duplication_seed: u64) -> Self {
        Self {
            targets: vec![(layer, new_width)],
            duplication_seed,
            noise_scale: 0.0,
            split_noise: 0.0,
        }
    }

    /// Width `round(width * factor)` for one layer.
    pub fn by_factor(model: &Model, layer: usize, factor: f64, duplication_seed: u64) -> Result<Self> {
        if !(factor >= 1.0 && factor.is_finite()) {
            return Err(Error::invalid(format!("expansion factor {factor} must be >= 1")));
        }
        let width = model.layer_handle(layer)?.width;
        Ok(Self::new(layer, (width as f64 * factor).round() as usize, duplication_seed))
    }

    pub fn with_split_noise(mut self, scale: f64) -> Self {
        self.split_noise = scale;
        self
    }
}

/// One resolved widening step: which old unit each new unit copies.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct UnitMapping {
    pub layer: usize,
    /// The layer whose incoming weights are rescaled.
    pub next_layer: usize,
    pub old_width: usize,
    /// `source[u]` is the old unit copied into new unit `u`; the first
    /// `old_width` entries are the identity.
    pub source: Vec<usize>,
    /// Replica count of each new unit's source.
    pub replicas: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub enum ExpansionPlan {
    Widen(WidenPlan),
    /// Insert an identity conv + ReLU right after layer `after`.
    Deepen { after: usize },
}

impl fmt::Display for ExpansionPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ExpansionPlan::Widen(p) => {
                let parts: Vec<String> = p.targets.iter().map(|(l, w)| format!("L{l}->{w}")).collect();
                write!(f, "widen[{}]", parts.join(","))
            }
            ExpansionPlan::Deepen { after } => write!(f, "deepen[after L{after}]"),
        }
    }
}

/// Applies either kind of plan.
pub fn expand<T: Real>(model: &Model, params: &ParameterVector<T>, plan: &ExpansionPlan) -> Result<(Model, ParameterVector<T>)> {
    match plan {
        ExpansionPlan::Widen(p) => widen(model, params, p),
        ExpansionPlan::Deepen { after } => deepen(model, params, *after),
    }
}

pub fn widen<T: Real>(model: &Model, params: &ParameterVector<T>, plan: &WidenPlan) -> Result<(Model, ParameterVector<T>)> {
    widen_with_mappings(model, params, plan).map(|(m, p, _)| (m, p))
}

/// Like [`widen`] but also returns the unit mapping used for every target.
pub fn widen_with_mappings<T: Real>(
    model: &Model,
    params: &ParameterVector<T>,
    plan: &WidenPlan,
) -> Result<(Model, ParameterVector<T>, Vec<UnitMapping>)> {
    for scale in [plan.noise_scale, plan.split_noise] {
        if !(scale >= 0.0 && scale.is_finite()) {
            return Err(Error::invalid("noise scales must be finite and non-negative"));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(plan.duplication_seed);
    let mut model = model.clone();
    let mut params = params.clone();
    let mut mappings = Vec::with_capacity(plan.targets.len());
    for &(layer, new_width) in &plan.targets {
        let axis = unit_axis(&model, layer)?;
        let old_width = axis.handle.width;
        if new_width < old_width {
            return Err(Error::invalid(format!(
                "layer {layer}: new width {new_width} is smaller than current width {old_width}"
            )));
        }
        let mut source: Vec<usize> = (0..old_width).collect();
        source.extend((old_width..new_width).map(|_| rng.random_range(0..old_width)));
        let mut counts = vec![0usize; old_width];
        for &s in &source {
            counts[s] += 1;
        }
        let replicas: Vec<usize> = source.iter().map(|&s| counts[s]).collect();

        let mut spec = model.spec().clone();
        spec.layers[layer] = match axis.handle.kind {
            ParamKind::Dense => LayerSpec::Dense { units: new_width },
            ParamKind::Conv => LayerSpec::Conv2d { channels: new_width },
        };
        let new_model = Model::new(spec)?;
        let mut new_params = reindex_units(&params, &axis, &new_model, &source, Some(&replicas))?;

        if plan.noise_scale > 0.0 {
            let w = new_params.segment_mut(axis.weight);
            for u in old_width..new_width {
                match axis.incoming {
                    Incoming::Dense { inp } => {
                        for k in 0..inp {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            let x = &mut w[k * new_width + u];
                            *x = *x + T::lit(plan.noise_scale * z);
                        }
                    }
                    Incoming::Conv { fan } => {
                        for x in &mut w[u * fan..(u + 1) * fan] {
                            let z: f64 = StandardNormal.sample(&mut rng);
                            *x = *x + T::lit(plan.noise_scale * z);
                        }
                    }
                }
            }
        }

        if plan.split_noise > 0.0 {
            let next = new_params.segment_mut(axis.next_weight);
            for s in (0..old_width).filter(|&s| counts[s] > 1) {
                let group: Vec<Vec<usize>> = (0..new_width)
                    .filter(|&u| source[u] == s)
                    .map(|u| outgoing_offsets(&axis, new_width, u))
                    .collect();
                for k in 0..group[0].len() {
                    let z: Vec<f64> = group.iter().map(|_| StandardNormal.sample(&mut rng)).collect();
                    let mean = z.iter().sum::<f64>() / z.len() as f64;
                    for (offsets, zu) in group.iter().zip(&z) {
                        let x = &mut next[offsets[k]];
                        *x = *x * T::lit(1.0 + plan.split_noise * (zu - mean));
                    }
                }
            }
        }

        mappings.push(UnitMapping {
            layer,
            next_layer: axis.next_index,
            old_width,
            source,
            replicas,
        });
        model = new_model;
        params = new_params;
    }
    Ok((model, params, mappings))
}

/// Inserts an identity 3x3 conv (center tap 1 on the matching channel, zero
/// bias) and a ReLU directly after layer `after`, which must be a ReLU lying
/// between two conv layers with the same channel count.
pub fn deepen<T: Real>(model: &Model, params: &ParameterVector<T>, after: usize) -> Result<(Model, ParameterVector<T>)> {
    let spec = model.spec();
    if spec.layers.get(after) != Some(&LayerSpec::Relu) {
        return Err(Error::invalid(format!(
            "depth insertion after layer {after} needs a preceding ReLU"
        )));
    }
    let layers = model.resolved();
    let prev = layers[..after].iter().rev().find_map(|l| match &l.op {
        Op::Conv(g) => Some(Ok(g.out_ch)),
        Op::Dense { .. } => Some(Err(())),
        _ => None,
    });
    let next = layers[after + 1..].iter().find_map(|l| match &l.op {
        Op::Conv(g) => Some(Ok(g.out_ch)),
        Op::Dense { .. } => Some(Err(())),
        _ => None,
    });
    let (prev_ch, next_ch) = match (prev, next) {
        (Some(Ok(p)), Some(Ok(n))) => (p, n),
        _ => {
            return Err(Error::invalid(format!(
                "depth insertion after layer {after} must sit between two conv layers"
            )))
        }
    };
    let channels = layers[after].out_shape[0];
    if prev_ch != next_ch || channels != prev_ch {
        return Err(Error::IncompatibleLayers {
            first: format!("conv({prev_ch})"),
            second: format!("conv({next_ch})"),
            reason: format!("channel mismatch at insertion point after layer {after}"),
        });
    }

    let mut new_spec: ModelSpec = spec.clone();
    new_spec.layers.insert(after + 1, LayerSpec::Relu);
    new_spec.layers.insert(after + 1, LayerSpec::Conv2d { channels });
    let new_model = Model::new(new_spec)?;
    let mut new_params = ParameterVector::zeros(new_model.layout().clone());

    let shifted = |i: usize| if i > after { i + 2 } else { i };
    for (i, layer) in layers.iter().enumerate() {
        let j = shifted(i);
        let new_layer = &new_model.resolved()[j];
        for (old_seg, new_seg) in [(layer.weight, new_layer.weight), (layer.bias, new_layer.bias)] {
            if let (Some(o), Some(n)) = (old_seg, new_seg) {
                new_params.segment_mut(n).copy_from_slice(params.segment(o));
            }
        }
    }
    let inserted = &new_model.resolved()[after + 1];
    let w = new_params.segment_mut(inserted.weight.unwrap());
    let taps = ConvGeometry::TAPS;
    for c in 0..channels {
        w[(c * channels + c) * taps + 4] = T::one();
    }
    Ok((new_model, new_params))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::build;

    #[test]
    fn shrinking_is_rejected() {
        let spec = ModelSpec::from_arch("F(6)", vec![3], 2).unwrap();
        let (model, params) = build::<f32>(&spec, 0).unwrap();
        assert!(widen(&model, &params, &WidenPlan::new(0, 4, 0)).is_err());
    }

    #[test]
    fn classifier_cannot_be_widened() {
        let spec = ModelSpec::from_arch("F(6)", vec![3], 2).unwrap();
        let (model, params) = build::<f32>(&spec, 0).unwrap();
        let last = model.parameterized_layers().last().unwrap().index;
        assert!(widen(&model, &params, &WidenPlan::new(last, 4, 0)).is_err());
    }

    #[test]
    fn replicas_count_sources() {
        let spec = ModelSpec::from_arch("F(3)", vec![2], 2).unwrap();
        let (model, params) = build::<f32>(&spec, 0).unwrap();
        let (_, _, maps) = widen_with_mappings(&model, &params, &WidenPlan::new(0, 9, 5)).unwrap();
        let m = &maps[0];
        assert_eq!(&m.source[..3], &[0, 1, 2]);
        for (u, &s) in m.source.iter().enumerate() {
            assert_eq!(m.replicas[u], m.source.iter().filter(|&&x| x == s).count());
        }
        assert_eq!(m.next_layer, 2);
    }

    #[test]
    fn deepen_requires_relu_and_equal_channels() {
        let spec = ModelSpec::from_arch("C1(4)-C2(6)", vec![1, 4, 4], 2).unwrap();
        let (model, params) = build::<f32>(&spec, 0).unwrap();
        // Layer 0 is a conv, not a ReLU.
        assert!(deepen(&model, &params, 0).is_err());
        // 4 vs 6 channels.
        assert!(matches!(deepen(&model, &params, 1), Err(Error::IncompatibleLayers { .. })));
    }
}
