//! Reindexing the output units of one layer together with the matching input
//! slots of the next parameterized layer. Shared by permutation (bijective
//! source map) and widening (source map with repeats plus outgoing rescale).

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::kernels::ConvGeometry;
use crate::models::{LayerHandle, Model, Op};
use crate::params::ParameterVector;
use crate::tensor::Real;

#[derive(Clone, Copy, Debug)]
pub(crate) enum Incoming {
    /// Weight is `inp x width`; unit `u` owns column `u`.
    Dense { inp: usize },
    /// Weight is `width x fan`; unit `u` owns filter `u`.
    Conv { fan: usize },
}

#[derive(Clone, Copy, Debug)]
pub(crate) enum Outgoing {
    /// Weight is `(width * block) x out`; unit `u` owns rows `[u*block, (u+1)*block)`.
    Dense { block: usize, out: usize },
    /// Weight is `out_ch x width x 9`; unit `u` owns one 3x3 slice per output channel.
    Conv { out_ch: usize },
}

#[derive(Clone, Debug)]
pub(crate) struct UnitAxis {
    pub handle: LayerHandle,
    pub weight: usize,
    pub bias: usize,
    pub incoming: Incoming,
    pub next_index: usize,
    pub next_weight: usize,
    pub outgoing: Outgoing,
}

pub(crate) fn unit_axis(model: &Model, index: usize) -> Result<UnitAxis> {
    let handle = model.layer_handle(index)?;
    let layers = model.resolved();
    let layer = &layers[index];
    let incoming = match &layer.op {
        Op::Dense { inp, .. } => Incoming::Dense { inp: *inp },
        Op::Conv(g) => Incoming::Conv {
            fan: g.in_ch * ConvGeometry::TAPS,
        },
        _ => unreachable!("layer_handle only accepts dense/conv"),
    };
    let mut block = 1;
    for (j, next) in layers.iter().enumerate().skip(index + 1) {
        match &next.op {
            Op::Relu | Op::MaxPool => {}
            Op::Flatten => block = next.in_shape[1] * next.in_shape[2],
            Op::Dense { out, .. } => {
                return Ok(UnitAxis {
                    handle,
                    weight: layer.weight.unwrap(),
                    bias: layer.bias.unwrap(),
                    incoming,
                    next_index: j,
                    next_weight: next.weight.unwrap(),
                    outgoing: Outgoing::Dense { block, out: *out },
                })
            }
            Op::Conv(g) => {
                return Ok(UnitAxis {
                    handle,
                    weight: layer.weight.unwrap(),
                    bias: layer.bias.unwrap(),
                    incoming,
                    next_index: j,
                    next_weight: next.weight.unwrap(),
                    outgoing: Outgoing::Conv { out_ch: g.out_ch },
                })
            }
        }
    }
    Err(Error::invalid(format!(
        "layer {index} has no downstream parameterized layer (final classifier)"
    )))
}

/// Builds parameters for `new_model` where new unit `u` of the axis layer is a
/// copy of old unit `source[u]`. Outgoing weights of new unit `u` are divided
/// by `divisors[u]` when given. Every other segment is copied by name.
pub(crate) fn reindex_units<T: Real>(
    old_params: &ParameterVector<T>,
    axis: &UnitAxis,
    new_model: &Model,
    source: &[usize],
    divisors: Option<&[usize]>,
) -> Result<ParameterVector<T>> {
    let old_width = axis.handle.width;
    let new_width = source.len();
    if let Some(&bad) = source.iter().find(|&&s| s >= old_width) {
        return Err(Error::invalid(format!("source unit {bad} outside width {old_width}")));
    }
    let old_layout = old_params.layout();
    let new_layout = Arc::clone(new_model.layout());
    let mut out = ParameterVector::zeros(Arc::clone(&new_layout));
    for (i, seg) in new_layout.segments().iter().enumerate() {
        if i == axis.weight || i == axis.bias || i == axis.next_weight {
            continue;
        }
        let j = old_layout
            .index_of(&seg.name)
            .ok_or_else(|| Error::Layout(format!("segment {} missing from source parameters", seg.name)))?;
        if old_layout.segment(j).shape != seg.shape {
            return Err(Error::Layout(format!("segment {} changed shape", seg.name)));
        }
        out.segment_mut(i).copy_from_slice(old_params.segment(j));
    }

    let old_w = old_params.segment(axis.weight);
    let new_w = out.segment_mut(axis.weight);
    match axis.incoming {
        Incoming::Dense { inp } => {
            for k in 0..inp {
                for (u, &s) in source.iter().enumerate() {
                    new_w[k * new_width + u] = old_w[k * old_width + s];
                }
            }
        }
        Incoming::Conv { fan } => {
            for (u, &s) in source.iter().enumerate() {
                new_w[u * fan..(u + 1) * fan].copy_from_slice(&old_w[s * fan..(s + 1) * fan]);
            }
        }
    }
    let old_b = old_params.segment(axis.bias);
    let new_b = out.segment_mut(axis.bias);
    for (u, &s) in source.iter().enumerate() {
        new_b[u] = old_b[s];
    }

    let scale = |u: usize, x: T| -> T {
        match divisors {
            Some(d) if d[u] != 1 => x / T::lit(d[u] as f64),
            _ => x,
        }
    };
    let old_n = old_params.segment(axis.next_weight);
    let new_n = out.segment_mut(axis.next_weight);
    match axis.outgoing {
        Outgoing::Dense { block, out: cols } => {
            for (u, &s) in source.iter().enumerate() {
                for b in 0..block {
                    let dst = (u * block + b) * cols;
                    let src = (s * block + b) * cols;
                    for c in 0..cols {
                        new_n[dst + c] = scale(u, old_n[src + c]);
                    }
                }
            }
        }
        Outgoing::Conv { out_ch } => {
            let taps = ConvGeometry::TAPS;
            for o in 0..out_ch {
                for (u, &s) in source.iter().enumerate() {
                    let dst = (o * new_width + u) * taps;
                    let src = (o * old_width + s) * taps;
                    for t in 0..taps {
                        new_n[dst + t] = scale(u, old_n[src + t]);
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Flat offsets inside the next layer's weight owned by unit `u` of a layer
/// that now has `width` units, in a fixed order shared by all units.
pub(crate) fn outgoing_offsets(axis: &UnitAxis, width: usize, u: usize) -> Vec<usize> {
    match axis.outgoing {
        Outgoing::Dense { block, out } => (u * block * out..(u + 1) * block * out).collect(),
        Outgoing::Conv { out_ch } => {
            let taps = ConvGeometry::TAPS;
            (0..out_ch)
                .flat_map(|o| {
                    let base = (o * width + u) * taps;
                    base..base + taps
                })
                .collect()
        }
    }
}
