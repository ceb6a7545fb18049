//! Function-preserving permutations of one layer's units and the sampler that
//! generates manifold nodes.
//!
//! A permutation reorders the output units (dense) or channels (conv) of a
//! layer and applies the same reordering to the inputs of the next
//! parameterized layer, so the network computes the same function from a
//! different point in parameter space.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::{LayerHandle, Model};
use crate::params::ParameterVector;
use crate::tensor::Real;
use crate::units::{reindex_units, unit_axis};

/// Smallest layer width the sampler accepts.
pub const MIN_WIDTH: usize = 4;

/// Attempts per sample before the sampler gives up.
pub const DEFAULT_MAX_ATTEMPTS: usize = 10_000;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Permutation {
    pub layer: LayerHandle,
    /// New unit `u` takes the weights of old unit `mapping[u]`.
    mapping: Vec<usize>,
    /// Transpositions applied to the identity, in order.
    #[serde(default)]
    provenance: Vec<(usize, usize)>,
}

impl Permutation {
    pub fn identity(layer: LayerHandle) -> Self {
        Self {
            layer,
            mapping: (0..layer.width).collect(),
            provenance: Vec::new(),
        }
    }

    pub fn from_mapping(layer: LayerHandle, mapping: Vec<usize>) -> Result<Self> {
        if mapping.len() != layer.width {
            return Err(Error::invalid(format!(
                "mapping of length {} for layer of width {}",
                mapping.len(),
                layer.width
            )));
        }
        let mut seen = vec![false; mapping.len()];
        for &m in &mapping {
            if m >= mapping.len() || std::mem::replace(&mut seen[m], true) {
                return Err(Error::invalid("mapping is not a bijection"));
            }
        }
        Ok(Self {
            layer,
            mapping,
            provenance: Vec::new(),
        })
    }

    /// Applies `pairs` as successive swaps starting from the identity.
    pub fn from_transpositions(layer: LayerHandle, pairs: Vec<(usize, usize)>) -> Result<Self> {
        let mut mapping: Vec<usize> = (0..layer.width).collect();
        for &(a, b) in &pairs {
            if a >= layer.width || b >= layer.width {
                return Err(Error::invalid(format!("transposition ({a}, {b}) outside width {}", layer.width)));
            }
            mapping.swap(a, b);
        }
        Ok(Self {
            layer,
            mapping,
            provenance: pairs,
        })
    }

    pub fn mapping(&self) -> &[usize] {
        &self.mapping
    }

    pub fn provenance(&self) -> &[(usize, usize)] {
        &self.provenance
    }

    pub fn is_identity(&self) -> bool {
        self.mapping.iter().enumerate().all(|(i, &m)| i == m)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.mapping.len()];
        for (u, &m) in self.mapping.iter().enumerate() {
            inv[m] = u;
        }
        Self {
            layer: self.layer,
            mapping: inv,
            provenance: self.provenance.iter().rev().copied().collect(),
        }
    }
}

/// Number of transpositions per sample: `ceil(log2(width))`.
pub fn transpositions_for(width: usize) -> usize {
    debug_assert!(width >= 1);
    (usize::BITS - (width - 1).leading_zeros()) as usize
}

/// Seeded sampler that never yields the identity or a repeated mapping.
#[derive(Clone, Debug)]
pub struct PermutationSampler {
    rng: ChaCha8Rng,
    seen: HashSet<Vec<usize>>,
    max_attempts: usize,
}

impl PermutationSampler {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seen: HashSet::new(),
            max_attempts: DEFAULT_MAX_ATTEMPTS,
        }
    }

    pub fn with_max_attempts(mut self, attempts: usize) -> Self {
        self.max_attempts = attempts.max(1);
        self
    }

    /// Distinct mappings yielded so far.
    pub fn drawn(&self) -> usize {
        self.seen.len()
    }

    /// Draws `ceil(log2 l)` random pairs of distinct units (pairs may repeat
    /// across draws) and swaps them, starting from the identity. Identity
    /// results and repeats are rejected and redrawn.
    pub fn sample(&mut self, layer: LayerHandle) -> Result<Permutation> {
        let width = layer.width;
        if width < MIN_WIDTH {
            return Err(Error::invalid(format!(
                "permutation sampling needs width >= {MIN_WIDTH}, got {width}"
            )));
        }
        let swaps = transpositions_for(width);
        for _ in 0..self.max_attempts {
            let pairs: Vec<(usize, usize)> = (0..swaps)
                .map(|_| {
                    let a = self.rng.random_range(0..width);
                    let mut b = self.rng.random_range(0..width - 1);
                    if b >= a {
                        b += 1;
                    }
                    (a, b)
                })
                .collect();
            let perm = Permutation::from_transpositions(layer, pairs)?;
            if perm.is_identity() || self.seen.contains(&perm.mapping) {
                continue;
            }
            self.seen.insert(perm.mapping.clone());
            return Ok(perm);
        }
        Err(Error::SamplerExhausted {
            width,
            drawn: self.seen.len(),
            attempts: self.max_attempts,
        })
    }
}

pub fn sample_permutation(layer: LayerHandle, sampler: &mut PermutationSampler) -> Result<Permutation> {
    sampler.sample(layer)
}

/// Applies `perm` to a layer and the matching inputs of the next
/// parameterized layer, looking through ReLU, max-pool and flatten.
pub fn apply<T: Real>(model: &Model, params: &ParameterVector<T>, perm: &Permutation) -> Result<ParameterVector<T>> {
    let axis = unit_axis(model, perm.layer.index)?;
    if axis.handle != perm.layer {
        return Err(Error::invalid(format!(
            "permutation built for {:?} but model layer is {:?}",
            perm.layer, axis.handle
        )));
    }
    reindex_units(params, &axis, model, &perm.mapping, None)
}
