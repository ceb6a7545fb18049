//! Flat parameter vectors with a named segment layout.
//!
//! All parameters of a model live in one contiguous buffer. The layout records
//! where each named tensor (`layer3.weight`, ...) starts, so interpolation and
//! barrier computations work on the flat buffer while layers read their own
//! segments.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment table shared by every vector derived from one model.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamLayout {
    segments: Vec<Segment>,
    total_len: usize,
}

impl ParamLayout {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a segment and returns its index.
    pub fn push(&mut self, name: impl Into<String>, shape: Vec<usize>) -> usize {
        let len = shape.iter().product();
        self.segments.push(Segment {
            name: name.into(),
            shape,
            offset: self.total_len,
            len,
        });
        self.total_len += len;
        self.segments.len() - 1
    }

    pub fn segments(&self) -> &[Segment] {
        &self.segments
    }

    pub fn segment(&self, index: usize) -> &Segment {
        &self.segments[index]
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.segments.iter().position(|s| s.name == name)
    }
}

/// The flat vector θ together with its layout.
#[derive(Clone, Debug, PartialEq)]
pub struct ParameterVector<T = f32> {
    layout: Arc<ParamLayout>,
    data: Vec<T>,
}

impl<T: Real> ParameterVector<T> {
    pub fn zeros(layout: Arc<ParamLayout>) -> Self {
        let data = vec![T::zero(); layout.total_len()];
        Self { layout, data }
    }

    /// Rebuilds a vector from its flat form (the inverse of [`Self::flatten`]).
    pub fn unflatten(flat: Vec<T>, layout: Arc<ParamLayout>) -> Result<Self> {
        if flat.len() != layout.total_len() {
            return Err(Error::Layout(format!(
                "flat length {} does not match layout length {}",
                flat.len(),
                layout.total_len()
            )));
        }
        Ok(Self { layout, data: flat })
    }

    pub fn flatten(&self) -> &[T] {
        &self.data
    }

    pub fn flatten_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_flat(self) -> Vec<T> {
        self.data
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn segment(&self, index: usize) -> &[T] {
        let s = self.layout.segment(index);
        &self.data[s.offset..s.offset + s.len]
    }

    pub fn segment_mut(&mut self, index: usize) -> &mut [T] {
        let s = self.layout.segment(index);
        &mut self.data[s.offset..s.offset + s.len]
    }

    pub fn segment_tensor(&self, index: usize) -> Tensor<T> {
        let s = self.layout.segment(index);
        Tensor::new(s.shape.clone(), self.segment(index).to_vec()).expect("layout shape is consistent")
    }

    pub fn same_layout(&self, other: &Self) -> bool {
        Arc::ptr_eq(&self.layout, &other.layout) || *self.layout == *other.layout
    }

    pub fn check_layout(&self, other: &Self) -> Result<()> {
        if self.same_layout(other) {
            Ok(())
        } else {
            Err(Error::Layout(format!(
                "{} segments / {} values vs {} segments / {} values",
                self.layout.segments().len(),
                self.len(),
                other.layout.segments().len(),
                other.len()
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn dot(&self, other: &Self) -> Result<T> {
        self.check_layout(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |acc, (&a, &b)| acc + a * b))
    }

    /// Euclidean norm with sequential accumulation.
    pub fn norm(&self) -> T {
        self.data.iter().fold(T::zero(), |acc, &x| acc + x * x).sqrt()
    }

    pub fn scale(&mut self, c: T) {
        self.data.iter_mut().for_each(|x| *x = *x * c);
    }

    /// `self += c * other`.
    pub fn add_scaled(&mut self, other: &Self, c: T) -> Result<()> {
        self.check_layout(other)?;
        for (x, &y) in self.data.iter_mut().zip(&other.data) {
            *x = *x + c * y;
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> ParameterVector<U> {
        ParameterVector {
            layout: Arc::clone(&self.layout),
            data: self.data.iter().map(|&x| U::lit(x.to_f64_lossless())).collect(),
        }
    }

    /// FNV-1a over the raw bits; equal vectors give equal fingerprints.
    pub fn fingerprint(&self) -> u64 {
        fingerprint_values(&self.data)
    }
}

/// Elementwise `alpha * a + (1 - alpha) * b`.
pub fn lerp<T: Real>(a: &ParameterVector<T>, b: &ParameterVector<T>, alpha: T) -> Result<ParameterVector<T>> {
    a.check_layout(b)?;
    if !(alpha >= T::zero() && alpha <= T::one()) {
        return Err(Error::invalid(format!("interpolation weight {alpha} outside [0, 1]")));
    }
    let beta = T::one() - alpha;
    let data = a
        .data
        .iter()
        .zip(&b.data)
        .map(|(&x, &y)| alpha * x + beta * y)
        .collect();
    Ok(ParameterVector {
        layout: Arc::clone(&a.layout),
        data,
    })
}

pub(crate) fn fingerprint_values<T: Real>(values: &[T]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &v in values {
        h ^= v.bits();
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
