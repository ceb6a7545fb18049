//! Model specifications, construction and evaluation.
//!
//! A [`ModelSpec`] is an explicit layer list (dense, 3x3 conv, 2x2 max-pool,
//! ReLU, flatten) plus input shape and class count. It can be written in the
//! compact architecture grammar, e.g. `C1(8)-C2(32)-MaxPool(2)-F1(256)`, where
//! each `C`/`F` block is followed by a ReLU and the classifier is appended.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::batch::Batch;
use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeometry};
use crate::params::{ParamLayout, ParameterVector};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum LayerSpec {
    Dense { units: usize },
    Conv2d { channels: usize },
    MaxPool2,
    Relu,
    Flatten,
}

impl fmt::Display for LayerSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LayerSpec::Dense { units } => write!(f, "dense({units})"),
            LayerSpec::Conv2d { channels } => write!(f, "conv({channels})"),
            LayerSpec::MaxPool2 => f.write_str("maxpool2"),
            LayerSpec::Relu => f.write_str("relu"),
            LayerSpec::Flatten => f.write_str("flatten"),
        }
    }
}

impl FromStr for LayerSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let arg = |prefix: &str| -> Result<usize> {
            s.strip_prefix(prefix)
                .and_then(|r| r.strip_suffix(')'))
                .and_then(|r| r.trim().parse().ok())
                .filter(|&n: &usize| n > 0)
                .ok_or_else(|| Error::invalid(format!("bad layer '{s}'")))
        };
        match s {
            "maxpool2" => Ok(LayerSpec::MaxPool2),
            "relu" => Ok(LayerSpec::Relu),
            "flatten" => Ok(LayerSpec::Flatten),
            _ if s.starts_with("dense(") => Ok(LayerSpec::Dense { units: arg("dense(")? }),
            _ if s.starts_with("conv(") => Ok(LayerSpec::Conv2d { channels: arg("conv(")? }),
            _ => Err(Error::invalid(format!("unknown layer '{s}'"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    /// Per-example input shape: `[d]` for MLPs, `[c, h, w]` for CNNs.
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
    pub num_classes: usize,
}

impl ModelSpec {
    /// Parses the compact architecture grammar.
    ///
    /// Tokens are separated by `-`: `C<k>(n)` is a conv with `n` channels,
    /// `F<k>(n)` a dense layer with `n` units (both followed by ReLU) and
    /// `MaxPool(2)` a 2x2 pool. A flatten is inserted before the first dense
    /// layer that follows a feature map, and a final `dense(num_classes)` is
    /// appended. An empty string gives a linear classifier.
    pub fn from_arch(arch: &str, input_shape: Vec<usize>, num_classes: usize) -> Result<Self> {
        let mut layers = Vec::new();
        let mut rank = input_shape.len();
        for token in arch.split('-').map(str::trim).filter(|t| !t.is_empty()) {
            let (head, rest) = token
                .split_once('(')
                .ok_or_else(|| Error::invalid(format!("bad architecture token '{token}'")))?;
            let n: usize = rest
                .strip_suffix(')')
                .and_then(|v| v.trim().parse().ok())
                .filter(|&n| n > 0)
                .ok_or_else(|| Error::invalid(format!("bad width in '{token}'")))?;
            let kind = head.trim_end_matches(|c: char| c.is_ascii_digit());
            match kind {
                "C" => {
                    layers.push(LayerSpec::Conv2d { channels: n });
                    layers.push(LayerSpec::Relu);
                }
                "F" => {
                    if rank == 3 {
                        layers.push(LayerSpec::Flatten);
                        rank = 1;
                    }
                    layers.push(LayerSpec::Dense { units: n });
                    layers.push(LayerSpec::Relu);
                }
                "MaxPool" if n == 2 => layers.push(LayerSpec::MaxPool2),
                _ => return Err(Error::invalid(format!("unsupported architecture token '{token}'"))),
            }
        }
        if rank == 3 {
            layers.push(LayerSpec::Flatten);
        }
        layers.push(LayerSpec::Dense { units: num_classes });
        let spec = Self {
            input_shape,
            layers,
            num_classes,
        };
        spec.resolve()?;
        Ok(spec)
    }

    /// Compact architecture string; ReLU, flatten and classifier are implied.
    pub fn arch_string(&self) -> String {
        let mut parts = Vec::new();
        let (mut c, mut f) = (0, 0);
        let last = self.layers.len().saturating_sub(1);
        for (i, layer) in self.layers.iter().enumerate() {
            match layer {
                LayerSpec::Conv2d { channels } => {
                    c += 1;
                    parts.push(format!("C{c}({channels})"));
                }
                LayerSpec::Dense { units } if i != last => {
                    f += 1;
                    parts.push(format!("F{f}({units})"));
                }
                LayerSpec::MaxPool2 => parts.push("MaxPool(2)".into()),
                _ => {}
            }
        }
        parts.join("-")
    }

    pub(crate) fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::invalid(format!("bad input shape {:?}", self.input_shape)));
        }
        if !matches!(self.input_shape.len(), 1 | 3) {
            return Err(Error::invalid("input must be [d] or [c, h, w]"));
        }
        let name = |i: usize| -> String {
            if i == usize::MAX {
                "input".into()
            } else {
                format!("layer {i} ({})", self.layers[i])
            }
        };
        let mut out = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        let mut prev = usize::MAX;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |reason: String| Error::IncompatibleLayers {
                first: name(prev),
                second: name(i),
                reason,
            };
            let (op, next) = match *layer {
                LayerSpec::Dense { units } => {
                    if shape.len() != 1 {
                        return Err(bad(format!("dense layer needs a flat input, got {shape:?}")));
                    }
                    (Op::Dense { inp: shape[0], out: units }, vec![units])
                }
                LayerSpec::Conv2d { channels } => {
                    if shape.len() != 3 {
                        return Err(bad(format!("conv layer needs a feature map, got {shape:?}")));
                    }
                    let geom = ConvGeometry {
                        in_ch: shape[0],
                        out_ch: channels,
                        height: shape[1],
                        width: shape[2],
                    };
                    (Op::Conv(geom), vec![channels, shape[1], shape[2]])
                }
                LayerSpec::MaxPool2 => {
                    if shape.len() != 3 || shape[1] < 2 || shape[2] < 2 {
                        return Err(bad(format!("max-pool needs a feature map of at least 2x2, got {shape:?}")));
                    }
                    (Op::MaxPool, vec![shape[0], shape[1] / 2, shape[2] / 2])
                }
                LayerSpec::Relu => (Op::Relu, shape.clone()),
                LayerSpec::Flatten => {
                    if shape.len() != 3 {
                        return Err(bad(format!("flatten needs a feature map, got {shape:?}")));
                    }
                    (Op::Flatten, vec![shape.iter().product()])
                }
            };
            out.push(ResolvedLayer {
                op,
                in_shape: std::mem::replace(&mut shape, next),
                out_shape: Vec::new(),
                weight: None,
                bias: None,
            });
            out.last_mut().unwrap().out_shape = shape.clone();
            prev = i;
        }
        match self.layers.last() {
            Some(LayerSpec::Dense { units }) if *units == self.num_classes => Ok(out),
            _ => Err(Error::invalid(format!(
                "final layer must be dense({}) producing class logits",
                self.num_classes
            ))),
        }
    }
}

/// Explicit form: `input=1x8x8 classes=10 layers=conv(8),relu,...`.
impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let input: Vec<String> = self.input_shape.iter().map(ToString::to_string).collect();
        let layers: Vec<String> = self.layers.iter().map(ToString::to_string).collect();
        write!(
            f,
            "input={} classes={} layers={}",
            input.join("x"),
            self.num_classes,
            layers.join(",")
        )
    }
}

impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let (mut input, mut classes, mut layers) = (None, None, None);
        for part in s.split_whitespace() {
            let (k, v) = part
                .split_once('=')
                .ok_or_else(|| Error::invalid(format!("bad model field '{part}'")))?;
            match k {
                "input" => input = Some(parse_shape(v)?),
                "classes" => classes = v.parse().ok(),
                "layers" => layers = Some(v.split(',').map(str::parse).collect::<Result<Vec<LayerSpec>>>()?),
                _ => return Err(Error::invalid(format!("unknown model field '{k}'"))),
            }
        }
        let spec = ModelSpec {
            input_shape: input.ok_or_else(|| Error::invalid("model spec missing input"))?,
            num_classes: classes.ok_or_else(|| Error::invalid("model spec missing classes"))?,
            layers: layers.ok_or_else(|| Error::invalid("model spec missing layers"))?,
        };
        spec.resolve()?;
        Ok(spec)
    }
}

/// Parses `3x32x32` or `64`.
pub fn parse_shape(s: &str) -> Result<Vec<usize>> {
    s.split('x')
        .map(|d| d.trim().parse::<usize>().ok().filter(|&d| d > 0))
        .collect::<Option<Vec<_>>>()
        .ok_or_else(|| Error::invalid(format!("bad shape '{s}'")))
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) enum Op {
    Dense { inp: usize, out: usize },
    Conv(ConvGeometry),
    MaxPool,
    Relu,
    Flatten,
}

#[derive(Clone, Debug, PartialEq)]
pub(crate) struct ResolvedLayer {
    pub op: Op,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
    pub weight: Option<usize>,
    pub bias: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ParamKind {
    Dense,
    Conv,
}

/// A parameterized (dense or conv) layer and its unit/channel count.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct LayerHandle {
    pub index: usize,
    pub kind: ParamKind,
    pub width: usize,
}

/// A validated, shape-resolved model. Holds no parameters.
#[derive(Clone, Debug)]
pub struct Model {
    spec: ModelSpec,
    layers: Vec<ResolvedLayer>,
    layout: Arc<ParamLayout>,
}

impl PartialEq for Model {
    fn eq(&self, other: &Self) -> bool {
        self.spec == other.spec
    }
}

/// Builds the model and Kaiming-uniform initial parameters under `init_seed`.
pub fn build<T: Real>(spec: &ModelSpec, init_seed: u64) -> Result<(Model, ParameterVector<T>)> {
    let model = Model::new(spec.clone())?;
    let params = model.init_params(init_seed);
    Ok((model, params))
}

/// Activations kept by a forward pass for the backward pass.
pub(crate) struct Trace<T> {
    batch: usize,
    /// `acts[i]` is the input of layer `i`; the last entry holds the logits.
    acts: Vec<Vec<T>>,
    argmax: Vec<Vec<usize>>,
}

impl Model {
    pub fn new(spec: ModelSpec) -> Result<Self> {
        let mut layers = spec.resolve()?;
        let mut layout = ParamLayout::new();
        for (i, layer) in layers.iter_mut().enumerate() {
            match &layer.op {
                Op::Dense { inp, out } => {
                    layer.weight = Some(layout.push(format!("layer{i}.weight"), vec![*inp, *out]));
                    layer.bias = Some(layout.push(format!("layer{i}.bias"), vec![*out]));
                }
                Op::Conv(g) => {
                    layer.weight = Some(layout.push(format!("layer{i}.weight"), vec![g.out_ch, g.in_ch, 3, 3]));
                    layer.bias = Some(layout.push(format!("layer{i}.bias"), vec![g.out_ch]));
                }
                _ => {}
            }
        }
        Ok(Self {
            spec,
            layers,
            layout: Arc::new(layout),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn layout(&self) -> &Arc<ParamLayout> {
        &self.layout
    }

    pub fn num_params(&self) -> usize {
        self.layout.total_len()
    }

    pub fn num_classes(&self) -> usize {
        self.spec.num_classes
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.spec.input_shape
    }

    pub(crate) fn resolved(&self) -> &[ResolvedLayer] {
        &self.layers
    }

    pub fn init_params<T: Real>(&self, init_seed: u64) -> ParameterVector<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(init_seed);
        let mut params = ParameterVector::zeros(Arc::clone(&self.layout));
        for layer in &self.layers {
            let fan_in = match &layer.op {
                Op::Dense { inp, .. } => *inp,
                Op::Conv(g) => g.in_ch * ConvGeometry::TAPS,
                _ => continue,
            };
            let bound = (6.0 / fan_in as f64).sqrt();
            for w in params.segment_mut(layer.weight.unwrap()) {
                *w = T::lit(rng.random_range(-bound..bound));
            }
        }
        params
    }

    /// All dense/conv layers in order.
    pub fn parameterized_layers(&self) -> Vec<LayerHandle> {
        (0..self.layers.len()).filter_map(|i| self.layer_handle(i).ok()).collect()
    }

    pub fn first_parameterized(&self) -> LayerHandle {
        self.parameterized_layers()[0]
    }

    pub fn layer_handle(&self, index: usize) -> Result<LayerHandle> {
        let layer = self
            .layers
            .get(index)
            .ok_or_else(|| Error::invalid(format!("layer {index} does not exist")))?;
        match &layer.op {
            Op::Dense { out, .. } => Ok(LayerHandle {
                index,
                kind: ParamKind::Dense,
                width: *out,
            }),
            Op::Conv(g) => Ok(LayerHandle {
                index,
                kind: ParamKind::Conv,
                width: g.out_ch,
            }),
            _ => Err(Error::invalid(format!(
                "layer {index} ({}) has no parameters",
                self.spec.layers[index]
            ))),
        }
    }

    fn check_inputs<T: Real>(&self, params: &ParameterVector<T>, inputs: &Tensor<T>) -> Result<usize> {
        if !(Arc::ptr_eq(params.layout(), &self.layout) || **params.layout() == *self.layout) {
            return Err(Error::Layout(format!(
                "parameters with {} values do not match model layout with {}",
                params.len(),
                self.layout.total_len()
            )));
        }
        if inputs.shape().len() != self.spec.input_shape.len() + 1 || inputs.shape()[1..] != self.spec.input_shape[..] {
            let mut expected = vec![inputs.shape().first().copied().unwrap_or(0)];
            expected.extend_from_slice(&self.spec.input_shape);
            return Err(Error::Shape {
                layer: "input".into(),
                expected,
                found: inputs.shape().to_vec(),
            });
        }
        Ok(inputs.leading())
    }

    pub(crate) fn trace<T: Real>(&self, params: &ParameterVector<T>, inputs: &Tensor<T>) -> Result<Trace<T>> {
        let batch = self.check_inputs(params, inputs)?;
        let mut acts: Vec<Vec<T>> = Vec::with_capacity(self.layers.len() + 1);
        let mut argmax = Vec::with_capacity(self.layers.len());
        acts.push(inputs.data().to_vec());
        let mut cols = Vec::new();
        for layer in &self.layers {
            let x = acts.last().unwrap();
            let out_len = batch * layer.out_shape.iter().product::<usize>();
            let mut y = vec![T::zero(); out_len];
            let mut arg = Vec::new();
            match &layer.op {
                Op::Dense { inp, out } => kernels::dense_forward(
                    x,
                    batch,
                    *inp,
                    *out,
                    params.segment(layer.weight.unwrap()),
                    params.segment(layer.bias.unwrap()),
                    &mut y,
                ),
                Op::Conv(g) => {
                    cols.resize(g.cols_len(), T::zero());
                    kernels::conv_forward(
                        g,
                        x,
                        batch,
                        params.segment(layer.weight.unwrap()),
                        params.segment(layer.bias.unwrap()),
                        &mut y,
                        &mut cols,
                    );
                }
                Op::MaxPool => {
                    let s = &layer.in_shape;
                    arg = vec![0; out_len];
                    kernels::maxpool_forward(x, batch, s[0], s[1], s[2], &mut y, &mut arg);
                }
                Op::Relu => kernels::relu_forward(x, &mut y),
                Op::Flatten => y.copy_from_slice(x),
            }
            acts.push(y);
            argmax.push(arg);
        }
        Ok(Trace { batch, acts, argmax })
    }

    /// Logits of shape `(batch, num_classes)`. Pure.
    pub fn forward<T: Real>(&self, params: &ParameterVector<T>, inputs: &Tensor<T>) -> Result<Tensor<T>> {
        let mut trace = self.trace(params, inputs)?;
        let logits = trace.acts.pop().unwrap();
        Tensor::new(vec![trace.batch, self.spec.num_classes], logits)
    }

    /// Backpropagates `dlogits` through a trace. Returns parameter gradients and,
    /// if requested, the gradient with respect to the inputs.
    pub(crate) fn backward<T: Real>(
        &self,
        params: &ParameterVector<T>,
        trace: &Trace<T>,
        dlogits: Vec<T>,
        want_input_grad: bool,
    ) -> (ParameterVector<T>, Option<Vec<T>>) {
        let batch = trace.batch;
        let mut grads = ParameterVector::zeros(Arc::clone(params.layout()));
        let mut dy = dlogits;
        let (mut cols, mut dcols) = (Vec::new(), Vec::new());
        for (i, layer) in self.layers.iter().enumerate().rev() {
            let x = &trace.acts[i];
            let need_dx = i > 0 || want_input_grad;
            let mut dx = if need_dx { vec![T::zero(); x.len()] } else { Vec::new() };
            match &layer.op {
                Op::Dense { inp, out } => {
                    let (w_seg, b_seg) = (layer.weight.unwrap(), layer.bias.unwrap());
                    let mut dw = vec![T::zero(); inp * out];
                    let mut db = vec![T::zero(); *out];
                    kernels::dense_backward(
                        x,
                        &dy,
                        batch,
                        *inp,
                        *out,
                        params.segment(w_seg),
                        &mut dw,
                        &mut db,
                        need_dx.then_some(dx.as_mut_slice()),
                    );
                    grads.segment_mut(w_seg).copy_from_slice(&dw);
                    grads.segment_mut(b_seg).copy_from_slice(&db);
                }
                Op::Conv(g) => {
                    let (w_seg, b_seg) = (layer.weight.unwrap(), layer.bias.unwrap());
                    cols.resize(g.cols_len(), T::zero());
                    dcols.resize(g.cols_len(), T::zero());
                    let mut dw = vec![T::zero(); g.out_ch * g.in_ch * ConvGeometry::TAPS];
                    let mut db = vec![T::zero(); g.out_ch];
                    kernels::conv_backward(
                        g,
                        x,
                        &dy,
                        batch,
                        params.segment(w_seg),
                        &mut dw,
                        &mut db,
                        need_dx.then_some(dx.as_mut_slice()),
                        &mut cols,
                        &mut dcols,
                    );
                    grads.segment_mut(w_seg).copy_from_slice(&dw);
                    grads.segment_mut(b_seg).copy_from_slice(&db);
                }
                Op::MaxPool => {
                    if need_dx {
                        kernels::maxpool_backward(&dy, &trace.argmax[i], &mut dx);
                    }
                }
                Op::Relu => {
                    if need_dx {
                        kernels::relu_backward(x, &dy, &mut dx);
                    }
                }
                Op::Flatten => {
                    if need_dx {
                        dx.copy_from_slice(&dy);
                    }
                }
            }
            dy = dx;
        }
        (grads, want_input_grad.then_some(dy))
    }

    /// Mean softmax cross-entropy over the batch.
    pub fn loss<T: Real>(&self, params: &ParameterVector<T>, batch: &Batch<T>) -> Result<T> {
        batch.check_labels(self.spec.num_classes)?;
        let logits = self.forward(params, batch.inputs())?;
        cross_entropy(logits.data(), batch.targets(), self.spec.num_classes)
    }

    pub fn loss_and_grad<T: Real>(&self, params: &ParameterVector<T>, batch: &Batch<T>) -> Result<(T, ParameterVector<T>)> {
        batch.check_labels(self.spec.num_classes)?;
        let mut trace = self.trace(params, batch.inputs())?;
        let logits = trace.acts.last().unwrap();
        let (loss, dlogits) = cross_entropy_with_grad(logits, batch.targets(), self.spec.num_classes)?;
        // Logits are not needed by the backward pass.
        trace.acts.pop();
        trace.acts.push(Vec::new());
        let (grads, _) = self.backward(params, &trace, dlogits, false);
        Ok((loss, grads))
    }

    pub fn grad<T: Real>(&self, params: &ParameterVector<T>, batch: &Batch<T>) -> Result<ParameterVector<T>> {
        self.loss_and_grad(params, batch).map(|(_, g)| g)
    }

    /// Gradients of `sum(upstream ⊙ logits)` with respect to parameters and inputs.
    pub fn vjp<T: Real>(
        &self,
        params: &ParameterVector<T>,
        inputs: &Tensor<T>,
        upstream: &Tensor<T>,
    ) -> Result<(ParameterVector<T>, Tensor<T>)> {
        let trace = self.trace(params, inputs)?;
        let expected = vec![trace.batch, self.spec.num_classes];
        if upstream.shape() != expected.as_slice() {
            return Err(Error::Shape {
                layer: "output".into(),
                expected,
                found: upstream.shape().to_vec(),
            });
        }
        let (grads, dx) = self.backward(params, &trace, upstream.data().to_vec(), true);
        Ok((grads, Tensor::new(inputs.shape().to_vec(), dx.unwrap())?))
    }

    /// Predicted class per example; ties go to the lowest class index.
    pub fn predict<T: Real>(&self, params: &ParameterVector<T>, inputs: &Tensor<T>) -> Result<Vec<usize>> {
        let logits = self.forward(params, inputs)?;
        Ok(logits.data().chunks(self.spec.num_classes).map(argmax_lowest).collect())
    }

    /// Fraction of correctly classified examples, evaluated in chunks.
    pub fn accuracy<T: Real>(&self, params: &ParameterVector<T>, data: &Batch<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy needs a non-empty dataset"));
        }
        const CHUNK: usize = 512;
        let mut correct = 0usize;
        for start in (0..data.len()).step_by(CHUNK) {
            let chunk = data.slice(start, start + CHUNK)?;
            let preds = self.predict(params, chunk.inputs())?;
            correct += preds.iter().zip(chunk.targets()).filter(|(p, t)| p == t).count();
        }
        Ok(correct as f64 / data.len() as f64)
    }
}

pub(crate) fn argmax_lowest<T: Real>(row: &[T]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Mean cross-entropy with max-subtracted softmax.
pub fn cross_entropy<T: Real>(logits: &[T], targets: &[usize], classes: usize) -> Result<T> {
    let mut total = T::zero();
    for (row, &t) in logits.chunks(classes).zip(targets) {
        total = total + example_loss(row, t)?.0;
    }
    Ok(total / T::lit(targets.len() as f64))
}

fn example_loss<T: Real>(row: &[T], target: usize) -> Result<(T, T, T)> {
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("logits".into()));
    }
    let m = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
    let z = row.iter().fold(T::zero(), |acc, &v| acc + (v - m).exp());
    let lse = m + z.ln();
    Ok((lse - row[target], m, z))
}

pub(crate) fn cross_entropy_with_grad<T: Real>(logits: &[T], targets: &[usize], classes: usize) -> Result<(T, Vec<T>)> {
    let n = T::lit(targets.len() as f64);
    let mut total = T::zero();
    let mut grad = vec![T::zero(); logits.len()];
    for ((row, g), &t) in logits.chunks(classes).zip(grad.chunks_mut(classes)).zip(targets) {
        let (l, m, z) = example_loss(row, t)?;
        total = total + l;
        for (gj, &v) in g.iter_mut().zip(row) {
            *gj = (v - m).exp() / z / n;
        }
        g[t] = g[t] - T::one() / n;
    }
    Ok((total / n, grad))
}
