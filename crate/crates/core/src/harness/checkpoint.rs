//! Versioned little-endian checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic "MGCKPT\r\n" | u32 version
//! str spec                        (u32 byte length + UTF-8)
//! u32 segment count, then per segment:
//!     str name | u32 rank | u64 dims.. | u64 len | f32 values..
//! u8 optimizer kind | f64 lr, beta1, beta2, eps, weight_decay | u64 step
//! u64 len | f32 first moment.. | u64 len | f32 second moment..
//! u64 shuffle seed | u64 epoch
//! u64 history length, then per epoch:
//!     u64 epoch | f64 val_acc | u64 n | f64 batch losses..
//! ```
//!
//! Loading parses the whole file before building anything, so a corrupt
//! file yields an error and no partial state.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::harness::train::{EpochStats, TrainState};
use crate::models::{Model, ModelSpec};
use crate::optim::{OptimizerConfig, OptimizerKind, OptimizerState};
use crate::params::ParameterVector;

pub const MAGIC: &[u8; 8] = b"MGCKPT\r\n";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub spec: ModelSpec,
    pub params: ParameterVector<f32>,
    pub optimizer: OptimizerState<f32>,
    /// The shuffle stream is a pure function of this seed and the epoch.
    pub shuffle_seed: u64,
    pub epoch: usize,
    pub history: Vec<EpochStats>,
}

impl Checkpoint {
    pub fn from_state(state: &TrainState) -> Self {
        Self {
            spec: state.model.spec().clone(),
            params: state.params.clone(),
            optimizer: state.optimizer.clone(),
            shuffle_seed: state.shuffle_seed,
            epoch: state.epoch(),
            history: state.history.clone(),
        }
    }

    pub fn into_state(self) -> Result<TrainState> {
        let model = Model::new(self.spec)?;
        if !Arc::ptr_eq(model.layout(), self.params.layout()) && **model.layout() != **self.params.layout() {
            return Err(Error::Checkpoint("parameter layout does not match the model spec".into()));
        }
        let params = ParameterVector::unflatten(self.params.into_flat(), model.layout().clone())?;
        Ok(TrainState {
            model,
            params,
            optimizer: self.optimizer,
            shuffle_seed: self.shuffle_seed,
            history: self.history,
        })
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut w = Writer(Vec::new());
        w.0.extend_from_slice(MAGIC);
        w.u32(VERSION);
        w.str(&self.spec.to_string());
        let layout = self.params.layout();
        w.u32(layout.segments().len() as u32);
        for (i, seg) in layout.segments().iter().enumerate() {
            w.str(&seg.name);
            w.u32(seg.shape.len() as u32);
            seg.shape.iter().for_each(|&d| w.u64(d as u64));
            w.f32s(self.params.segment(i));
        }
        let o = &self.optimizer;
        w.0.push(kind_code(o.config.kind));
        for v in [o.config.lr, o.config.beta1, o.config.beta2, o.config.eps, o.config.weight_decay] {
            w.f64(v);
        }
        w.u64(o.step);
        w.f32s(&o.first_moment);
        w.f32s(&o.second_moment);
        w.u64(self.shuffle_seed);
        w.u64(self.epoch as u64);
        w.u64(self.history.len() as u64);
        for h in &self.history {
            w.u64(h.epoch as u64);
            w.f64(h.val_acc);
            w.u64(h.batch_losses.len() as u64);
            h.batch_losses.iter().for_each(|&l| w.f64(l));
        }
        w.0
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::Checkpoint(format!("unsupported checkpoint version {version}, expected {VERSION}")));
        }
        let spec: ModelSpec = r.str()?.parse()?;
        let model = Model::new(spec.clone())?;
        let layout = model.layout().clone();
        let count = r.u32()? as usize;
        if count != layout.segments().len() {
            return Err(Error::Checkpoint(format!(
                "{count} segments stored, model has {}",
                layout.segments().len()
            )));
        }
        let mut flat = Vec::with_capacity(layout.total_len());
        for seg in layout.segments() {
            let name = r.str()?;
            let rank = r.u32()? as usize;
            let shape = (0..rank).map(|_| r.len()).collect::<Result<Vec<_>>>()?;
            if name != seg.name || shape != seg.shape {
                return Err(Error::Checkpoint(format!(
                    "segment {name} {shape:?} does not match model segment {} {:?}",
                    seg.name, seg.shape
                )));
            }
            let values = r.f32s()?;
            if values.len() != seg.len {
                return Err(Error::Checkpoint(format!(
                    "segment {name} holds {} values, shape needs {}",
                    values.len(),
                    seg.len
                )));
            }
            flat.extend(values);
        }
        let kind = kind_from_code(r.u8()?)?;
        let config = OptimizerConfig {
            kind,
            lr: r.f64()?,
            beta1: r.f64()?,
            beta2: r.f64()?,
            eps: r.f64()?,
            weight_decay: r.f64()?,
        };
        let step = r.u64()?;
        let first_moment = r.f32s()?;
        let second_moment = r.f32s()?;
        if first_moment.len() != flat.len() || second_moment.len() != flat.len() {
            return Err(Error::Checkpoint("optimizer moments do not match parameter count".into()));
        }
        let shuffle_seed = r.u64()?;
        let epoch = r.len()?;
        let hist_len = r.len()?;
        let mut history = Vec::with_capacity(hist_len.min(1 << 16));
        for _ in 0..hist_len {
            let e = r.len()?;
            let val_acc = r.f64()?;
            let n = r.len()?;
            let batch_losses = (0..n).map(|_| r.f64()).collect::<Result<Vec<_>>>()?;
            history.push(EpochStats {
                epoch: e,
                batch_losses,
                val_acc,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        Ok(Self {
            spec,
            params: ParameterVector::unflatten(flat, layout)?,
            optimizer: OptimizerState {
                config,
                step,
                first_moment,
                second_moment,
            },
            shuffle_seed,
            epoch,
            history,
        })
    }
}

pub fn save_checkpoint(path: impl AsRef<Path>, checkpoint: &Checkpoint) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, checkpoint.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_bytes(&bytes)
}

fn kind_code(kind: OptimizerKind) -> u8 {
    match kind {
        OptimizerKind::Sgd => 0,
        OptimizerKind::Adam => 1,
        OptimizerKind::AdamW => 2,
    }
}

fn kind_from_code(code: u8) -> Result<OptimizerKind> {
    match code {
        0 => Ok(OptimizerKind::Sgd),
        1 => Ok(OptimizerKind::Adam),
        2 => Ok(OptimizerKind::AdamW),
        c => Err(Error::Checkpoint(format!("unknown optimizer code {c}"))),
    }
}

struct Writer(Vec<u8>);

impl Writer {
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.0.extend_from_slice(s.as_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        self.u64(v.len() as u64);
        v.iter().for_each(|x| self.0.extend_from_slice(&x.to_le_bytes()));
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| {
            Error::Checkpoint(format!(
                "truncated at byte {}: needed {n} more bytes, {} available",
                self.pos,
                self.bytes.len() - self.pos
            ))
        })?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn len(&mut self) -> Result<usize> {
        usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("length overflows usize".into()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn str(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("invalid UTF-8 string".into()))
    }
    fn f32s(&mut self) -> Result<Vec<f32>> {
        let n = self.len()?;
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Checkpoint("length overflow".into()))?)?;
        Ok(bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect())
    }
}
