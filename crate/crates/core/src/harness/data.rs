//! Dataset ingestion: CIFAR binary batches and seeded synthetic blobs.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::batch::Dataset;
use crate::error::{Error, Result};
use crate::harness::config::{DataKind, DatasetSource};
use crate::tensor::Tensor;

/// Bytes per CIFAR-10 binary record: one label byte then 3x32x32 pixels,
/// channel-major (all red, then green, then blue).
pub const CIFAR_RECORD: usize = 1 + 3 * 32 * 32;
pub const CIFAR_CLASSES: usize = 10;

/// Per-channel normalization statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct ChannelStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

/// Parses concatenated CIFAR-10 binary records into unnormalized pixels in `[0, 1]`.
pub fn parse_cifar_records(bytes: &[u8]) -> Result<Dataset> {
    if !bytes.len().is_multiple_of(CIFAR_RECORD) {
        let offset = bytes.len() - bytes.len() % CIFAR_RECORD;
        return Err(Error::Dataset {
            offset,
            reason: format!(
                "truncated record: {} trailing bytes, expected {CIFAR_RECORD}",
                bytes.len() - offset
            ),
        });
    }
    let count = bytes.len() / CIFAR_RECORD;
    let mut pixels = Vec::with_capacity(count * (CIFAR_RECORD - 1));
    let mut labels = Vec::with_capacity(count);
    for (i, record) in bytes.chunks_exact(CIFAR_RECORD).enumerate() {
        let label = record[0] as usize;
        if label >= CIFAR_CLASSES {
            return Err(Error::Dataset {
                offset: i * CIFAR_RECORD,
                reason: format!("label {label} outside 0..{CIFAR_CLASSES}"),
            });
        }
        labels.push(label);
        pixels.extend(record[1..].iter().map(|&p| f32::from(p) / 255.0));
    }
    Dataset::new(Tensor::new(vec![count, 3, 32, 32], pixels)?, labels)
}

pub fn read_cifar_file(path: &Path) -> Result<Dataset> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_cifar_records(&bytes)
}

fn concat(parts: Vec<Dataset>) -> Result<Dataset> {
    let mut shape = parts[0].inputs().shape().to_vec();
    let mut data = Vec::new();
    let mut labels = Vec::new();
    for p in &parts {
        data.extend_from_slice(p.inputs().data());
        labels.extend_from_slice(p.targets());
    }
    shape[0] = labels.len();
    Dataset::new(Tensor::new(shape, data)?, labels)
}

/// Gaussian class clusters. Every class owns `clusters` unit-variance
/// centers; examples are a center plus isotropic noise of std `spread`.
/// Labels are balanced and the order is shuffled.
pub fn synthetic_blobs(source: &DatasetSource) -> Result<Dataset> {
    if source.classes < 2 || source.clusters == 0 || !(source.spread >= 0.0) {
        return Err(Error::invalid("blobs need >= 2 classes, >= 1 cluster and spread >= 0"));
    }
    let dim: usize = source.shape.iter().product();
    let total = source.train + source.val;
    let mut rng = ChaCha8Rng::seed_from_u64(source.seed);
    let centers: Vec<f64> = (0..source.classes * source.clusters * dim)
        .map(|_| StandardNormal.sample(&mut rng))
        .collect();
    let mut labels: Vec<usize> = (0..total).map(|i| i % source.classes).collect();
    labels.shuffle(&mut rng);
    let mut data = Vec::with_capacity(total * dim);
    for &label in &labels {
        let cluster = rng.random_range(0..source.clusters);
        let center = &centers[(label * source.clusters + cluster) * dim..][..dim];
        for &c in center {
            let z: f64 = StandardNormal.sample(&mut rng);
            data.push((c + source.spread * z) as f32);
        }
    }
    let mut shape = vec![total];
    shape.extend_from_slice(&source.shape);
    Dataset::new(Tensor::new(shape, data)?, labels)
}

fn channels_of(shape: &[usize]) -> (usize, usize) {
    // (channels, values per channel); flat inputs are one channel.
    if shape.len() >= 2 {
        (shape[0], shape[1..].iter().product())
    } else {
        (1, shape.iter().product())
    }
}

/// Mean and population std of every channel over all examples.
pub fn channel_stats(data: &Dataset) -> ChannelStats {
    let (channels, per) = channels_of(&data.inputs().shape()[1..]);
    let row = channels * per;
    let mut mean = vec![0.0; channels];
    let mut var = vec![0.0; channels];
    let count = (data.len() * per) as f64;
    for ex in data.inputs().data().chunks(row) {
        for (c, vals) in ex.chunks(per).enumerate() {
            mean[c] += vals.iter().map(|&v| f64::from(v)).sum::<f64>();
        }
    }
    mean.iter_mut().for_each(|m| *m /= count);
    for ex in data.inputs().data().chunks(row) {
        for (c, vals) in ex.chunks(per).enumerate() {
            var[c] += vals.iter().map(|&v| (f64::from(v) - mean[c]).powi(2)).sum::<f64>();
        }
    }
    let std = var.iter().map(|v| (v / count).sqrt().max(1e-8)).collect();
    ChannelStats { mean, std }
}

pub fn normalize(data: &Dataset, stats: &ChannelStats) -> Result<Dataset> {
    let (channels, per) = channels_of(&data.inputs().shape()[1..]);
    let inputs = Tensor::from_fn(data.inputs().shape().to_vec(), |i| {
        let c = (i / per) % channels;
        ((f64::from(data.inputs().data()[i]) - stats.mean[c]) / stats.std[c]) as f32
    });
    Dataset::new(inputs, data.targets().to_vec())
}

/// Loaded, split and normalized data.
#[derive(Clone, Debug)]
pub struct Splits {
    pub train: Dataset,
    pub val: Dataset,
    pub stats: ChannelStats,
}

/// Shuffles under `source.seed`, takes the first `train` examples for
/// training and the next `val` for validation, then normalizes both with
/// training statistics.
pub fn load_dataset(source: &DatasetSource) -> Result<Splits> {
    let all = match source.kind {
        DataKind::SyntheticBlobs => synthetic_blobs(source)?,
        DataKind::CifarBinary => {
            if source.paths.is_empty() {
                return Err(Error::invalid("cifar-binary source without files"));
            }
            concat(source.paths.iter().map(|p| read_cifar_file(p)).collect::<Result<_>>()?)?
        }
    };
    split_and_normalize(all, source.train, source.val, source.seed)
}

pub fn split_and_normalize(all: Dataset, train: usize, val: usize, seed: u64) -> Result<Splits> {
    if train == 0 || val == 0 || train + val > all.len() {
        return Err(Error::invalid(format!(
            "cannot split {} examples into {train} train and {val} validation",
            all.len()
        )));
    }
    let mut order: Vec<usize> = (0..all.len()).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(crate::rng::derive_seed(seed, &[crate::rng::tag("split")])));
    let train_raw = all.select(&order[..train])?;
    let val_raw = all.select(&order[train..train + val])?;
    let stats = channel_stats(&train_raw);
    Ok(Splits {
        train: normalize(&train_raw, &stats)?,
        val: normalize(&val_raw, &stats)?,
        stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: u8, fill: u8) -> Vec<u8> {
        let mut r = vec![fill; CIFAR_RECORD];
        r[0] = label;
        r
    }

    #[test]
    fn cifar_records_parse() {
        let bytes: Vec<u8> = (0..10).flat_map(|i| record(i as u8, i as u8 * 20)).collect();
        let d = parse_cifar_records(&bytes).unwrap();
        assert_eq!(d.len(), 10);
        assert_eq!(d.inputs().shape(), &[10, 3, 32, 32]);
        assert_eq!(d.targets()[7], 7);
        assert_eq!(d.inputs().row(1)[0], 20.0 / 255.0);
    }

    #[test]
    fn cifar_errors_report_offsets() {
        let mut bytes = record(1, 0);
        bytes.extend(record(12, 0));
        match parse_cifar_records(&bytes) {
            Err(Error::Dataset { offset, .. }) => assert_eq!(offset, CIFAR_RECORD),
            other => panic!("{other:?}"),
        }
        let short = vec![0u8; CIFAR_RECORD + 5];
        match parse_cifar_records(&short) {
            Err(Error::Dataset { offset, .. }) => assert_eq!(offset, CIFAR_RECORD),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn normalized_train_has_zero_mean_unit_std() {
        let mut src = DatasetSource::blobs(3, vec![2, 2, 2], 60, 20, 4);
        src.spread = 0.5;
        let s = load_dataset(&src).unwrap();
        let st = channel_stats(&s.train);
        for c in 0..2 {
            assert!(st.mean[c].abs() < 1e-6);
            assert!((st.std[c] - 1.0).abs() < 1e-5);
        }
    }
}
