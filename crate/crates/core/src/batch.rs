use crate::error::{Error, Result};
use crate::params::fingerprint_values;
use crate::tensor::{Real, Tensor};

/// Inputs with integer class targets. Also used for whole datasets.
#[derive(Clone, PartialEq)]
pub struct Batch<T = f32> {
    inputs: Tensor<T>,
    targets: Vec<usize>,
}

pub type Dataset<T = f32> = Batch<T>;

impl<T: Real> std::fmt::Debug for Batch<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Batch")
            .field("inputs", &self.inputs)
            .field("targets", &self.targets.len())
            .finish()
    }
}

impl<T: Real> Batch<T> {
    pub fn new(inputs: Tensor<T>, targets: Vec<usize>) -> Result<Self> {
        if inputs.shape().len() < 2 {
            return Err(Error::invalid("batch inputs need a leading batch dimension"));
        }
        if inputs.leading() != targets.len() {
            return Err(Error::Shape {
                layer: "batch".into(),
                expected: vec![targets.len()],
                found: vec![inputs.leading()],
            });
        }
        Ok(Self { inputs, targets })
    }

    pub fn inputs(&self) -> &Tensor<T> {
        &self.inputs
    }

    pub fn targets(&self) -> &[usize] {
        &self.targets
    }

    pub fn len(&self) -> usize {
        self.targets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.targets.is_empty()
    }

    pub fn select(&self, rows: &[usize]) -> Result<Self> {
        let inputs = self.inputs.select_rows(rows)?;
        let targets = rows.iter().map(|&r| self.targets[r]).collect();
        Ok(Self { inputs, targets })
    }

    /// Contiguous slice `[start, end)` of examples.
    pub fn slice(&self, start: usize, end: usize) -> Result<Self> {
        let rows: Vec<usize> = (start..end.min(self.len())).collect();
        self.select(&rows)
    }

    pub fn cast<U: Real>(&self) -> Batch<U> {
        Batch {
            inputs: self.inputs.cast(),
            targets: self.targets.clone(),
        }
    }

    pub fn check_labels(&self, num_classes: usize) -> Result<()> {
        match self.targets.iter().position(|&t| t >= num_classes) {
            Some(i) => Err(Error::invalid(format!(
                "label {} at example {i} outside [0, {num_classes})",
                self.targets[i]
            ))),
            None => Ok(()),
        }
    }

    pub fn fingerprint(&self) -> u64 {
        let mut h = fingerprint_values(self.inputs.data());
        for &t in &self.targets {
            h ^= t as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
        h
    }
}
