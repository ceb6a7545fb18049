//! Rank correlations between a metric and the observed performance gains.

use std::cmp::Ordering;
use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric values `x` paired with gains `y`, one entry per candidate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PairedSeries {
    ids: Vec<String>,
    x: Vec<f64>,
    y: Vec<f64>,
}

impl PairedSeries {
    pub fn new(ids: Vec<String>, x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        if x.len() != y.len() || ids.len() != x.len() {
            return Err(Error::invalid(format!(
                "paired series lengths differ: ids {}, x {}, y {}",
                ids.len(),
                x.len(),
                y.len()
            )));
        }
        if x.len() < 2 {
            return Err(Error::invalid("correlation needs at least 2 pairs"));
        }
        if x.iter().chain(&y).any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("paired series value".into()));
        }
        let mut seen = HashSet::new();
        if let Some(dup) = ids.iter().find(|id| !seen.insert(id.as_str())) {
            return Err(Error::invalid(format!("duplicate candidate id {dup:?}")));
        }
        Ok(Self { ids, x, y })
    }

    /// Candidates named by position.
    pub fn from_xy(x: Vec<f64>, y: Vec<f64>) -> Result<Self> {
        let ids = (0..x.len()).map(|i| i.to_string()).collect();
        Self::new(ids, x, y)
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    pub fn x(&self) -> &[f64] {
        &self.x
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn swapped(&self) -> Self {
        Self {
            ids: self.ids.clone(),
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

/// A coefficient, or `Degenerate` when one side has no variation.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum Correlation {
    Value(f64),
    Degenerate,
}

impl Correlation {
    pub fn value(self) -> Option<f64> {
        match self {
            Correlation::Value(v) => Some(v),
            Correlation::Degenerate => None,
        }
    }

    pub fn is_degenerate(self) -> bool {
        self == Correlation::Degenerate
    }
}

fn pairs_count(t: u64) -> u64 {
    t * t.saturating_sub(1) / 2
}

/// Sum of `t(t-1)/2` over runs of equal adjacent elements under `eq`.
fn tied_pairs<T>(items: &[T], eq: impl Fn(&T, &T) -> bool) -> u64 {
    let mut total = 0;
    let mut run = 1u64;
    for w in items.windows(2) {
        if eq(&w[0], &w[1]) {
            run += 1;
        } else {
            total += pairs_count(run);
            run = 1;
        }
    }
    total + pairs_count(run)
}

/// Stable merge sort that returns the number of inversions (swaps).
fn sort_counting_swaps(v: &mut Vec<f64>) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mut buf = vec![0.0; n];
    let mut swaps = 0u64;
    let mut width = 1;
    while width < n {
        let mut start = 0;
        while start < n {
            let mid = (start + width).min(n);
            let end = (start + 2 * width).min(n);
            let (mut i, mut j, mut k) = (start, mid, start);
            while i < mid && j < end {
                if v[j] < v[i] {
                    swaps += (mid - i) as u64;
                    buf[k] = v[j];
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + end - j].copy_from_slice(&v[j..end]);
            start = end;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    swaps
}

/// Tie-corrected Kendall tau-b in `O(n log n)` (Knight's algorithm).
pub fn kendall_tau(series: &PairedSeries) -> Correlation {
    let n = series.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let (x, y) = (&series.x, &series.y);
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(y[a].total_cmp(&y[b])));

    let n0 = pairs_count(n as u64);
    let n1 = tied_pairs(&idx, |&a, &b| x[a] == x[b]);
    let n3 = tied_pairs(&idx, |&a, &b| x[a] == x[b] && y[a] == y[b]);
    let mut ys: Vec<f64> = idx.iter().map(|&i| y[i]).collect();
    let swaps = sort_counting_swaps(&mut ys);
    let n2 = tied_pairs(&ys, |a, b| a == b);

    if n0 == n1 || n0 == n2 {
        return Correlation::Degenerate;
    }
    let numerator = n0 as f64 - n1 as f64 - n2 as f64 + n3 as f64 - 2.0 * swaps as f64;
    let denominator = ((n0 - n1) as f64 * (n0 - n2) as f64).sqrt();
    Correlation::Value((numerator / denominator).clamp(-1.0, 1.0))
}

/// 1-based ranks with ties sharing their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]].total_cmp(&values[idx[start]]) == Ordering::Equal {
            end += 1;
        }
        let rank = (start + 1 + end) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        start = end;
    }
    ranks
}

fn pearson_raw(x: &[f64], y: &[f64]) -> Correlation {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Correlation::Degenerate;
    }
    Correlation::Value((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// Product-moment correlation.
pub fn pearson(series: &PairedSeries) -> Correlation {
    pearson_raw(&series.x, &series.y)
}

/// Pearson correlation of average ranks.
pub fn spearman(series: &PairedSeries) -> Correlation {
    pearson_raw(&average_ranks(&series.x), &average_ranks(&series.y))
}

/// All three coefficients for one series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorrelationSet {
    pub kendall: Correlation,
    pub spearman: Correlation,
    pub pearson: Correlation,
}

pub fn correlations(series: &PairedSeries) -> CorrelationSet {
    CorrelationSet {
        kendall: kendall_tau(series),
        spearman: spearman(series),
        pearson: pearson(series),
    }
}

/// Mean and sample standard deviation of the non-degenerate values.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: Option<f64>,
    pub std: Option<f64>,
    pub count: usize,
    pub degenerate: usize,
}

pub fn aggregate(values: &[Correlation]) -> Aggregate {
    let vals: Vec<f64> = values.iter().filter_map(|c| c.value()).collect();
    let count = vals.len();
    let mean = (count > 0).then(|| vals.iter().sum::<f64>() / count as f64);
    let std = mean.filter(|_| count > 1).map(|m| {
        (vals.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (count - 1) as f64).sqrt()
    });
    Aggregate {
        mean,
        std,
        count,
        degenerate: values.len() - count,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(x: &[f64], y: &[f64]) -> PairedSeries {
        PairedSeries::from_xy(x.to_vec(), y.to_vec()).unwrap()
    }

    #[test]
    fn kendall_examples() {
        assert_eq!(kendall_tau(&s(&[1.0, 2.0, 3.0], &[10.0, 20.0, 30.0])), Correlation::Value(1.0));
        assert_eq!(kendall_tau(&s(&[1.0, 2.0, 3.0], &[30.0, 20.0, 10.0])), Correlation::Value(-1.0));
        let t = kendall_tau(&s(&[1.0, 2.0, 3.0, 4.0], &[1.0, 3.0, 2.0, 4.0])).value().unwrap();
        assert!((t - 2.0 / 3.0).abs() < 1e-15);
        assert!(kendall_tau(&s(&[1.0, 1.0, 1.0], &[1.0, 2.0, 3.0])).is_degenerate());
    }

    #[test]
    fn pearson_and_spearman_examples() {
        let x = [1.0, 4.0, 2.0, 8.0];
        let affine: Vec<f64> = x.iter().map(|v| 2.0 * v + 3.0).collect();
        assert!((pearson(&s(&x, &affine)).value().unwrap() - 1.0).abs() < 1e-15);
        let cubed: Vec<f64> = x.iter().map(|v| v * v * v).collect();
        assert_eq!(spearman(&s(&x, &cubed)), Correlation::Value(1.0));
        assert!(pearson(&s(&x, &[5.0; 4])).is_degenerate());
    }

    #[test]
    fn average_ranks_share_ties() {
        assert_eq!(average_ranks(&[10.0, 20.0, 10.0, 30.0]), vec![1.5, 3.0, 1.5, 4.0]);
    }

    #[test]
    fn series_validation() {
        assert!(PairedSeries::from_xy(vec![1.0], vec![1.0]).is_err());
        assert!(PairedSeries::from_xy(vec![1.0, 2.0], vec![1.0]).is_err());
        assert!(PairedSeries::new(vec!["a".into(), "a".into()], vec![1.0, 2.0], vec![1.0, 2.0]).is_err());
    }

    #[test]
    fn aggregate_skips_degenerate() {
        let a = aggregate(&[Correlation::Value(1.0), Correlation::Degenerate, Correlation::Value(0.0)]);
        assert_eq!(a.mean, Some(0.5));
        assert_eq!(a.count, 2);
        assert_eq!(a.degenerate, 1);
        assert!((a.std.unwrap() - 0.5f64.sqrt()).abs() < 1e-15);
    }
}
