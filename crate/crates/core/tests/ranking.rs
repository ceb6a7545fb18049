mod common;

use common::rng;
use manifold_gain::ranking::*;
use proptest::prelude::*;
use rand::Rng;

fn s(x: &[f64], y: &[f64]) -> PairedSeries {
    PairedSeries::from_xy(x.to_vec(), y.to_vec()).unwrap()
}

fn val(c: Correlation) -> f64 {
    c.value().expect("non-degenerate")
}

fn tau_b_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let (mut nc, mut nd, mut tx, mut ty) = (0.0, 0.0, 0.0, 0.0);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            let dx = x[i] - x[j];
            let dy = y[i] - y[j];
            match (dx == 0.0, dy == 0.0) {
                (true, true) => {}
                (true, false) => tx += 1.0,
                (false, true) => ty += 1.0,
                _ if dx * dy > 0.0 => nc += 1.0,
                _ => nd += 1.0,
            }
        }
    }
    let denom = ((nc + nd + tx) * (nc + nd + ty)) as f64;
    (denom > 0.0).then(|| (nc - nd) / denom.sqrt())
}

fn rank_oracle(v: &[f64]) -> Vec<f64> {
    v.iter()
        .map(|a| {
            let below = v.iter().filter(|b| *b < a).count() as f64;
            let equal = v.iter().filter(|b| *b == a).count() as f64;
            below + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson_oracle(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let syy: f64 = y.iter().map(|b| (b - my).powi(2)).sum();
    (sxx > 0.0 && syy > 0.0).then(|| sxy / (sxx * syy).sqrt())
}

#[test]
fn reference_examples() {
    assert_eq!(val(kendall_tau(&s(&[1., 2., 3., 4.], &[1., 2., 3., 4.]))), 1.0);
    assert_eq!(val(kendall_tau(&s(&[1., 2., 3., 4.], &[4., 3., 2., 1.]))), -1.0);
    assert!((val(kendall_tau(&s(&[1., 2., 3.], &[1., 3., 2.]))) - 1.0 / 3.0).abs() < 1e-15);
    assert!((val(kendall_tau(&s(&[1., 2., 3., 4.], &[1., 2., 4., 3.]))) - 2.0 / 3.0).abs() < 1e-15);
    assert!((val(spearman(&s(&[1., 2., 3., 4., 5.], &[1., 4., 9., 16., 100.]))) - 1.0).abs() < 1e-15);
    assert!((val(pearson(&s(&[1., 2., 3., 4.], &[-1., 1., 3., 5.]))) - 1.0).abs() < 1e-15);
}

#[test]
fn matches_naive_oracles_with_ties() {
    let mut r = rng(42);
    for case in 0..50 {
        // Values drawn from a small support so ties are common.
        let support = if case % 2 == 0 { 4 } else { 1000 };
        let x: Vec<f64> = (0..10).map(|_| r.random_range(0..support) as f64).collect();
        let y: Vec<f64> = (0..10).map(|_| r.random_range(0..support) as f64).collect();
        let series = s(&x, &y);
        let set = correlations(&series);
        match tau_b_oracle(&x, &y) {
            Some(t) => assert!((val(set.kendall) - t).abs() < 1e-12, "case {case}"),
            None => assert!(set.kendall.is_degenerate()),
        }
        let (rx, ry) = (rank_oracle(&x), rank_oracle(&y));
        assert_eq!(average_ranks(&x), rx);
        match pearson_oracle(&rx, &ry) {
            Some(v) => assert!((val(set.spearman) - v).abs() < 1e-12),
            None => assert!(set.spearman.is_degenerate()),
        }
        match pearson_oracle(&x, &y) {
            Some(v) => assert!((val(set.pearson) - v).abs() < 1e-12),
            None => assert!(set.pearson.is_degenerate()),
        }
    }
}

#[test]
fn constant_inputs_are_degenerate() {
    let series = s(&[2.0; 5], &[1., 2., 3., 4., 5.]);
    let set = correlations(&series);
    assert!(set.kendall.is_degenerate() && set.spearman.is_degenerate() && set.pearson.is_degenerate());
    assert!(correlations(&series.swapped()).kendall.is_degenerate());
}

#[test]
fn series_validation() {
    assert!(PairedSeries::from_xy(vec![1.0], vec![1.0, 2.0]).is_err());
    assert!(PairedSeries::from_xy(vec![1.0], vec![2.0]).is_err());
    assert!(PairedSeries::from_xy(vec![1.0, f64::NAN], vec![1.0, 2.0]).is_err());
    assert!(PairedSeries::new(vec!["a".into(), "a".into()], vec![1.0, 2.0], vec![1.0, 2.0]).is_err());
}

#[test]
fn aggregate_skips_degenerate_values() {
    let a = aggregate(&[Correlation::Value(0.2), Correlation::Degenerate, Correlation::Value(0.6)]);
    assert!((a.mean.unwrap() - 0.4).abs() < 1e-15);
    assert!((a.std.unwrap() - 0.08f64.sqrt()).abs() < 1e-12);
    assert_eq!((a.count, a.degenerate), (2, 1));
    let single = aggregate(&[Correlation::Value(0.5)]);
    assert_eq!((single.mean, single.std), (Some(0.5), None));
    assert_eq!(aggregate(&[Correlation::Degenerate]).mean, None);
}

fn pairs() -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (3usize..12).prop_flat_map(|n| (prop::collection::vec(-50i32..50, n), prop::collection::vec(-50i32..50, n)))
        .prop_map(|(x, y)| (x.into_iter().map(f64::from).collect(), y.into_iter().map(f64::from).collect()))
}

proptest! {
    #[test]
    fn bounded_and_symmetric((x, y) in pairs()) {
        let a = correlations(&s(&x, &y));
        let b = correlations(&s(&y, &x));
        for (p, q) in [(a.kendall, b.kendall), (a.spearman, b.spearman), (a.pearson, b.pearson)] {
            prop_assert_eq!(p.is_degenerate(), q.is_degenerate());
            if let (Some(p), Some(q)) = (p.value(), q.value()) {
                prop_assert!((-1.0 - 1e-12..=1.0 + 1e-12).contains(&p));
                prop_assert!((p - q).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rank_statistics_ignore_monotone_maps((x, y) in pairs()) {
        let base = correlations(&s(&x, &y));
        let fx: Vec<f64> = x.iter().map(|v| (v / 10.0).exp() + v.powi(3)).collect();
        let mapped = correlations(&s(&fx, &y));
        for (p, q) in [(base.kendall, mapped.kendall), (base.spearman, mapped.spearman)] {
            match (p.value(), q.value()) {
                (Some(p), Some(q)) => prop_assert!((p - q).abs() < 1e-12),
                (None, None) => {}
                _ => prop_assert!(false, "degeneracy changed"),
            }
        }
    }
}
