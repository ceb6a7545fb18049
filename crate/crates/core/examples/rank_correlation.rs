//! Kendall tau-b, Spearman and Pearson on a series with ties.

use manifold_gain::ranking::correlations;
use manifold_gain::{PairedSeries, Result};

fn main() -> Result<()> {
    let metric = vec![12.0, 30.5, 30.5, 41.0, 58.0];
    let gain = vec![0.004, 0.010, 0.021, 0.018, 0.035];
    let ids = ["x1.25", "x1.5", "x2", "x3", "x4"].map(String::from).to_vec();
    let series = PairedSeries::new(ids, metric, gain)?;
    let c = correlations(&series);
    println!("kendall {:?}\nspearman {:?}\npearson {:?}", c.kendall, c.spearman, c.pearson);

    let flat = PairedSeries::from_xy(vec![1.0; 4], vec![1.0, 2.0, 3.0, 4.0])?;
    println!("constant input -> {:?}", correlations(&flat).kendall);
    Ok(())
}
