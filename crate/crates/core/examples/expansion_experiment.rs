//! A reduced expansion experiment: one seed, three width factors, ten epochs.
//! Pass an output directory to also write the CSV tables.

use std::path::PathBuf;

use manifold_gain::harness::{self, load_dataset, Column, ExperimentConfig, Pick, Target};
use manifold_gain::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.seeds = vec![0];
    cfg.factors = vec![1.5, 2.0, 4.0];
    cfg.epochs = 10;
    cfg.n = 100;
    if let Some(dir) = std::env::args().nth(1) {
        let summary = harness::run_and_write(&cfg, &PathBuf::from(&dir))?;
        println!("wrote tables for {} metrics to {dir}", summary.correlations.len());
        return Ok(());
    }
    let splits = load_dataset(&cfg.data)?;
    let outcome = harness::run_expansion_experiment(&cfg, &splits)?;
    println!("seed,plan,epoch,acc,gain,M");
    for r in outcome.records.iter().filter(|r| r.manifold_metric.is_some()) {
        println!("{},{},{},{:.3},{:+.3},{:+.1}", r.seed, r.plan, r.epoch, r.acc, r.gain, r.manifold_metric.unwrap());
    }
    let report = harness::correlate(&outcome.records, Column::ManifoldMetric, Pick::Earliest, Target::BestGain);
    println!("kendall(M0, G*) per seed: {:?}", report.per_seed.iter().map(|s| s.coefficients.map(|c| c.kendall)).collect::<Vec<_>>());
    Ok(())
}
