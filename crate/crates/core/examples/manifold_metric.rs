//! Edge ratio of a trained base model and the manifold metric of two
//! widened candidates, all on one fixed batch.

use manifold_gain::harness::config::ExperimentConfig;
use manifold_gain::harness::experiment::{expand_checked, prepare_base};
use manifold_gain::harness::load_dataset;
use manifold_gain::harness::PlanSpec;
use manifold_gain::{BatchLoss, ManifoldEstimate, MetricTerm, Result};

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train = 600;
    cfg.n = 100;
    let splits = load_dataset(&cfg.data)?;
    let base = prepare_base(&cfg, &splits, 0)?;
    let lambda = base.samples.quantile(cfg.q)?;
    let est = ManifoldEstimate::score(&base.samples, lambda, cfg.n)?;
    println!("base acc {:.3}; λ = {lambda:.4}; m = {}/{} = {:.2}", base.acc(), est.edges, est.n, est.ratio);

    for factor in [1.5, 4.0] {
        let plan = PlanSpec::Widen { layer: 0, factor };
        let cand = expand_checked(&cfg, &splits, &base, &plan)?;
        let objective = BatchLoss::new(&cand.model, &base.metric_batch);
        let term = MetricTerm::new(&cand.model, &objective, &cand.params, 0);
        let set = term.samples(cfg.n, base.chain_seeds.candidate, Default::default())?;
        let m = manifold_gain::ManifoldMetric::from_samples(&base.samples, &set, cfg.q, cfg.n)?;
        println!("{}: candidate ratio {:.2}, M = {:+.1}%", plan.id(), m.candidate_ratio, m.value);
    }
    Ok(())
}
