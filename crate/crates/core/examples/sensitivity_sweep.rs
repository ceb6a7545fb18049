//! (q, n) grid of the manifold metric, sliced from one long chain per model.

use manifold_gain::harness::experiment::{candidate_samples, expand_checked, prepare_base_from, train_base};
use manifold_gain::harness::{load_dataset, ExperimentConfig, PlanSpec};
use manifold_gain::manifold::sweep_from_samples;
use manifold_gain::Result;

fn main() -> Result<()> {
    let mut cfg = ExperimentConfig::default();
    cfg.data.train = 600;
    let (qs, ns) = ([0.1, 0.2, 0.4], [50, 100, 200]);
    let splits = load_dataset(&cfg.data)?;
    let (model, outcome) = train_base(&cfg, &splits, 0)?;
    let base = prepare_base_from(&cfg, &splits, 0, model, outcome, 200)?;
    let mut chains = Vec::new();
    for factor in [1.5, 3.0] {
        let plan = PlanSpec::Widen { layer: 0, factor };
        let cand = expand_checked(&cfg, &splits, &base, &plan)?;
        chains.push((plan.id(), candidate_samples(&cfg, &base, &cand.model, &cand.params, 200)?));
    }
    println!("q,n,plan,M");
    for cell in sweep_from_samples(&base.samples, &chains, &qs, &ns)? {
        println!("{},{},{},{:+.1}", cell.q, cell.n, cell.plan, cell.metric.value);
    }
    Ok(())
}
