//! Every proxy for an untrained and a briefly trained model on one batch.

use manifold_gain::harness::train::TrainState;
use manifold_gain::{build, compute_proxies, Batch, ModelSpec, OptimizerConfig, ProxyKind, Result, Tensor};

fn main() -> Result<()> {
    let spec = ModelSpec::from_arch("C1(4)-MaxPool(2)-F1(16)", vec![2, 4, 4], 3)?;
    let (model, init) = build::<f32>(&spec, 2)?;
    let x = Tensor::from_fn(vec![96, 2, 4, 4], |i| ((i * 97) % 41) as f32 / 20.0 - 1.0);
    let targets = (0..96).map(|r| (x.row(r)[0] > 0.0) as usize + (x.row(r)[5] > 0.3) as usize).collect();
    let data = Batch::new(x, targets)?;
    let batch = data.slice(0, 32)?;

    let zero_cost: Vec<_> = ProxyKind::ZERO_COST.to_vec();
    for s in compute_proxies(&model, &init, &batch, &zero_cost, None)? {
        println!("    init {:>9} {:>14.6}", s.kind, s.value);
    }

    let mut state = TrainState::new(model.clone(), init, OptimizerConfig::adam(0.01), 0);
    for _ in 0..20 {
        state.run_epoch(&data, &data, 32)?;
    }
    let losses = &state.history.last().unwrap().batch_losses;
    for s in compute_proxies(&model, &state.params, &batch, &ProxyKind::ALL, Some(losses))? {
        println!(" trained {:>9} {:>14.6}", s.kind, s.value);
    }
    Ok(())
}
