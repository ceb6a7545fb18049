//! Loss along the straight line between a trained MLP and a permuted copy.

use manifold_gain::harness::train::TrainState;
use manifold_gain::manifold::uniform_grid;
use manifold_gain::{apply, barrier_curve, barrier_midpoint, build, Batch, BatchLoss, ModelSpec, OptimizerConfig};
use manifold_gain::{PermutationSampler, Result, Tensor};

fn main() -> Result<()> {
    let spec = ModelSpec::from_arch("F1(16)", vec![2], 2)?;
    let (model, init) = build::<f32>(&spec, 0)?;
    // XOR-like quadrants.
    let x = Tensor::from_fn(vec![256, 2], |i| (((i * 2654435761) % 1000) as f32 / 500.0) - 1.0);
    let targets = (0..256).map(|r| usize::from((x.row(r)[0] > 0.0) != (x.row(r)[1] > 0.0))).collect();
    let data = Batch::new(x, targets)?;

    let mut state = TrainState::new(model.clone(), init, OptimizerConfig::adam(0.02), 1);
    for _ in 0..100 {
        state.run_epoch(&data, &data, 64)?;
    }
    println!("train accuracy {:.3}", model.accuracy(&state.params, &data)?);

    let objective = BatchLoss::new(&model, &data);
    let perm = PermutationSampler::new(3).sample(model.first_parameterized())?;
    let other = apply(&model, &state.params, &perm)?;
    for (alpha, dev) in barrier_curve(&objective, &state.params, &other, &uniform_grid(11))? {
        println!("alpha {alpha:.1}  deviation {dev:+.4}");
    }
    println!("midpoint barrier {:.4}", barrier_midpoint(&objective, &state.params, &other)?);
    Ok(())
}
