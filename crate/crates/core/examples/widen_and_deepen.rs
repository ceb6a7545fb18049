//! Net2Net-style expansion: widen the first conv layer and insert an identity
//! layer, checking that the logits do not change.

use manifold_gain::{build, deepen, widen, ModelSpec, Result, Tensor, WidenPlan};

fn main() -> Result<()> {
    let spec = ModelSpec::from_arch("C1(8)-C2(8)-MaxPool(2)-F1(32)", vec![3, 8, 8], 10)?;
    let (model, params) = build::<f32>(&spec, 1)?;
    let x = Tensor::from_fn(vec![16, 3, 8, 8], |i| ((i * 7919) % 113) as f32 / 56.0 - 1.0);
    let before = model.forward(&params, &x)?;

    for factor in [1.25, 2.0, 4.0] {
        let plan = WidenPlan::by_factor(&model, 0, factor, 3)?.with_split_noise(0.1);
        let (wide, wide_params) = widen(&model, &params, &plan)?;
        let diff = before.max_abs_diff(&wide.forward(&wide_params, &x)?)?;
        println!("x{factor}: {} -> {}, max logit diff {diff:.2e}", spec.arch_string(), wide.spec().arch_string());
    }

    // Layer 1 is the ReLU after the first conv; both neighbours have 8 channels.
    let (deep, deep_params) = deepen(&model, &params, 1)?;
    let diff = before.max_abs_diff(&deep.forward(&deep_params, &x)?)?;
    println!("deepened: {}, max logit diff {diff:.2e}", deep.spec().arch_string());
    Ok(())
}
