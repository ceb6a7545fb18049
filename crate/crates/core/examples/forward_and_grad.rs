//! Build a small CNN, run a forward pass and compare one gradient entry
//! against a central finite difference.

use manifold_gain::{build, Batch, ModelSpec, Result, Tensor};

fn main() -> Result<()> {
    let spec = ModelSpec::from_arch("C1(4)-MaxPool(2)-F1(16)", vec![3, 8, 8], 10)?;
    let (model, params) = build::<f64>(&spec, 7)?;
    println!("{} with {} parameters", spec.arch_string(), model.num_params());

    let inputs = Tensor::from_fn(vec![4, 3, 8, 8], |i| ((i * 37 % 101) as f64 / 50.0) - 1.0);
    let batch = Batch::new(inputs, vec![0, 3, 5, 9])?;
    let logits = model.forward(&params, batch.inputs())?;
    println!("logits shape {:?}", logits.shape());

    let (loss, grad) = model.loss_and_grad(&params, &batch)?;
    println!("loss {loss:.6}");
    let h = 1e-5;
    for i in [3, 50, 200, params.len() - 5] {
        let mut plus = params.clone();
        plus.flatten_mut()[i] += h;
        let mut minus = params.clone();
        minus.flatten_mut()[i] -= h;
        let fd = (model.loss(&plus, &batch)? - model.loss(&minus, &batch)?) / (2.0 * h);
        println!("d/dθ[{i}]: autodiff {:+.8}, finite difference {fd:+.8}", grad.flatten()[i]);
    }
    Ok(())
}
