//! Permuting hidden units (and the matching inputs of the next layer) leaves
//! the loss unchanged while moving the parameters.

use manifold_gain::{apply, build, Batch, ModelSpec, PermutationSampler, Result, Tensor};

fn main() -> Result<()> {
    let spec = ModelSpec::from_arch("F1(20)-F2(20)", vec![12], 4)?;
    let (model, params) = build::<f32>(&spec, 5)?;
    let x = Tensor::from_fn(vec![64, 12], |i| ((i * 31) % 17) as f32 / 8.0 - 1.0);
    let batch = Batch::new(x, (0..64).map(|i| i % 4).collect())?;
    let base = model.loss(&params, &batch)?;

    let layer = model.first_parameterized();
    let mut sampler = PermutationSampler::new(11);
    let mut worst = 0.0f32;
    for _ in 0..200 {
        let perm = sampler.sample(layer)?;
        let moved = apply(&model, &params, &perm)?;
        worst = worst.max((model.loss(&moved, &batch)? - base).abs());
    }
    let perm = sampler.sample(layer)?;
    println!("one sample: {} transpositions -> {:?}", perm.provenance().len(), perm.mapping());
    println!("{} distinct permutations, max |ΔL| = {worst:.2e}", sampler.drawn());
    Ok(())
}
