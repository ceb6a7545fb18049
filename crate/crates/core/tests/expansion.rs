mod common;

use approx::assert_relative_eq;
use common::*;
use manifold_gain::permute::transpositions_for;
use manifold_gain::*;
use proptest::prelude::*;

fn max_logit_diff<T: Real>(a: (&Model, &ParameterVector<T>), b: (&Model, &ParameterVector<T>), x: &Tensor<T>) -> f64 {
    a.0.forward(a.1, x).unwrap().max_abs_diff(&b.0.forward(b.1, x).unwrap()).unwrap().to_f64_lossless()
}

#[test]
fn dense_width_two_to_four_halves_outgoing_rows() {
    let spec = ModelSpec::from_arch("F1(2)", vec![3], 2).unwrap();
    let (model, params) = build::<f64>(&spec, 1).unwrap();
    let (wide, wp, maps) = (0..)
        .map(|seed| widen_with_mappings(&model, &params, &WidenPlan::new(0, 4, seed)).unwrap())
        .find(|(_, _, m)| m[0].replicas.iter().all(|&r| r == 2))
        .unwrap();
    let next = model.layout().index_of("layer2.weight").unwrap();
    let old = params.segment(next);
    let new = wp.segment(wide.layout().index_of("layer2.weight").unwrap());
    for (u, &s) in maps[0].source.iter().enumerate() {
        for o in 0..2 {
            assert_relative_eq!(new[u * 2 + o], old[s * 2 + o] / 2.0, epsilon = 1e-15);
        }
    }
    let x = random_tensor::<f64>(vec![100, 3], 5);
    assert!(max_logit_diff((&model, &params), (&wide, &wp), &x) < 1e-12);
}

#[test]
fn hand_computed_widening_of_a_one_two_one_network() {
    let spec = ModelSpec::from_arch("F1(2)", vec![1], 2).unwrap();
    let model = Model::new(spec).unwrap();
    // w1 = [1, -2], b1 = [0.5, 1], W2 = [[3, 0], [1, -1]], b2 = [0, 0.25]
    let flat = vec![1.0, -2.0, 0.5, 1.0, 3.0, 0.0, 1.0, -1.0, 0.0, 0.25];
    let params = ParameterVector::unflatten(flat, model.layout().clone()).unwrap();
    let (wide, wp) = widen(&model, &params, &WidenPlan::new(0, 3, 7)).unwrap();
    // x = 0.5: h = relu([1.0, 0.0]) = [1, 0]; y = [3 + 0, 0 + 0.25].
    let x = Tensor::new(vec![1, 1], vec![0.5]).unwrap();
    let y = wide.forward(&wp, &x).unwrap();
    assert_relative_eq!(y.data()[0], 3.0, epsilon = 1e-12);
    assert_relative_eq!(y.data()[1], 0.25, epsilon = 1e-12);
    // x = -1: h = relu([-0.5, 3.0]) = [0, 3]; y = [3, -3 + 0.25].
    let x = Tensor::new(vec![1, 1], vec![-1.0]).unwrap();
    let y = wide.forward(&wp, &x).unwrap();
    assert_relative_eq!(y.data()[0], 3.0, epsilon = 1e-12);
    assert_relative_eq!(y.data()[1], -2.75, epsilon = 1e-12);
}

#[test]
fn cifar_first_layer_factors_give_the_expected_widths() {
    let spec = ModelSpec::from_arch("C1(8)-C2(32)-MaxPool(2)-F1(256)", vec![3, 32, 32], 10).unwrap();
    let model = Model::new(spec).unwrap();
    let widths: Vec<usize> = [1.25, 1.5, 2.0, 3.0, 4.0]
        .iter()
        .map(|&f| WidenPlan::by_factor(&model, 0, f, 0).unwrap().targets[0].1)
        .collect();
    assert_eq!(widths, vec![10, 12, 16, 24, 32]);
}

#[test]
fn conv_widening_preserves_logits_and_accuracy() {
    let spec = ModelSpec::from_arch("C1(8)-C2(16)-MaxPool(2)-F1(32)", vec![3, 8, 8], 10).unwrap();
    let (model, params) = build::<f32>(&spec, 3).unwrap();
    let data = random_batch::<f32>(&[3, 8, 8], 100, 10, 8);
    for f in [1.25, 1.5, 2.0, 3.0, 4.0] {
        let plan = WidenPlan::by_factor(&model, 0, f, 9).unwrap().with_split_noise(0.1);
        let (wide, wp) = widen(&model, &params, &plan).unwrap();
        assert!(max_logit_diff((&model, &params), (&wide, &wp), data.inputs()) < 1e-5);
        assert_eq!(model.predict(&params, data.inputs()).unwrap(), wide.predict(&wp, data.inputs()).unwrap());
    }
}

#[test]
fn noisy_incoming_weights_break_preservation_but_split_noise_does_not() {
    let spec = ModelSpec::from_arch("F1(6)", vec![4], 3).unwrap();
    let (model, params) = build::<f64>(&spec, 2).unwrap();
    let x = random_tensor::<f64>(vec![50, 4], 1);
    let mut plan = WidenPlan::new(0, 12, 3).with_split_noise(0.5);
    let (w, p) = widen(&model, &params, &plan).unwrap();
    assert!(max_logit_diff((&model, &params), (&w, &p), &x) < 1e-12);
    plan.noise_scale = 0.1;
    let (w, p) = widen(&model, &params, &plan).unwrap();
    assert!(max_logit_diff((&model, &params), (&w, &p), &x) > 1e-6);
}

#[test]
fn identity_layer_insertion() {
    let spec = ModelSpec::from_arch("C1(6)-C2(6)-MaxPool(2)-F1(10)", vec![2, 6, 6], 4).unwrap();
    let (model, params) = build::<f32>(&spec, 5).unwrap();
    let x = random_tensor::<f32>(vec![20, 2, 6, 6], 2);
    let (one, p1) = deepen(&model, &params, 1).unwrap();
    assert!(max_logit_diff((&model, &params), (&one, &p1), &x) < 1e-5);
    let (two, p2) = deepen(&one, &p1, 1).unwrap();
    let (two_b, p2b) = deepen(&one, &p1, 3).unwrap();
    assert_eq!(two.spec(), two_b.spec());
    assert_eq!(p2, p2b);
    assert!(max_logit_diff((&model, &params), (&two, &p2), &x) < 1e-5);
    assert!(deepen(&model, &params, 0).is_err());
}

#[test]
fn deepening_between_equal_width_conv_layers_of_a_deeper_cnn() {
    let spec = ModelSpec::from_arch("C1(4)-C2(8)-C3(8)-MaxPool(2)-F1(16)", vec![3, 8, 8], 100).unwrap();
    let (model, params) = build::<f32>(&spec, 1).unwrap();
    let (deep, dp) = deepen(&model, &params, 3).unwrap();
    assert_eq!(deep.spec().arch_string(), "C1(4)-C2(8)-C3(8)-C4(8)-MaxPool(2)-F1(16)");
    let x = random_tensor::<f32>(vec![10, 3, 8, 8], 3);
    assert!(max_logit_diff((&model, &params), (&deep, &dp), &x) < 1e-5);
    // C1(4) -> C2(8) changes width, so no identity fits there.
    assert!(deepen(&model, &params, 1).is_err());
}

#[test]
fn transposition_counts() {
    assert_eq!(transpositions_for(512), 9);
    assert_eq!(transpositions_for(4), 2);
    assert_eq!(transpositions_for(20), 5);
    let handle = LayerHandle { index: 0, kind: ParamKind::Dense, width: 512 };
    let p = PermutationSampler::new(0).sample(handle).unwrap();
    assert_eq!(p.provenance().len(), 9);
}

#[test]
fn sampler_yields_distinct_mappings() {
    let handle = LayerHandle { index: 0, kind: ParamKind::Dense, width: 20 };
    let mut s = PermutationSampler::new(3);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..1000 {
        let p = s.sample(handle).unwrap();
        assert!(!p.is_identity());
        assert!(seen.insert(p.mapping().to_vec()));
        let rebuilt = Permutation::from_transpositions(handle, p.provenance().to_vec()).unwrap();
        assert_eq!(rebuilt.mapping(), p.mapping());
    }
    assert_eq!(s.drawn(), 1000);
}

#[test]
fn sampler_exhaustion_is_reported() {
    let handle = LayerHandle { index: 0, kind: ParamKind::Dense, width: 4 };
    let mut s = PermutationSampler::new(1).with_max_attempts(2000);
    let err = (0..100).map(|_| s.sample(handle)).find_map(|r| r.err()).unwrap();
    assert!(matches!(err, Error::SamplerExhausted { width: 4, .. }), "{err}");
}

#[test]
fn permutations_preserve_the_function_and_invert_exactly() {
    let spec = ModelSpec::from_arch("C1(6)-MaxPool(2)-F1(20)", vec![2, 6, 6], 5).unwrap();
    let (model, params) = build::<f32>(&spec, 7).unwrap();
    let x = random_tensor::<f32>(vec![100, 2, 6, 6], 4);
    for layer in model.parameterized_layers().into_iter().take(2) {
        let ident = apply(&model, &params, &Permutation::identity(layer)).unwrap();
        assert_eq!(ident, params);
        let mut s = PermutationSampler::new(layer.index as u64);
        for _ in 0..20 {
            let perm = s.sample(layer).unwrap();
            let moved = apply(&model, &params, &perm).unwrap();
            assert_ne!(moved, params);
            assert!(max_logit_diff((&model, &params), (&model, &moved), &x) < 1e-5);
            let back = apply(&model, &moved, &perm.inverse()).unwrap();
            assert_eq!(back.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>(), params.flatten().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        }
    }
    let last = model.parameterized_layers().last().copied().unwrap();
    assert!(apply(&model, &params, &Permutation::identity(last)).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn widening_any_hidden_layer_preserves_logits(
        h1 in 2usize..10, h2 in 2usize..10, extra in 0usize..12, which in 0usize..2, seed in any::<u64>(), noise in 0.0f64..1.0,
    ) {
        let spec = ModelSpec::from_arch(&format!("F1({h1})-F2({h2})"), vec![5], 4).unwrap();
        let (model, params) = build::<f64>(&spec, seed).unwrap();
        let layer = 2 * which;
        let width = model.layer_handle(layer).unwrap().width;
        let plan = WidenPlan::new(layer, width + extra, seed).with_split_noise(noise);
        let (wide, wp, maps) = widen_with_mappings(&model, &params, &plan).unwrap();
        prop_assert_eq!(wide.layer_handle(layer).unwrap().width, width + extra);
        prop_assert_eq!(&maps[0].source[..width], &(0..width).collect::<Vec<_>>()[..]);
        let x = random_tensor::<f64>(vec![30, 5], seed ^ 1);
        prop_assert!(max_logit_diff((&model, &params), (&wide, &wp), &x) < 1e-9);
    }

    #[test]
    fn composed_transpositions_are_bijections(width in 4usize..64, seed in any::<u64>()) {
        let handle = LayerHandle { index: 0, kind: ParamKind::Dense, width };
        let p = PermutationSampler::new(seed).sample(handle).unwrap();
        let mut sorted = p.mapping().to_vec();
        sorted.sort_unstable();
        prop_assert_eq!(sorted, (0..width).collect::<Vec<_>>());
        prop_assert_eq!(p.provenance().len(), transpositions_for(width));
        prop_assert!(Permutation::from_mapping(handle, p.mapping().to_vec()).is_ok());
    }

    #[test]
    fn permutation_invariance_of_loss(h in 4usize..24, seed in 0u64..500) {
        let spec = ModelSpec::from_arch(&format!("F1({h})"), vec![6], 3).unwrap();
        let (model, params) = build::<f32>(&spec, seed).unwrap();
        let batch = random_batch::<f32>(&[6], 32, 3, seed);
        let perm = PermutationSampler::new(seed).sample(model.first_parameterized()).unwrap();
        let moved = apply(&model, &params, &perm).unwrap();
        let d = (model.loss(&params, &batch).unwrap() - model.loss(&moved, &batch).unwrap()).abs();
        prop_assert!(d < 1e-5);
    }
}
