mod common;

use std::sync::Arc;

use approx::assert_relative_eq;
use common::*;
use manifold_gain::*;
use proptest::prelude::*;
use rand::seq::index::sample;

fn dense_spec(input: usize, hidden: &[usize], classes: usize) -> ModelSpec {
    let arch = hidden.iter().enumerate().map(|(i, h)| format!("F{}({h})", i + 1)).collect::<Vec<_>>().join("-");
    ModelSpec::from_arch(&arch, vec![input], classes).unwrap()
}

#[test]
fn identity_dense_layer_passes_input_through() {
    let spec = ModelSpec::from_arch("", vec![3], 3).unwrap();
    let model = Model::new(spec).unwrap();
    let mut p = ParameterVector::<f64>::zeros(model.layout().clone());
    for i in 0..3 {
        p.segment_mut(0)[i * 3 + i] = 1.0;
    }
    let x = Tensor::new(vec![2, 3], vec![0.5, -1.0, 2.0, 3.0, 0.0, -0.25]).unwrap();
    assert_eq!(model.forward(&p, &x).unwrap(), x);
}

#[test]
fn zero_weights_give_zero_logits() {
    let model = Model::new(dense_spec(4, &[5, 3], 2)).unwrap();
    let p = ParameterVector::<f32>::zeros(model.layout().clone());
    let out = model.forward(&p, &random_tensor(vec![7, 4], 1)).unwrap();
    assert!(out.data().iter().all(|&v| v == 0.0));
}

#[test]
fn hand_set_two_layer_mlp() {
    // x -> relu(W1ᵀx + b1) -> W2ᵀh + b2, weights stored [in, out].
    let model = Model::new(dense_spec(2, &[2], 2)).unwrap();
    let flat = vec![
        1.0, -1.0, 2.0, 0.5, // W1
        0.1, -0.2, // b1
        1.0, 2.0, -1.0, 3.0, // W2
        0.0, 1.0, // b2
    ];
    let p = ParameterVector::unflatten(flat, model.layout().clone()).unwrap();
    let x = Tensor::new(vec![1, 2], vec![1.0, 2.0]).unwrap();
    // h = relu([1 + 4 + 0.1, -1 + 1 - 0.2]) = [5.1, 0]
    // y = [5.1 * 1 + 0, 5.1 * 2 + 1] = [5.1, 11.2]
    let y = model.forward(&p, &x).unwrap();
    assert_relative_eq!(y.data()[0], 5.1, epsilon = 1e-12);
    assert_relative_eq!(y.data()[1], 11.2, epsilon = 1e-12);
}

#[test]
fn cross_entropy_closed_forms() {
    let c = 10;
    assert_relative_eq!(cross_entropy(&vec![0.3f64; c], &[4], c).unwrap(), (c as f64).ln(), epsilon = 1e-12);
    let margin = 3.0f64;
    let logits = [margin, 0.0, 0.0];
    let expected = -(margin.exp() / (margin.exp() + 2.0)).ln();
    assert_relative_eq!(cross_entropy(&logits, &[0], 3).unwrap(), expected, epsilon = 1e-12);
    assert!(cross_entropy(&[1000.0f64, 0.0], &[0], 2).unwrap() < 1e-300);
    let twice: Vec<f64> = logits.iter().chain(&logits).copied().collect();
    assert_relative_eq!(cross_entropy(&twice, &[0, 0], 3).unwrap(), expected, epsilon = 1e-12);
}

fn check_gradients<T: Real>(model: &Model, params: &ParameterVector<T>, batch: &Batch<T>, eps: f64, coords: usize, seed: u64) -> f64 {
    let (_, grad) = model.loss_and_grad(params, batch).unwrap();
    let mut r = rng(seed);
    sample(&mut r, params.len(), coords)
        .into_iter()
        .map(|i| rel_err(grad.flatten()[i].to_f64_lossless(), central_difference(model, params, batch, i, T::lit(eps))))
        .fold(0.0, f64::max)
}

#[test]
fn mlp_gradient_matches_central_difference() {
    let spec = dense_spec(6, &[8, 8], 4);
    let (model, params) = build::<f64>(&spec, 3).unwrap();
    let batch = random_batch::<f64>(&[6], 16, 4, 9);
    assert!(check_gradients(&model, &params, &batch, 1e-3, 10, 1) < 1e-3);
}

#[test]
fn cnn_gradient_matches_central_difference() {
    let spec = ModelSpec::from_arch("C1(4)-C2(6)-MaxPool(2)-F1(12)", vec![3, 6, 6], 5).unwrap();
    let (model, params) = build::<f64>(&spec, 4).unwrap();
    let batch = random_batch::<f64>(&[3, 6, 6], 6, 5, 2);
    assert!(check_gradients(&model, &params, &batch, 1e-3, 25, 2) < 1e-3);
}

#[test]
fn f32_gradient_matches_f64_gradient() {
    let spec = dense_spec(5, &[7, 7], 3);
    let (model, p64) = build::<f64>(&spec, 8).unwrap();
    let b64 = random_batch::<f64>(&[5], 12, 3, 3);
    let g64 = model.grad(&p64, &b64).unwrap();
    let g32 = model.grad(&p64.cast::<f32>(), &b64.cast::<f32>()).unwrap();
    let scale = g64.norm();
    for (a, b) in g32.flatten().iter().zip(g64.flatten()) {
        assert!((f64::from(*a) - b).abs() <= 1e-5 * scale);
    }
}

#[test]
fn batch_gradient_is_mean_of_example_gradients() {
    let spec = ModelSpec::from_arch("C1(3)-F1(5)", vec![2, 4, 4], 3).unwrap();
    let (model, params) = build::<f64>(&spec, 5).unwrap();
    let batch = random_batch::<f64>(&[2, 4, 4], 5, 3, 6);
    let full = model.grad(&params, &batch).unwrap();
    let mut acc = ParameterVector::zeros(params.layout().clone());
    for i in 0..5 {
        acc.add_scaled(&model.grad(&params, &batch.slice(i, i + 1).unwrap()).unwrap(), 0.2).unwrap();
    }
    for (a, b) in full.flatten().iter().zip(acc.flatten()) {
        assert_relative_eq!(*a, *b, epsilon = 1e-12, max_relative = 1e-10);
    }
}

#[test]
fn gradient_vanishes_at_quadratic_minimum() {
    let obj = Scalar {
        f: |w: f64| (w - 2.0).powi(2),
        df: |w: f64| 2.0 * (w - 2.0),
    };
    assert_eq!(obj.grad(&vector(&[2.0])).unwrap().flatten(), &[0.0]);
}

#[test]
fn hvp_on_quadratic_matches_dense_product() {
    let q = Quadratic::random_spd(6, 11);
    let w = vector(&[0.3, -0.1, 0.7, 0.2, -0.5, 0.9]);
    let v = vector(&[1.0, 0.5, -0.25, 0.0, 2.0, -1.0]);
    let hv = hvp(&q, &w, &v).unwrap();
    for (a, b) in hv.flatten().iter().zip(q.matvec(v.flatten())) {
        assert_relative_eq!(*a, b, max_relative = 1e-6, epsilon = 1e-9);
    }
    let zero = vector(&[0.0; 6]);
    assert!(hvp(&q, &w, &zero).unwrap().flatten().iter().all(|&x| x == 0.0));
}

#[test]
fn hvp_is_symmetric_on_a_tiny_mlp() {
    let (model, params) = build::<f64>(&dense_spec(4, &[6], 3), 2).unwrap();
    let batch = random_batch::<f64>(&[4], 10, 3, 4);
    let obj = BatchLoss::new(&model, &batch);
    let mut r = rng(3);
    let mut dir = || {
        use rand::Rng;
        ParameterVector::unflatten((0..params.len()).map(|_| r.random_range(-1.0..1.0)).collect(), params.layout().clone()).unwrap()
    };
    let (u, v) = (dir(), dir());
    let a = v.dot(&hvp(&obj, &params, &u).unwrap()).unwrap();
    let b = u.dot(&hvp(&obj, &params, &v).unwrap()).unwrap();
    assert!(rel_err(a, b) < 1e-3, "{a} vs {b}");
}

#[test]
fn sgd_step() {
    let mut p = vector(&[1.0]);
    let mut s = OptimizerState::new(OptimizerConfig::sgd(0.1), 1);
    s.apply(&mut p, &vector(&[0.5])).unwrap();
    assert_relative_eq!(p.flatten()[0], 0.95, epsilon = 1e-15);
}

#[test]
fn adam_first_step_matches_hand_unrolled_recurrence() {
    let cfg = OptimizerConfig::adam(0.01);
    let (g, w0) = (1.0f64, 0.5f64);
    let m = (1.0 - cfg.beta1) * g;
    let v = (1.0 - cfg.beta2) * g * g;
    let m_hat = m / (1.0 - cfg.beta1);
    let v_hat = v / (1.0 - cfg.beta2);
    let expected = w0 - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    let mut p = vector(&[w0]);
    OptimizerState::new(cfg, 1).apply(&mut p, &vector(&[g])).unwrap();
    assert_relative_eq!(p.flatten()[0], expected, epsilon = 1e-15);
    assert_relative_eq!(w0 - p.flatten()[0], cfg.lr * g / (g.abs() + cfg.eps), epsilon = 1e-15);
}

#[test]
fn adamw_decay_is_decoupled() {
    let adam = OptimizerConfig { kind: OptimizerKind::Adam, weight_decay: 0.0, ..OptimizerConfig::default() };
    let adamw = OptimizerConfig { kind: OptimizerKind::AdamW, weight_decay: 0.1, ..adam };
    let (mut a, mut b) = (vector(&[2.0, -3.0]), vector(&[2.0, -3.0]));
    let g = vector(&[0.3, -0.7]);
    OptimizerState::new(adam, 2).apply(&mut a, &g).unwrap();
    OptimizerState::new(adamw, 2).apply(&mut b, &g).unwrap();
    for (i, w) in [2.0, -3.0].iter().enumerate() {
        assert_relative_eq!(a.flatten()[i] - b.flatten()[i], adamw.lr * adamw.weight_decay * w, epsilon = 1e-15);
    }
}

#[test]
fn lerp_endpoints_and_midpoint() {
    let a = vector(&[2.0, 0.0]);
    let b = vector(&[0.0, 2.0]);
    assert_eq!(lerp(&a, &b, 1.0).unwrap(), a);
    assert_eq!(lerp(&a, &b, 0.0).unwrap(), b);
    assert_eq!(lerp(&a, &b, 0.5).unwrap().flatten(), &[1.0, 1.0]);
}

#[test]
fn cifar_cnn_parameter_count_from_shape_arithmetic() {
    let spec = ModelSpec::from_arch("C1(8)-C2(32)-MaxPool(2)-F1(256)", vec![3, 32, 32], 10).unwrap();
    let model = Model::new(spec).unwrap();
    let conv = |cin: usize, cout: usize| cout * cin * 9 + cout;
    let dense = |i: usize, o: usize| i * o + o;
    let expected = conv(3, 8) + conv(8, 32) + dense(32 * 16 * 16, 256) + dense(256, 10);
    assert_eq!(model.num_params(), expected);
}

#[test]
fn mlp_segment_shapes() {
    let model = Model::new(ModelSpec::from_arch("F(20)", vec![3072], 10).unwrap()).unwrap();
    let shapes: Vec<_> = model.layout().segments().iter().map(|s| s.shape.clone()).collect();
    assert_eq!(shapes, vec![vec![3072, 20], vec![20], vec![20, 10], vec![10]]);
}

#[test]
fn same_seed_same_parameters() {
    let spec = ModelSpec::from_arch("C1(4)-F1(8)", vec![3, 8, 8], 10).unwrap();
    let (_, a) = build::<f32>(&spec, 42).unwrap();
    let (_, b) = build::<f32>(&spec, 42).unwrap();
    let (_, c) = build::<f32>(&spec, 43).unwrap();
    assert_eq!(a.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>(), b.flatten().iter().map(|x| x.to_bits()).collect::<Vec<_>>());
    assert_ne!(a, c);
}

#[test]
fn sentinel_lands_in_the_named_segment() {
    let model = Model::new(dense_spec(3, &[4], 2)).unwrap();
    let layout = model.layout();
    let idx = layout.index_of("layer2.weight").unwrap();
    let offset: usize = layout.segments()[..idx].iter().map(|s| s.len).sum();
    let mut flat = vec![0.0f32; layout.total_len()];
    flat[offset + 1] = 7.0;
    let p = ParameterVector::unflatten(flat, Arc::clone(layout)).unwrap();
    assert_eq!(p.segment(idx)[1], 7.0);
    assert_eq!(p.flatten().iter().filter(|&&x| x == 7.0).count(), 1);
}

#[test]
fn accuracy_rules() {
    let model = Model::new(ModelSpec::from_arch("", vec![10], 10).unwrap()).unwrap();
    let mut p = ParameterVector::<f64>::zeros(model.layout().clone());
    for i in 0..10 {
        p.segment_mut(0)[i * 10 + i] = 1.0;
    }
    let x = Tensor::from_fn(vec![10, 10], |k| if k / 10 == k % 10 { 1.0 } else { 0.0 });
    let data = Batch::new(x.clone(), (0..10).collect()).unwrap();
    assert_eq!(model.accuracy(&p, &data).unwrap(), 1.0);
    // Constant logits: ties go to class 0.
    let zero = ParameterVector::<f64>::zeros(model.layout().clone());
    assert_eq!(model.accuracy(&zero, &data).unwrap(), 0.1);
}

#[test]
fn accuracy_matches_per_example_loop() {
    let (model, params) = build::<f32>(&dense_spec(5, &[9], 4), 6).unwrap();
    let data = random_batch::<f32>(&[5], 700, 4, 7);
    let mut correct = 0;
    for i in 0..data.len() {
        let row = data.slice(i, i + 1).unwrap();
        let logits = model.forward(&params, row.inputs()).unwrap();
        let mut best = 0;
        for j in 1..4 {
            if logits.data()[j] > logits.data()[best] {
                best = j;
            }
        }
        correct += usize::from(best == data.targets()[i]);
    }
    assert_eq!(model.accuracy(&params, &data).unwrap(), correct as f64 / 700.0);
}

#[test]
fn shape_errors_are_structured() {
    let (model, params) = build::<f32>(&dense_spec(5, &[4], 3), 0).unwrap();
    let err = model.forward(&params, &random_tensor(vec![2, 6], 0)).unwrap_err();
    assert!(matches!(err, Error::Shape { .. }), "{err}");
    assert!(Batch::<f32>::new(random_tensor(vec![2, 5], 0), vec![0]).is_err());
}

proptest! {
    #[test]
    fn flatten_roundtrip(len in 1usize..200, seed in any::<u64>()) {
        let t = random_tensor::<f32>(vec![len], seed);
        let p = ParameterVector::unflatten(t.data().to_vec(), flat_layout(len)).unwrap();
        prop_assert_eq!(p.flatten().len(), p.layout().total_len());
        let back = ParameterVector::unflatten(p.flatten().to_vec(), p.layout().clone()).unwrap();
        prop_assert_eq!(back, p);
    }

    #[test]
    fn forward_shape_and_finiteness(h in 1usize..12, rows in 1usize..9, seed in 0u64..1000) {
        let (model, params) = build::<f32>(&dense_spec(4, &[h], 3), seed).unwrap();
        let out = model.forward(&params, &random_tensor(vec![rows, 4], seed)).unwrap();
        prop_assert_eq!(out.shape(), &[rows, 3]);
        prop_assert!(out.is_finite());
    }

    #[test]
    fn lerp_stays_on_segment(alpha in 0.0f64..=1.0, seed in any::<u64>()) {
        let a = random_tensor::<f64>(vec![5], seed);
        let b = random_tensor::<f64>(vec![5], seed.wrapping_add(1));
        let pa = ParameterVector::unflatten(a.data().to_vec(), flat_layout(5)).unwrap();
        let pb = ParameterVector::unflatten(b.data().to_vec(), flat_layout(5)).unwrap();
        let m = lerp(&pa, &pb, alpha).unwrap();
        for i in 0..5 {
            let (lo, hi) = (a.data()[i].min(b.data()[i]), a.data()[i].max(b.data()[i]));
            prop_assert!(m.flatten()[i] >= lo - 1e-12 && m.flatten()[i] <= hi + 1e-12);
        }
    }
}
