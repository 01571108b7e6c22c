use kdl::data::{gen_synthetic, split_indices, SyntheticKind};
use kdl::layers::{grad_check, Dense, KernelDense, Softmax};
use kdl::train::{OptimState, ScheduleConfig, ScheduleState};
use kdl::{kernel_eval, HeadConfig, KernelSpec, LayerState, Mode, Model, ModelConfig, ParamKind, RngStream, Tensor};
use proptest::prelude::*;

fn vec_pair(d: usize) -> impl Strategy<Value = (Vec<f64>, Vec<f64>)> {
    (prop::collection::vec(-2.0..2.0f64, d), prop::collection::vec(-2.0..2.0f64, d))
}

fn distance_kernels() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0.1..3.0f64).prop_map(|sigma| KernelSpec::Gaussian { sigma }),
        (0.1..3.0f64).prop_map(|alpha| KernelSpec::Laplacian { alpha }),
        (0.1..3.0f64).prop_map(|alpha| KernelSpec::Abel { alpha }),
    ]
}

fn any_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        Just(KernelSpec::Linear),
        (1u32..=3).prop_map(KernelSpec::polynomial),
        distance_kernels(),
    ]
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_symmetric(spec in any_kernel(), (x, w) in (1usize..6).prop_flat_map(vec_pair), b in 0.0..1.0f64) {
        let a = kernel_eval(&spec, &x, &w, b).unwrap();
        let c = kernel_eval(&spec, &w, &x, b).unwrap();
        prop_assert!((a - c).abs() <= 1e-12 * a.abs().max(1.0));
    }

    #[test]
    fn distance_kernels_lie_in_unit_interval(spec in distance_kernels(), (x, w) in (1usize..6).prop_flat_map(vec_pair)) {
        let k = kernel_eval(&spec, &x, &w, 0.0).unwrap();
        prop_assert!(k > 0.0 && k <= 1.0);
        prop_assert_eq!(kernel_eval(&spec, &x, &x, 0.0).unwrap(), 1.0);
    }

    #[test]
    fn degree_one_matches_dense(b in 0usize..5, d in 1usize..7, u in 1usize..5, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let w: Tensor<f64> = rng.sample_normal(0.0, 1.0, [u, d]).unwrap();
        let bias = Tensor::from_fn([u], |_| rng.uniform());
        let x: Tensor<f64> = rng.sample_normal(0.0, 1.0, [b, d]).unwrap();
        let g: Tensor<f64> = rng.sample_normal(0.0, 1.0, [b, u]).unwrap();
        let mut k = KernelDense::new(KernelSpec::polynomial(1), w.clone(), bias.clone(), true).unwrap();
        let mut dense = Dense::new(w, bias, true).unwrap();
        prop_assert_eq!(k.forward(&x, Mode::Train).unwrap(), dense.forward(&x, Mode::Train).unwrap());
        let (gk, gd) = (k.backward(&g).unwrap(), dense.backward(&g).unwrap());
        prop_assert_eq!(gk.d_input, gd.d_input);
        prop_assert_eq!(gk.d_params, gd.d_params);
    }

    #[test]
    fn kdl_gradients_match_finite_differences(spec in any_kernel(), d in 1usize..5, u in 1usize..4, seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let w = rng.sample_normal(0.0, 0.6, [u, d]).unwrap();
        let bias = Tensor::from_fn([u], |_| rng.uniform_range(0.05, 0.5));
        let x = rng.sample_normal(0.0, 0.8, [2, d]).unwrap();
        let layer = LayerState::Kdl(KernelDense::new(spec, w, bias, false).unwrap());
        let report = grad_check(&layer, &x, 1e-6).unwrap();
        prop_assert!(report.passed(), "{:?}", report);
    }

    #[test]
    fn softmax_rows_are_distributions(rows in prop::collection::vec(prop::collection::vec(-50.0..50.0f64, 4), 1..6)) {
        let refs: Vec<&[f64]> = rows.iter().map(|r| r.as_slice()).collect();
        let y = Softmax::new().forward(&Tensor::from_rows(&refs), Mode::Infer).unwrap();
        for i in 0..rows.len() {
            let r = y.outer(i);
            prop_assert!((r.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
            prop_assert!(r.iter().all(|&p| (0.0..=1.0).contains(&p)));
        }
    }

    #[test]
    fn split_is_a_partition(n in 0usize..200, a in 0.0..1.0f64, frac_b in 0.0..1.0f64, seed in any::<u64>()) {
        let b = (1.0 - a) * frac_b;
        let c = 1.0 - a - b;
        let parts = split_indices(n, (a, b, c), seed).unwrap();
        let mut all: Vec<usize> = parts.iter().flatten().copied().collect();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
        prop_assert_eq!(parts[0].len(), (n as f64 * a + 1e-9).floor() as usize);
    }

    #[test]
    fn lr_never_increases_nor_drops_below_floor(accs in prop::collection::vec(0.0..1.0f64, 1..120)) {
        let mut s = ScheduleState::new(ScheduleConfig::default());
        let mut lr = 0.001;
        for a in accs {
            let (next, _) = s.update(lr, a);
            prop_assert!(next <= lr && next >= 5e-5);
            lr = next;
        }
    }

    #[test]
    fn kdl_biases_stay_nonnegative(seed in any::<u64>()) {
        let mut rng = RngStream::new(seed);
        let mut bias = Tensor::from_fn([6], |_| rng.uniform());
        let mut opt = OptimState::new(0.05, 0.0);
        for _ in 0..50 {
            let g: Tensor<f64> = rng.sample_normal(0.0, 1.0, [6]).unwrap();
            let mut p = vec![kdl::model::ParamMut { name: "b".into(), kind: ParamKind::NonNegBias, value: &mut bias }];
            opt.step(&mut p, &[g]).unwrap();
            prop_assert!(bias.data().iter().all(|&v| v >= 0.0));
        }
    }

    #[test]
    fn synthetic_labels_are_uniform(kind in prop_oneof![Just(SyntheticKind::Blobs), Just(SyntheticKind::Spiral)],
                                    n in 1usize..40, k in 1usize..8, seed in any::<u64>()) {
        let d = gen_synthetic(kind, n, k, seed).unwrap();
        prop_assert_eq!(d.class_counts(), vec![n; k]);
    }
}

/// Closed-form parameter count of the five-block model.
fn expected_params(cfg: &ModelConfig) -> usize {
    let [kh, kw] = cfg.conv_kernel;
    let mut in_ch = cfg.input_shape[0];
    let mut total = 0;
    for &oc in &cfg.conv_channels {
        total += oc * in_ch * kh * kw + oc + 2 * oc;
        in_ch = oc;
    }
    let flat = cfg.flatten_len().unwrap();
    let (h, c) = (cfg.head.hidden_units, cfg.head.num_classes);
    total + flat * h + h + h * c + c
}

#[test]
fn parameter_count_matches_closed_form() {
    for head in [HeadConfig::fc(128, 7), HeadConfig::kdl(KernelSpec::polynomial(3), 128, 7)] {
        let cfg = ModelConfig {
            head,
            ..ModelConfig::default()
        };
        let m: Model<f32> = Model::build(&cfg).unwrap();
        assert_eq!(m.param_count(), expected_params(&cfg));
    }
}

#[test]
fn head_swap_keeps_shapes() {
    let fc: Model<f32> = Model::build(&ModelConfig {
        head: HeadConfig::fc(128, 7),
        ..ModelConfig::default()
    })
    .unwrap();
    let kdl1: Model<f32> = Model::build(&ModelConfig {
        head: HeadConfig::kdl(KernelSpec::polynomial(1), 128, 7),
        ..ModelConfig::default()
    })
    .unwrap();
    let shapes = |m: &Model<f32>| m.state().iter().map(|(n, t)| (n.clone(), t.shape().to_vec())).collect::<Vec<_>>();
    assert_eq!(shapes(&fc), shapes(&kdl1));
}

#[test]
fn he_init_variance() {
    let mut rng = RngStream::new(77);
    let fan_in = 400;
    let layer = LayerState::Dense(Dense::<f64>::he_init(fan_in, 500, true, &mut rng).unwrap());
    let params = layer.params();
    let w = params[0].2.data();
    let n = w.len() as f64;
    let mean = w.iter().sum::<f64>() / n;
    let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let want = 2.0 / fan_in as f64;
    assert!((var - want).abs() / want < 0.02, "var {var} want {want}");
}
