use foacount::model::{
    count_from_probs, crnn_forward, forward_on_tape, load_model, loss_and_grads, save_model, CrnnConfig, N_CLASSES,
};
use foacount::numerics::{finite_diff_check, NumericsError, ParamStore, Tensor};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn reduced(n_frames: usize, in_channels: usize) -> CrnnConfig {
    CrnnConfig {
        n_frames,
        n_bins: 27,
        in_channels,
        conv_channels: [8, 4, 16, 8],
        lstm_hidden: 5,
        n_classes: N_CLASSES,
    }
}

fn random_input(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.gen_range(0.0..1.0))
}

#[test]
fn shape_trace_full_config() {
    for n_t in [10, 20, 30] {
        let cfg = CrnnConfig::full(n_t, 4);
        assert_eq!(cfg.reshape_dim(), 3648);
        let trace = cfg.shape_trace();
        let shapes: Vec<Vec<usize>> = trace.iter().map(|(_, s)| s.clone()).collect();
        assert_eq!(
            shapes,
            vec![
                vec![n_t, 513, 4],
                vec![n_t, 513, 64],
                vec![n_t, 513, 32],
                vec![n_t, 171, 32],
                vec![n_t, 171, 128],
                vec![n_t, 171, 64],
                vec![n_t, 57, 64],
                vec![n_t, 3648],
                vec![n_t, 40],
                vec![n_t, 6],
            ]
        );
    }
}

#[test]
fn runtime_shapes_follow_trace() {
    let cfg = reduced(6, 4);
    let params = cfg.init_params::<f64>(3);
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let fwd = forward_on_tape(&cfg, &params, random_input(&[2, 6, 27, 4], &mut rng)).unwrap();
    for ((name, shape), var) in cfg.shape_trace().iter().zip(&fwd.trace) {
        let mut want = vec![2];
        want.extend(shape);
        assert_eq!(fwd.tape.value(*var).shape(), want.as_slice(), "{name}");
    }
}

#[test]
fn full_config_forward_runs_at_513_bins() {
    let cfg = CrnnConfig::full(10, 4);
    let params = cfg.init_params::<f32>(0);
    let x = Tensor::from_fn(&[10, 513, 4], |i| (i % 7) as f32 * 0.1);
    let fwd = forward_on_tape(&cfg, &params, x).unwrap();
    let shapes: Vec<&[usize]> = fwd.trace.iter().map(|v| fwd.tape.value(*v).shape()).collect();
    assert_eq!(shapes[7], &[1, 10, 3648]);
    assert_eq!(shapes[8], &[1, 10, 40]);
    assert_eq!(shapes[9], &[1, 10, 6]);
}

#[test]
fn single_channel_differs_only_in_conv1_depth() {
    let four = CrnnConfig::full(20, 4);
    let one = CrnnConfig::full(20, 1);
    let a = four.param_specs();
    let b = one.param_specs();
    for ((na, sa, _), (nb, sb, _)) in a.iter().zip(&b) {
        assert_eq!(na, nb);
        if na == "conv1.kernel" {
            assert_eq!(sa, &vec![3, 3, 4, 64]);
            assert_eq!(sb, &vec![3, 3, 1, 64]);
        } else {
            assert_eq!(sa, sb, "{na}");
        }
    }
    assert_eq!(&four.shape_trace()[1..], &one.shape_trace()[1..]);
}

#[test]
fn zero_input_and_weights_give_uniform_probabilities() {
    let cfg = reduced(10, 4);
    let mut params = cfg.init_params::<f64>(0);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in names {
        params.get_mut(&n).unwrap().data_mut().fill(0.0);
    }
    let p = crnn_forward(&cfg, &params, Tensor::zeros(&[10, 27, 4])).unwrap();
    assert_eq!(p.shape(), &[10, 6]);
    assert!(p.data().iter().all(|&v| (v - 1.0 / 6.0).abs() < 1e-12));
}

#[test]
fn forward_rejects_wrong_shape() {
    let cfg = reduced(10, 4);
    let params = cfg.init_params::<f64>(0);
    assert!(crnn_forward(&cfg, &params, Tensor::zeros(&[10, 27, 1])).is_err());
    assert!(crnn_forward(&cfg, &params, Tensor::zeros(&[9, 27, 4])).is_err());
    assert!(crnn_forward(&cfg, &params, Tensor::zeros(&[27, 4])).is_err());
}

#[test]
fn forward_is_deterministic_and_batch_consistent() {
    let cfg = reduced(8, 4);
    let params = cfg.init_params::<f64>(5);
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let x = random_input(&[3, 8, 27, 4], &mut rng);
    let a = crnn_forward(&cfg, &params, x.clone()).unwrap();
    let b = crnn_forward(&cfg, &params, x.clone()).unwrap();
    assert_eq!(a, b);
    for i in 0..3 {
        let one = Tensor::new(&[8, 27, 4], x.data()[i * 8 * 27 * 4..(i + 1) * 8 * 27 * 4].to_vec()).unwrap();
        let p = crnn_forward(&cfg, &params, one).unwrap();
        let row = &a.data()[i * 8 * 6..(i + 1) * 8 * 6];
        for (u, v) in p.data().iter().zip(row) {
            assert!((u - v).abs() < 1e-12);
        }
    }
}

/// Relative error of reverse-mode gradients against central differences
/// for the whole network on a random window.
fn network_grad_error(seed: u64) -> f64 {
    let cfg = reduced(5, 4);
    let params = cfg.init_params::<f64>(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
    let x = random_input(&[5, 27, 4], &mut rng);
    let targets: Vec<usize> = (0..5).map(|_| rng.gen_range(0..6)).collect();
    let f = |p: &ParamStore<f64>| {
        let out = loss_and_grads(&cfg, p, x.clone(), &targets)
            .map_err(|e| NumericsError::InvalidArgument(e.to_string()))?;
        Ok((out.loss, out.grads))
    };
    let report = finite_diff_check(f, &params, 1e-5).unwrap();
    assert_eq!(report.coordinates, cfg.param_count());
    assert!(report.nonsmooth * 100 <= report.coordinates, "{report:?}");
    report.max_rel_error
}

#[test]
fn full_network_gradient_matches_finite_differences() {
    for seed in 0..10 {
        let err = network_grad_error(seed);
        assert!(err < 1e-4, "seed {seed}: max relative error {err}");
    }
}

#[test]
fn checkpoint_is_self_describing() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.ckpt");
    let cfg = reduced(10, 1);
    let params = cfg.init_params::<f32>(11);
    save_model(&path, &cfg, &params, serde_json::json!({"seed": 11})).unwrap();
    let (cfg2, params2, extra) = load_model::<f32>(&path).unwrap();
    assert_eq!(cfg2, cfg);
    assert_eq!(params2, params);
    assert_eq!(extra["seed"], 11);

    let wrong = reduced(10, 4);
    assert!(save_model(&path, &wrong, &params, serde_json::Value::Null).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn probability_rows_sum_to_one(seed in any::<u64>(), scale in 0.0f64..50.0) {
        let cfg = reduced(6, 4);
        let params = cfg.init_params::<f64>(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x55);
        let x = random_input(&[6, 27, 4], &mut rng).map(|v| v * scale);
        let p = crnn_forward(&cfg, &params, x).unwrap();
        for row in p.data().chunks(6) {
            prop_assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            prop_assert!(row.iter().all(|v| v.is_finite() && *v >= 0.0));
        }
    }

    #[test]
    fn count_reads_only_the_decision_row(
        n_t in 5usize..31,
        vals in prop::collection::vec(0.0f64..1.0, 31 * 6),
        other in prop::collection::vec(0.0f64..1.0, 31 * 6),
    ) {
        let probs = Tensor::new(&[n_t, 6], vals[..n_t * 6].to_vec()).unwrap();
        let d = n_t - 4;
        let mut mixed = other[..n_t * 6].to_vec();
        mixed[d * 6..(d + 1) * 6].copy_from_slice(&vals[d * 6..(d + 1) * 6]);
        let mixed = Tensor::new(&[n_t, 6], mixed).unwrap();
        prop_assert_eq!(count_from_probs(&probs).unwrap(), count_from_probs(&mixed).unwrap());
    }
}

#[test]
fn count_examples() {
    let mut p = Tensor::<f64>::full(&[10, 6], 0.0);
    for r in 0..10 {
        p.data_mut()[r * 6 + 5] = 1.0;
    }
    p.data_mut()[6 * 6..7 * 6].copy_from_slice(&[0.0, 0.0, 1.0, 0.0, 0.0, 0.0]);
    assert_eq!(count_from_probs(&p).unwrap(), 2);

    p.data_mut()[6 * 6..7 * 6].copy_from_slice(&[0.0, 0.4, 0.0, 0.4, 0.2, 0.0]);
    assert_eq!(count_from_probs(&p).unwrap(), 1);

    assert!(count_from_probs(&Tensor::<f64>::zeros(&[4, 6])).is_err());
}
