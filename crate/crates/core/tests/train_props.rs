use foacount::datagen::LabeledExample;
use foacount::dsp::Spectrogram;
use foacount::model::{loss_and_grads, CrnnConfig, N_CLASSES};
use foacount::numerics::AdamConfig;
use foacount::train::{
    assemble_batch, epoch_windows, evaluate_val_accuracy, make_batches, read_train_log, tiled_predictions, train,
    EpochRecord, StopReason, TrainConfig, TrainError, TrainPaths,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const BINS: usize = 27;

fn model(n_frames: usize) -> CrnnConfig {
    CrnnConfig {
        n_frames,
        n_bins: BINS,
        in_channels: 4,
        conv_channels: [8, 4, 16, 8],
        lstm_hidden: 8,
        n_classes: N_CLASSES,
    }
}

/// Frames whose label is readable from the features: class `c` lights up
/// bins `4c..4c+4`, on top of weak noise.
fn learnable(id: &str, frames: usize, rng: &mut ChaCha8Rng) -> LabeledExample {
    let mut labels = Vec::with_capacity(frames);
    let mut values = vec![0f32; frames * BINS * 4];
    let mut c = rng.gen_range(0..6u8);
    for t in 0..frames {
        if rng.gen_bool(0.2) {
            c = rng.gen_range(0..6);
        }
        labels.push(c);
        for b in 0..BINS {
            for ch in 0..4 {
                let on = b / 4 == c as usize;
                values[(t * BINS + b) * 4 + ch] = if on { 1.0 } else { 0.0 } + rng.gen_range(0.0..0.1);
            }
        }
    }
    LabeledExample {
        id: id.to_string(),
        features: Spectrogram {
            frames,
            bins: BINS,
            channels: 4,
            values,
        },
        labels,
        n_sp: 0,
    }
}

fn toy_set(prefix: &str, n: usize, frames: usize, seed: u64) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| learnable(&format!("{prefix}{i}"), frames, &mut rng)).collect()
}

fn quick_cfg(n_frames: usize) -> TrainConfig {
    TrainConfig {
        adam: AdamConfig {
            lr: 1e-2,
            ..AdamConfig::default()
        },
        patience: 5,
        max_epochs: 8,
        batch_size: 16,
        seed: 3,
        n_frames,
        channels: 4,
        target_train_accuracy: None,
    }
}

#[test]
fn windows_carry_their_label_slices() {
    let set = toy_set("w", 3, 40, 1);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let windows = epoch_windows(&set, 10, &mut rng);
    let batch = assemble_batch(&set, &windows, 10);
    assert_eq!(batch.input.shape(), &[windows.len(), 10, BINS, 4]);
    assert_eq!(batch.labels.len(), windows.len() * 10);
    let per = 10 * BINS * 4;
    for (i, w) in windows.iter().enumerate() {
        let ex = &set[w.example];
        assert!(w.offset + 10 <= ex.features.frames);
        let want: Vec<usize> = (w.offset..w.offset + 10).map(|f| ex.labels[f] as usize).collect();
        assert_eq!(&batch.labels[i * 10..(i + 1) * 10], want.as_slice());
        assert_eq!(&batch.input.data()[i * per..(i + 1) * per], ex.features.window(w.offset, 10));
        assert_eq!(batch.input.data()[i * per], ex.features.at(w.offset, 0, 0));
    }
}

#[test]
fn every_example_contributes_each_epoch() {
    let mut set = toy_set("e", 5, 23, 2);
    set[3] = learnable("short", 7, &mut ChaCha8Rng::seed_from_u64(9));
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let windows = epoch_windows(&set, 10, &mut rng);
    let mut per_example = [0usize; 5];
    for w in &windows {
        per_example[w.example] += 1;
    }
    // ⌈23/10⌉ = 3 windows each; the 7-frame example is skipped
    assert_eq!(per_example, [3, 3, 3, 0, 3]);

    let batches: Vec<_> = make_batches(&set, 10, 5, &mut rng).collect();
    assert_eq!(batches.iter().map(|b| b.windows.len()).collect::<Vec<_>>(), vec![5, 5, 2]);
}

#[test]
fn validation_accuracy_reference_predictors() {
    let cfg = model(10);
    let mut params = cfg.init_params::<f32>(0);
    let names: Vec<String> = params.names().map(str::to_string).collect();
    for n in &names {
        params.get_mut(n).unwrap().data_mut().fill(0.0);
    }
    params.get_mut("dense.bias").unwrap().data_mut()[0] = 5.0;
    let mut zeros = toy_set("z", 4, 35, 3);
    for ex in &mut zeros {
        ex.labels.fill(0);
    }
    // constant class-0 predictor on an all-0 set is also a perfect predictor
    assert_eq!(evaluate_val_accuracy(&cfg, &params, &zeros).unwrap(), 1.0);
    let pairs = tiled_predictions(&cfg, &params, &zeros, 64).unwrap();
    assert_eq!(pairs.len(), 4 * 30);

    // predictions independent of uniformly drawn labels score 1/6 on average
    let mut mean = 0.0;
    for seed in 0..20 {
        let p = cfg.init_params::<f32>(100 + seed);
        let mut set = toy_set("u", 6, 100, 200 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(300 + seed);
        for ex in &mut set {
            ex.labels.iter_mut().for_each(|l| *l = rng.gen_range(0..6));
        }
        mean += evaluate_val_accuracy(&cfg, &p, &set).unwrap() / 20.0;
    }
    // 12000 frames: standard error of the mean ≈ 0.0034
    assert!((mean - 1.0 / 6.0).abs() < 0.015, "{mean}");

    assert!(matches!(evaluate_val_accuracy(&cfg, &params, &[]), Err(TrainError::EmptySet(_))));
}

#[test]
fn loss_decreases_over_first_steps() {
    let cfg = model(10);
    let set = toy_set("l", 8, 10, 5);
    let windows = epoch_windows(&set, 10, &mut ChaCha8Rng::seed_from_u64(0));
    let batch = assemble_batch(&set, &windows, 10);
    let mut ok = 0;
    for seed in 0..5 {
        let mut params = cfg.init_params::<f32>(seed);
        let mut losses = Vec::new();
        for _ in 0..6 {
            let out = loss_and_grads(&cfg, &params, batch.input.clone(), &batch.labels).unwrap();
            losses.push(out.loss);
            params.adam_step(&out.grads, &AdamConfig::default()).unwrap();
        }
        if losses.windows(2).all(|w| w[1] < w[0]) {
            ok += 1;
        }
    }
    assert!(ok >= 4, "only {ok} of 5 seeds decreased monotonically");
}

#[test]
fn overfits_twenty_windows() {
    let cfg = model(10);
    let set = toy_set("o", 20, 10, 6);
    let val = toy_set("v", 4, 10, 7);
    let tc = TrainConfig {
        patience: 299,
        max_epochs: 300,
        batch_size: 20,
        target_train_accuracy: Some(0.95),
        ..TrainConfig::default()
    };
    let out = train(&cfg, &set, &val, &tc, None).unwrap();
    assert_eq!(out.log.stop, StopReason::TargetTrainAccuracy);
    let pairs = tiled_predictions(&cfg, &out.last, &set, 64).unwrap();
    let acc = pairs.iter().filter(|(l, p)| l == p).count() as f64 / pairs.len() as f64;
    assert!(acc > 0.95, "train accuracy {acc} after {} epochs", out.log.epochs.len());
}

fn without_wall_time(mut r: Vec<EpochRecord>) -> Vec<EpochRecord> {
    r.iter_mut().for_each(|e| e.wall_time_s = 0.0);
    r
}

#[test]
fn fixed_seed_is_reproducible_and_best_is_best() {
    let cfg = model(10);
    let tr = toy_set("t", 6, 30, 8);
    let va = toy_set("v", 3, 30, 9);
    let a = train(&cfg, &tr, &va, &quick_cfg(10), None).unwrap();
    let b = train(&cfg, &tr, &va, &quick_cfg(10), None).unwrap();
    assert_eq!(without_wall_time(a.log.epochs.clone()), without_wall_time(b.log.epochs.clone()));
    assert_eq!(a.best, b.best);
    assert_eq!(a.last, b.last);

    let best = a.log.epochs.iter().map(|e| e.val_accuracy).fold(f64::MIN, f64::max);
    let first_best = a.log.epochs.iter().find(|e| e.val_accuracy == best).unwrap().epoch;
    assert_eq!(a.log.best_epoch, first_best);
    assert_eq!(evaluate_val_accuracy(&cfg, &a.best, &va).unwrap(), best);
    for (i, e) in a.log.epochs.iter().enumerate() {
        assert_eq!(e.epoch, i + 1);
    }
}

#[test]
fn interrupted_run_resumes_to_the_same_result() {
    let cfg = model(10);
    let tr = toy_set("t", 5, 30, 10);
    let va = toy_set("v", 3, 30, 11);
    let full_cfg = TrainConfig {
        patience: 4,
        max_epochs: 6,
        ..quick_cfg(10)
    };
    let straight = train(&cfg, &tr, &va, &full_cfg, None).unwrap();

    let dir = tempfile::tempdir().unwrap();
    let paths = TrainPaths::new(dir.path());
    let first = TrainConfig {
        max_epochs: 5,
        ..full_cfg.clone()
    };
    train(&cfg, &tr, &va, &first, Some(&paths)).unwrap();
    let resumed = train(&cfg, &tr, &va, &full_cfg, Some(&paths)).unwrap();
    assert_eq!(resumed.last, straight.last);
    assert_eq!(resumed.best, straight.best);
    assert_eq!(without_wall_time(resumed.log.epochs.clone()), without_wall_time(straight.log.epochs.clone()));

    let logged = read_train_log(&paths.log()).unwrap();
    assert_eq!(without_wall_time(logged), without_wall_time(straight.log.epochs.clone()));
    assert!(paths.best().exists() && paths.last().exists());

    // a different run in the same directory is refused
    let other = TrainConfig {
        seed: 99,
        ..full_cfg
    };
    assert!(train(&cfg, &tr, &va, &other, Some(&paths)).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostic() {
    let cfg = model(10);
    let mut tr = toy_set("t", 2, 20, 12);
    tr[0].features.values[5] = f32::NAN;
    let va = toy_set("v", 1, 20, 13);
    let err = train(&cfg, &tr, &va, &quick_cfg(10), None).err().unwrap();
    assert!(matches!(err, TrainError::NonFinite { .. }), "{err}");
    assert!(err.to_string().contains("learning rate"));
}

#[test]
fn rejects_bad_inputs() {
    let cfg = model(10);
    let tr = toy_set("t", 2, 20, 14);
    let va = toy_set("v", 1, 20, 15);
    assert!(train(&cfg, &[], &va, &quick_cfg(10), None).is_err());
    assert!(train(&cfg, &tr, &[], &quick_cfg(10), None).is_err());
    assert!(train(&cfg, &tr, &tr[..1], &quick_cfg(10), None).is_err());
    let w_only = CrnnConfig {
        in_channels: 1,
        ..cfg.clone()
    };
    let tc = TrainConfig {
        channels: 1,
        ..quick_cfg(10)
    };
    assert!(train(&w_only, &tr, &va, &tc, None).is_err());
}
