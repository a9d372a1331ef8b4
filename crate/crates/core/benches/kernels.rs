//! Parallel vs sequential execution of the data-parallel kernels.

use std::hint::black_box;

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use foacount::datagen::LabeledExample;
use foacount::dsp::Spectrogram;
use foacount::eval::{evaluate_examples, per_class_accuracy, Alignment};
use foacount::model::{CrnnConfig, N_CLASSES};
use foacount::parallel::{map_range, set_execution, Execution};
use foacount::spatial::{generate_room_bank, RoomSampler, SrirOptions};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const MODES: [(&str, Execution); 2] = [("parallel", Execution::Parallel), ("sequential", Execution::Sequential)];

fn small_model() -> CrnnConfig {
    CrnnConfig {
        n_frames: 10,
        n_bins: 64,
        in_channels: 4,
        conv_channels: [8, 8, 16, 8],
        lstm_hidden: 16,
        n_classes: N_CLASSES,
    }
}

fn random_examples(n: usize, frames: usize, bins: usize) -> Vec<LabeledExample> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    (0..n)
        .map(|i| LabeledExample {
            id: format!("bench/{i}"),
            features: Spectrogram {
                frames,
                bins,
                channels: 4,
                values: (0..frames * bins * 4).map(|_| rng.gen_range(0.0..1.0)).collect(),
            },
            labels: (0..frames).map(|_| rng.gen_range(0..N_CLASSES as u8)).collect(),
            n_sp: 3,
        })
        .collect()
}

fn batch_eval(c: &mut Criterion) {
    let cfg = small_model();
    let params = cfg.init_params::<f32>(0);
    let examples = random_examples(8, 120, cfg.n_bins);
    let mut group = c.benchmark_group("batch_eval");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| evaluate_examples(&cfg, &params, black_box(&examples), Alignment::EndFrame, "bench").unwrap())
        });
    }
    group.finish();
    set_execution(Execution::Parallel);
}

fn srir_generation(c: &mut Criterion) {
    let sampler = RoomSampler {
        length: (3.0, 4.0),
        width: (3.0, 4.0),
        t60: (0.2, 0.25),
        ..Default::default()
    };
    let opts = SrirOptions::default();
    let mut group = c.benchmark_group("srir_generation");
    group.sample_size(10);
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| generate_room_bank(&sampler, 4, 2, black_box(11), &opts).unwrap())
        });
    }
    group.finish();
    set_execution(Execution::Parallel);
}

/// Chance-level per-class accuracy of a uniform random counter, estimated
/// over independent trials.
fn monte_carlo(c: &mut Criterion) {
    let trials = 256;
    let mut group = c.benchmark_group("monte_carlo");
    for (name, mode) in MODES {
        group.bench_function(BenchmarkId::from_parameter(name), |b| {
            set_execution(mode);
            b.iter(|| {
                let accs = map_range(trials, |t| {
                    let mut rng = ChaCha8Rng::seed_from_u64(black_box(t as u64));
                    let labels: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..N_CLASSES)).collect();
                    let preds: Vec<usize> = (0..2000).map(|_| rng.gen_range(0..N_CLASSES)).collect();
                    per_class_accuracy(&preds, &labels).unwrap()[0].unwrap_or(0.0)
                });
                accs.iter().sum::<f64>() / trials as f64
            })
        });
    }
    group.finish();
    set_execution(Execution::Parallel);
}

criterion_group!(benches, batch_eval, srir_generation, monte_carlo);
criterion_main!(benches);
