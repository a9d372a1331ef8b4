//! Window sampling, the Adam training loop with validation-accuracy early
//! stopping, and on-disk training state (checkpoints plus a JSON-lines log).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::datagen::LabeledExample;
use crate::model::{argmax_row, crnn_forward, load_model, loss_and_grads, save_model, CrnnConfig, ModelError};
use crate::numerics::{write_atomic, AdamConfig, ParamStore, Tensor};
use crate::parallel::map_slice;
use crate::spatial::room_seed;

#[derive(Debug, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    Config(String),
    #[error("{0} set has no usable windows")]
    EmptySet(&'static str),
    #[error(
        "non-finite loss at epoch {epoch}, step {step} (lr {lr}, init seed {seed}); \
         lower the learning rate or check the features for inf/NaN"
    )]
    NonFinite { epoch: usize, step: usize, lr: f64, seed: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub adam: AdamConfig,
    pub patience: usize,
    pub max_epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub n_frames: usize,
    pub channels: usize,
    /// Also stop once the epoch's training-frame accuracy exceeds this
    /// value. Off by default.
    pub target_train_accuracy: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            adam: AdamConfig::default(),
            patience: 50,
            max_epochs: 300,
            batch_size: 64,
            seed: 0,
            n_frames: 10,
            channels: 4,
            target_train_accuracy: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self, model: &CrnnConfig) -> Result<(), TrainError> {
        model.validate()?;
        if self.patience >= self.max_epochs {
            return Err(TrainError::Config(format!(
                "patience {} must be below max_epochs {}",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(TrainError::Config("batch_size must be at least 1".into()));
        }
        if self.n_frames != model.n_frames || self.channels != model.in_channels {
            return Err(TrainError::Config(format!(
                "N_t/channels {}/{} disagree with the model's {}/{}",
                self.n_frames, self.channels, model.n_frames, model.in_channels
            )));
        }
        if !(self.adam.lr > 0.0 && self.adam.lr.is_finite()) {
            return Err(TrainError::Config(format!("learning rate {}", self.adam.lr)));
        }
        Ok(())
    }
}

/// One training window: `n_frames` consecutive frames of one example.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Window {
    pub example: usize,
    pub offset: usize,
}

pub struct Batch {
    /// `[B, N_t, F, C]`.
    pub input: Tensor<f32>,
    /// `B·N_t` frame labels, batch-major.
    pub labels: Vec<usize>,
    pub windows: Vec<Window>,
}

/// Draws `⌈frames / n_t⌉` windows at uniform offsets from every example
/// and shuffles them. Examples shorter than `n_t` frames are skipped.
pub fn epoch_windows<R: Rng + ?Sized>(examples: &[LabeledExample], n_t: usize, rng: &mut R) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        let frames = ex.features.frames;
        if frames < n_t {
            log::warn!("skipping {}: {frames} frames < N_t = {n_t}", ex.id);
            continue;
        }
        for _ in 0..frames.div_ceil(n_t) {
            out.push(Window {
                example: i,
                offset: rng.gen_range(0..=frames - n_t),
            });
        }
    }
    out.shuffle(rng);
    out
}

/// Copies the windows' features and labels into one batch.
pub fn assemble_batch(examples: &[LabeledExample], windows: &[Window], n_t: usize) -> Batch {
    let first = &examples[windows[0].example].features;
    let (bins, channels) = (first.bins, first.channels);
    let mut data = Vec::with_capacity(windows.len() * n_t * bins * channels);
    let mut labels = Vec::with_capacity(windows.len() * n_t);
    for w in windows {
        let ex = &examples[w.example];
        data.extend_from_slice(ex.features.window(w.offset, n_t));
        labels.extend(ex.labels[w.offset..w.offset + n_t].iter().map(|&l| l as usize));
    }
    Batch {
        input: Tensor::new(&[windows.len(), n_t, bins, channels], data).expect("window sizes agree"),
        labels,
        windows: windows.to_vec(),
    }
}

/// One epoch of shuffled training batches of at most `batch_size` windows.
pub fn make_batches<'a, R: Rng + ?Sized>(
    examples: &'a [LabeledExample],
    n_t: usize,
    batch_size: usize,
    rng: &mut R,
) -> impl Iterator<Item = Batch> + 'a {
    let windows = epoch_windows(examples, n_t, rng);
    let chunks: Vec<Vec<Window>> = windows.chunks(batch_size.max(1)).map(<[Window]>::to_vec).collect();
    chunks.into_iter().map(move |c| assemble_batch(examples, &c, n_t))
}

/// Non-overlapping windows `0, n_t, 2n_t, …` that fit inside the example.
pub fn tiling_windows(examples: &[LabeledExample], n_t: usize) -> Vec<Window> {
    let mut out = Vec::new();
    for (i, ex) in examples.iter().enumerate() {
        for k in 0..ex.features.frames / n_t {
            out.push(Window {
                example: i,
                offset: k * n_t,
            });
        }
    }
    out
}

/// `(label, prediction)` for every frame of every non-overlapping window.
pub fn tiled_predictions(
    cfg: &CrnnConfig,
    params: &ParamStore<f32>,
    examples: &[LabeledExample],
    batch_size: usize,
) -> Result<Vec<(usize, usize)>, TrainError> {
    let windows = tiling_windows(examples, cfg.n_frames);
    let chunks: Vec<&[Window]> = windows.chunks(batch_size.max(1)).collect();
    let parts = map_slice(&chunks, |c| -> Result<Vec<(usize, usize)>, TrainError> {
        let batch = assemble_batch(examples, c, cfg.n_frames);
        let probs = crnn_forward(cfg, params, batch.input)?;
        Ok(probs
            .data()
            .chunks(cfg.n_classes)
            .zip(&batch.labels)
            .map(|(row, &l)| (l, argmax_row(row)))
            .collect())
    });
    let mut out = Vec::with_capacity(windows.len() * cfg.n_frames);
    for p in parts {
        out.extend(p?);
    }
    Ok(out)
}

/// Framewise argmax accuracy over every frame of the non-overlapping
/// windows of `examples`.
pub fn evaluate_val_accuracy(
    cfg: &CrnnConfig,
    params: &ParamStore<f32>,
    examples: &[LabeledExample],
) -> Result<f64, TrainError> {
    let pairs = tiled_predictions(cfg, params, examples, 64)?;
    if pairs.is_empty() {
        return Err(TrainError::EmptySet("validation"));
    }
    Ok(pairs.iter().filter(|(l, p)| l == p).count() as f64 / pairs.len() as f64)
}

/// Patience counter on a maximised metric. Only strict improvements reset
/// it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best_epoch: Option<usize>,
    pub best_value: f64,
    pub epochs_without_improvement: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best_epoch: None,
            best_value: f64::NEG_INFINITY,
            epochs_without_improvement: 0,
        }
    }

    /// Records `value` for `epoch`; returns whether it is a new best.
    pub fn update(&mut self, epoch: usize, value: f64) -> bool {
        if value > self.best_value {
            self.best_value = value;
            self.best_epoch = Some(epoch);
            self.epochs_without_improvement = 0;
            true
        } else {
            self.epochs_without_improvement += 1;
            false
        }
    }

    pub fn should_stop(&self) -> bool {
        self.epochs_without_improvement >= self.patience
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    pub train_loss: f64,
    /// Framewise accuracy on the epoch's training windows, measured while
    /// the parameters were being updated.
    pub train_accuracy: f64,
    pub val_accuracy: f64,
    pub best_epoch: usize,
    pub wall_time_s: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Patience,
    MaxEpochs,
    TargetTrainAccuracy,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_accuracy: f64,
    pub stop: StopReason,
}

impl TrainLog {
    pub fn to_jsonl(&self) -> String {
        self.epochs
            .iter()
            .map(|r| serde_json::to_string(r).expect("record serializes") + "\n")
            .collect()
    }
}

/// Checkpoint directory layout.
pub struct TrainPaths {
    pub dir: PathBuf,
}

impl TrainPaths {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        TrainPaths { dir: dir.into() }
    }
    pub fn best(&self) -> PathBuf {
        self.dir.join("best.ckpt")
    }
    pub fn last(&self) -> PathBuf {
        self.dir.join("last.ckpt")
    }
    pub fn log(&self) -> PathBuf {
        self.dir.join("train_log.jsonl")
    }
}

/// State stored next to the parameters in `last.ckpt`.
#[derive(Serialize, Deserialize)]
struct ResumeState {
    train: TrainConfig,
    epoch: usize,
    stopping: EarlyStopping,
    epochs: Vec<EpochRecord>,
}

pub struct TrainOutcome {
    pub best: ParamStore<f32>,
    pub last: ParamStore<f32>,
    pub log: TrainLog,
}

fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(room_seed(seed ^ 0x7472_6169_6e00, epoch))
}

fn check_examples(model: &CrnnConfig, set: &[LabeledExample], name: &'static str) -> Result<(), TrainError> {
    if set.iter().all(|e| e.features.frames < model.n_frames) {
        return Err(TrainError::EmptySet(name));
    }
    for e in set {
        let f = &e.features;
        if f.bins != model.n_bins || f.channels != model.in_channels {
            return Err(TrainError::Config(format!(
                "{name} example {} has {} bins × {} channels, model expects {} × {}",
                e.id, f.bins, f.channels, model.n_bins, model.in_channels
            )));
        }
        if e.labels.len() != f.frames {
            return Err(TrainError::Config(format!("{name} example {}: label/frame count mismatch", e.id)));
        }
    }
    let ids: std::collections::BTreeSet<&str> = set.iter().map(|e| e.id.as_str()).collect();
    if ids.len() != set.len() {
        return Err(TrainError::Config(format!("{name} set has duplicate example ids")));
    }
    Ok(())
}

/// Trains from scratch (or resumes from `paths`' `last.ckpt` when it
/// exists and was written with the same configs), keeping the parameters
/// with the best validation accuracy.
pub fn train(
    model: &CrnnConfig,
    train_set: &[LabeledExample],
    val_set: &[LabeledExample],
    cfg: &TrainConfig,
    paths: Option<&TrainPaths>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate(model)?;
    check_examples(model, train_set, "training")?;
    check_examples(model, val_set, "validation")?;
    let train_ids: std::collections::BTreeSet<&str> = train_set.iter().map(|e| e.id.as_str()).collect();
    if let Some(e) = val_set.iter().find(|e| train_ids.contains(e.id.as_str())) {
        return Err(TrainError::Config(format!("example {} is in both training and validation sets", e.id)));
    }

    let mut params = model.init_params::<f32>(cfg.seed);
    let mut best = params.clone();
    let mut stopping = EarlyStopping::new(cfg.patience);
    let mut records = Vec::new();
    let mut start_epoch = 1;

    if let Some(p) = paths {
        fs::create_dir_all(&p.dir)?;
        if let Some((state, last, best_params)) = try_resume(model, cfg, p)? {
            log::info!("resuming after epoch {}", state.epoch);
            params = last;
            best = best_params;
            stopping = state.stopping;
            records = state.epochs;
            start_epoch = state.epoch + 1;
            if let Some(stop) = finished(&stopping, &records, cfg) {
                return Ok(TrainOutcome {
                    log: make_log(records, &stopping, stop),
                    best,
                    last: params,
                });
            }
        }
    }

    for epoch in start_epoch..=cfg.max_epochs {
        let clock = Instant::now();
        let mut rng = epoch_rng(cfg.seed, epoch);
        let (mut loss_sum, mut frames, mut correct) = (0.0f64, 0usize, 0usize);
        for (step, batch) in make_batches(train_set, cfg.n_frames, cfg.batch_size, &mut rng).enumerate() {
            let out = loss_and_grads(model, &params, batch.input, &batch.labels)?;
            let loss = out.loss as f64;
            if !loss.is_finite() || out.grads.values().any(|g| !g.all_finite()) {
                return Err(TrainError::NonFinite {
                    epoch,
                    step,
                    lr: cfg.adam.lr,
                    seed: cfg.seed,
                });
            }
            let n = batch.labels.len();
            loss_sum += loss * n as f64;
            frames += n;
            correct += out
                .probs
                .data()
                .chunks(model.n_classes)
                .zip(&batch.labels)
                .filter(|(row, &l)| argmax_row(row) == l)
                .count();
            params.adam_step(&out.grads, &cfg.adam).map_err(ModelError::from)?;
        }
        let val_accuracy = evaluate_val_accuracy(model, &params, val_set)?;
        if stopping.update(epoch, val_accuracy) {
            best = params.clone();
        }
        records.push(EpochRecord {
            epoch,
            train_loss: loss_sum / frames as f64,
            train_accuracy: correct as f64 / frames as f64,
            val_accuracy,
            best_epoch: stopping.best_epoch.expect("updated at least once"),
            wall_time_s: clock.elapsed().as_secs_f64(),
        });
        let r = records.last().unwrap();
        log::info!(
            "epoch {epoch}: loss {:.4} train acc {:.4} val acc {:.4} (best {})",
            r.train_loss,
            r.train_accuracy,
            r.val_accuracy,
            r.best_epoch
        );
        if let Some(p) = paths {
            save_state(model, cfg, p, epoch, &stopping, &records, &params, &best)?;
        }
        if let Some(stop) = finished(&stopping, &records, cfg) {
            return Ok(TrainOutcome {
                log: make_log(records, &stopping, stop),
                best,
                last: params,
            });
        }
    }
    unreachable!("max_epochs > patience ≥ 0 guarantees a stop inside the loop")
}

fn finished(stopping: &EarlyStopping, records: &[EpochRecord], cfg: &TrainConfig) -> Option<StopReason> {
    let last = records.last()?;
    if cfg.target_train_accuracy.is_some_and(|t| last.train_accuracy > t) {
        Some(StopReason::TargetTrainAccuracy)
    } else if stopping.should_stop() {
        Some(StopReason::Patience)
    } else if last.epoch >= cfg.max_epochs {
        Some(StopReason::MaxEpochs)
    } else {
        None
    }
}

fn make_log(epochs: Vec<EpochRecord>, stopping: &EarlyStopping, stop: StopReason) -> TrainLog {
    TrainLog {
        epochs,
        best_epoch: stopping.best_epoch.unwrap_or(0),
        best_val_accuracy: stopping.best_value,
        stop,
    }
}

#[allow(clippy::too_many_arguments)]
fn save_state(
    model: &CrnnConfig,
    cfg: &TrainConfig,
    paths: &TrainPaths,
    epoch: usize,
    stopping: &EarlyStopping,
    records: &[EpochRecord],
    params: &ParamStore<f32>,
    best: &ParamStore<f32>,
) -> Result<(), TrainError> {
    let meta = |kind: &str| {
        serde_json::json!({
            "kind": kind,
            "generator": concat!("foacount ", env!("CARGO_PKG_VERSION")),
            "train": cfg,
            "epoch": epoch,
            "best_epoch": stopping.best_epoch,
            "best_val_accuracy": stopping.best_value,
        })
    };
    if stopping.best_epoch == Some(epoch) {
        save_model(&paths.best(), model, best, meta("best"))?;
    }
    let state = ResumeState {
        train: cfg.clone(),
        epoch,
        stopping: stopping.clone(),
        // wall times live only in the log so checkpoints stay byte-identical
        epochs: records
            .iter()
            .map(|r| EpochRecord {
                wall_time_s: 0.0,
                ..r.clone()
            })
            .collect(),
    };
    let mut last_meta = meta("last");
    last_meta["resume"] = serde_json::to_value(&state)?;
    save_model(&paths.last(), model, params, last_meta)?;
    let mut log = Vec::new();
    for r in records {
        serde_json::to_writer(&mut log, r)?;
        log.write_all(b"\n")?;
    }
    write_atomic(&paths.log(), &log)?;
    Ok(())
}

type Resumed = (ResumeState, ParamStore<f32>, ParamStore<f32>);

fn try_resume(model: &CrnnConfig, cfg: &TrainConfig, paths: &TrainPaths) -> Result<Option<Resumed>, TrainError> {
    if !paths.last().exists() {
        return Ok(None);
    }
    let (saved_model, last, mut meta) = load_model::<f32>(&paths.last())?;
    let mut state: ResumeState = serde_json::from_value(meta["resume"].take())?;
    if &saved_model != model || !same_run(&state.train, cfg) {
        return Err(TrainError::Config(format!(
            "{} holds a different run; remove it or choose another directory",
            paths.dir.display()
        )));
    }
    if let Ok(logged) = read_train_log(&paths.log()) {
        for (r, l) in state.epochs.iter_mut().zip(logged) {
            if r.epoch == l.epoch {
                r.wall_time_s = l.wall_time_s;
            }
        }
    }
    let (_, best, _) = load_model::<f32>(&paths.best())?;
    Ok(Some((state, last, best)))
}

/// Resuming may extend `max_epochs` or change the stop rules, but not the
/// optimisation itself.
fn same_run(a: &TrainConfig, b: &TrainConfig) -> bool {
    a.adam == b.adam && a.batch_size == b.batch_size && a.seed == b.seed && a.n_frames == b.n_frames && a.channels == b.channels
}

/// Reads a training log written by [`train`].
pub fn read_train_log(path: &Path) -> Result<Vec<EpochRecord>, TrainError> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(TrainError::from))
        .collect()
}
