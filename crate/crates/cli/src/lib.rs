//! Pipeline commands behind the `foacount` binary.

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use foacount::datagen::{crop_bins, generate_dataset, load_split, DatasetManifest, FeatureChannels, Split};
use foacount::dsp::wav::read_wav;
use foacount::dsp::{stft_magnitude, HOP, SAMPLE_RATE};
use foacount::eval::{compare_reports, evaluate_examples, sliding_count, EvalReport};
use foacount::model::{load_model, CrnnConfig};
use foacount::numerics::write_atomic;
use foacount::spatial::{build_room_bank, BankSpec};
use foacount::train::{train, TrainOutcome, TrainPaths};

pub use config::PipelineConfig;

pub const GENERATOR: &str = concat!("foacount ", env!("CARGO_PKG_VERSION"));

/// Room bank for every split under `paths.rooms/<split>`.
pub fn cmd_gen_rooms(cfg: &PipelineConfig) -> Result<Vec<(Split, usize, usize)>> {
    let mut out = Vec::new();
    for split in Split::ALL {
        let spec = BankSpec {
            generator: GENERATOR.to_string(),
            seed: cfg.data.rooms_seed(split),
            n_rooms: cfg.data.n_rooms(split),
            sources_per_room: cfg.data.sources_per_room,
            sampler: cfg.data.sampler.clone(),
            srir: cfg.data.srir.clone(),
        };
        let dir = cfg.paths.rooms.join(split.name());
        let progress = build_room_bank(&dir, &spec).with_context(|| format!("room bank {}", dir.display()))?;
        log::info!(
            "{}: {} rooms generated, {} already present",
            split.name(),
            progress.generated,
            progress.skipped
        );
        out.push((split, spec.n_rooms, progress.generated));
    }
    Ok(out)
}

/// Mixtures, labels and manifest for all splits from the room bank (or
/// freshly simulated rooms when no bank exists).
pub fn cmd_gen_data(cfg: &PipelineConfig) -> Result<DatasetManifest> {
    let bank = cfg.paths.rooms.join(Split::Train.name()).join("srirs.jsonl");
    let rooms = bank.exists().then_some(cfg.paths.rooms.as_path());
    if rooms.is_none() {
        log::warn!("no room bank at {}; simulating rooms in memory", cfg.paths.rooms.display());
    }
    let manifest = generate_dataset(&cfg.data, &cfg.paths.dataset, rooms)?;
    Ok(manifest)
}

pub fn run_name(cfg: &CrnnConfig, seed: u64) -> String {
    format!("nt{}_ch{}_seed{}", cfg.n_frames, cfg.in_channels, seed)
}

fn channels(n: usize) -> Result<FeatureChannels> {
    FeatureChannels::from_count(n).with_context(|| format!("channels must be 1 or 4, got {n}"))
}

/// Trains into `paths.checkpoints/<run>`; resumes when that directory
/// already holds a matching run.
pub fn cmd_train(cfg: &PipelineConfig) -> Result<(PathBuf, TrainOutcome)> {
    let model = cfg.crnn();
    let ch = channels(model.in_channels)?;
    let train_set = load_split(&cfg.paths.dataset, Split::Train, ch, model.n_bins)?;
    let val_set = load_split(&cfg.paths.dataset, Split::Val, ch, model.n_bins)?;
    let dir = cfg.paths.checkpoints.join(run_name(&model, cfg.train.seed));
    let out = train(&model, &train_set, &val_set, &cfg.train, Some(&TrainPaths::new(&dir)))?;
    Ok((dir, out))
}

/// Evaluates `checkpoint` on `split`, writes the report JSON to
/// `paths.reports` and returns it with its path.
pub fn cmd_eval(cfg: &PipelineConfig, checkpoint: &Path, split: Split) -> Result<(PathBuf, EvalReport)> {
    if !checkpoint.exists() {
        bail!("checkpoint {} not found", checkpoint.display());
    }
    let (model, params, _) = load_model::<f32>(checkpoint)?;
    let ch = channels(model.in_channels)?;
    let set = load_split(&cfg.paths.dataset, split, ch, model.n_bins)?;
    let report = evaluate_examples(&model, &params, &set, cfg.eval.alignment, &checkpoint.display().to_string())?;
    let run = checkpoint
        .parent()
        .and_then(Path::file_name)
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "model".into());
    fs::create_dir_all(&cfg.paths.reports)?;
    let path = cfg.paths.reports.join(format!("{run}_{}.json", split.name()));
    write_atomic(&path, &serde_json::to_vec_pretty(&report)?)?;
    Ok((path, report))
}

/// Per-class deltas `a − b` as a fixed-width table.
pub fn render_comparison(a: &EvalReport, b: &EvalReport) -> Result<String> {
    let d = compare_reports(a, b)?;
    let mut s = String::new();
    let _ = write!(s, "{:<24}", "delta");
    for k in 0..6 {
        let _ = write!(s, "{k:>8}");
    }
    s.push('\n');
    for (name, row) in [("acc. (%)", &d.accuracy), ("MAE", &d.mae)] {
        let _ = write!(s, "{name:<24}");
        for v in row {
            match v {
                Some(x) => {
                    let _ = write!(s, "{x:>+8.2}");
                }
                None => {
                    let _ = write!(s, "{:>8}", "-");
                }
            }
        }
        s.push('\n');
    }
    let _ = writeln!(s, "mean accuracy delta {:+.2}", d.mean_accuracy);
    for w in &d.warnings {
        let _ = writeln!(s, "warning: {w}");
    }
    Ok(s)
}

/// Writes one line per decoded frame: index, start time (s), count and the
/// six class probabilities. `n_frames` overrides the checkpoint's context
/// length.
pub fn cmd_count(checkpoint: &Path, wav: &Path, n_frames: Option<usize>, out: &mut dyn std::io::Write) -> Result<usize> {
    let (mut model, params, _) = load_model::<f32>(checkpoint)?;
    if let Some(n) = n_frames {
        model.n_frames = n;
        model.validate()?;
    }
    let audio = read_wav(wav).with_context(|| format!("reading {}", wav.display()))?;
    if audio.sample_rate != SAMPLE_RATE {
        bail!("{}: sample rate {} Hz, expected {SAMPLE_RATE}", wav.display(), audio.sample_rate);
    }
    let audio = match (audio.n_channels(), model.in_channels) {
        (4, 4) | (1, 1) => audio,
        (4, 1) => audio.w_only(),
        (n, m) => bail!("{}: {n}-channel input for a {m}-channel model", wav.display()),
    };
    let features = crop_bins(&stft_magnitude(&audio)?, model.n_bins);
    let preds = sliding_count(&model, &params, &features, foacount::eval::Alignment::EndFrame)?;
    for p in &preds {
        let time = (p.frame * HOP) as f64 / SAMPLE_RATE as f64;
        let probs: Vec<String> = p.probs.iter().map(|v| format!("{v:.4}")).collect();
        writeln!(out, "{}\t{time:.3}\t{}\t{}", p.frame, p.count, probs.join("\t"))?;
    }
    Ok(preds.len())
}
