use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use foacount::datagen::Split;
use foacount::eval::{Alignment, EvalReport};
use foacount_cli::{cmd_count, cmd_eval, cmd_gen_data, cmd_gen_rooms, cmd_train, render_comparison, PipelineConfig};

#[derive(Parser)]
#[command(name = "foacount", version, about = "Framewise speaker counting on FOA recordings")]
struct Cli {
    /// TOML pipeline config; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Room/mixture count multiplier in (0, 1].
    #[arg(long, global = true)]
    scale: Option<f64>,
    /// Dataset seed (gen-rooms, gen-data) or initialisation seed (train).
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, ValueEnum)]
enum AlignArg {
    End,
    Decision,
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the SRIR bank (resumable).
    GenRooms {
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Render mixtures, labels and the manifest from the room bank.
    GenData {
        #[arg(long)]
        rooms: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a CRNN; resumes an interrupted run of the same config.
    Train {
        /// Context length N_t (10, 20 or 30 frames).
        #[arg(long)]
        nt: Option<usize>,
        /// 4 = full FOA input, 1 = W channel only.
        #[arg(long)]
        channels: Option<usize>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Per-class accuracy and MAE of a checkpoint.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, value_enum, default_value = "test")]
        split: SplitArg,
        #[arg(long, value_enum)]
        alignment: Option<AlignArg>,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Report JSON to compare against (this minus that).
        #[arg(long)]
        compare: Option<PathBuf>,
    },
    /// Per-frame counts of one 16 kHz WAV file.
    Count {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        wav: PathBuf,
        #[arg(long)]
        nt: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = PipelineConfig::load(cli.config.as_deref())?;
    if let Some(s) = cli.scale {
        cfg.data.scale = s;
    }
    match &cli.cmd {
        Cmd::GenRooms { out } => {
            if let Some(seed) = cli.seed {
                cfg.data.seed = seed;
            }
            if let Some(o) = out {
                cfg.paths.rooms = o.clone();
            }
        }
        Cmd::GenData { rooms, out } => {
            if let Some(seed) = cli.seed {
                cfg.data.seed = seed;
            }
            if let Some(r) = rooms {
                cfg.paths.rooms = r.clone();
            }
            if let Some(o) = out {
                cfg.paths.dataset = o.clone();
            }
        }
        Cmd::Train {
            nt,
            channels,
            max_epochs,
            patience,
            batch_size,
            lr,
            data,
            out,
        } => {
            if let Some(seed) = cli.seed {
                cfg.train.seed = seed;
            }
            set(&mut cfg.train.n_frames, *nt);
            set(&mut cfg.train.channels, *channels);
            set(&mut cfg.train.max_epochs, *max_epochs);
            set(&mut cfg.train.patience, *patience);
            set(&mut cfg.train.batch_size, *batch_size);
            set(&mut cfg.train.adam.lr, *lr);
            set(&mut cfg.paths.dataset, data.clone());
            set(&mut cfg.paths.checkpoints, out.clone());
        }
        Cmd::Eval { alignment, data, .. } => {
            if let Some(a) = alignment {
                cfg.eval.alignment = match a {
                    AlignArg::End => Alignment::EndFrame,
                    AlignArg::Decision => Alignment::DecisionRow,
                };
            }
            set(&mut cfg.paths.dataset, data.clone());
        }
        Cmd::Count { .. } => {}
    }
    cfg.finish()
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: Cli) -> Result<()> {
    let cfg = resolve(&cli)?;
    if !matches!(cli.cmd, Cmd::Count { .. }) {
        eprintln!("# resolved config\n{}", cfg.to_toml());
    }
    match cli.cmd {
        Cmd::GenRooms { .. } => {
            for (split, n, generated) in cmd_gen_rooms(&cfg)? {
                println!("{}: {n} rooms ({generated} generated)", split.name());
            }
        }
        Cmd::GenData { .. } => {
            let m = cmd_gen_data(&cfg)?;
            for (split, s) in &m.splits {
                println!(
                    "{}: {} mixtures, {:.2} h, classes {:?}",
                    split.name(),
                    s.n_mixtures,
                    s.hours,
                    s.class_histogram
                );
            }
        }
        Cmd::Train { .. } => {
            let (dir, out) = cmd_train(&cfg)?;
            println!(
                "best epoch {} (val acc {:.4}), stopped: {:?}; checkpoints in {}",
                out.log.best_epoch,
                out.log.best_val_accuracy,
                out.log.stop,
                dir.display()
            );
        }
        Cmd::Eval {
            checkpoint,
            split,
            compare,
            ..
        } => {
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Val => Split::Val,
                SplitArg::Test => Split::Test,
            };
            let (path, report) = cmd_eval(&cfg, &checkpoint, split)?;
            let label = if report.channels == 4 { "FOA" } else { "W-only" };
            print!("{}", report.render_table(label));
            println!("report written to {}", path.display());
            if let Some(other) = compare {
                let text = std::fs::read(&other).with_context(|| format!("reading {}", other.display()))?;
                let b: EvalReport = serde_json::from_slice(&text)?;
                print!("{}", render_comparison(&report, &b)?);
            }
        }
        Cmd::Count { checkpoint, wav, nt } => {
            let stdout = std::io::stdout();
            let mut lock = stdout.lock();
            cmd_count(&checkpoint, &wav, nt, &mut lock)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    foacount::parallel::init_workers_from_env();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
