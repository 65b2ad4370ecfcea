//! `scribbleseg` — scribble-supervised LiDAR segmentation pipeline.
//!
//! The usual flow on synthetic data:
//!
//! ```text
//! scribbleseg synth          # generate data/sequences/{00,01}
//! scribbleseg train          # stage 1: mean-teacher on scribbles
//! scribbleseg pseudolabel    # stage 2: expand labels with the teacher
//! scribbleseg distill        # stage 3: retrain from raw geometry
//! scribbleseg eval           # score the distilled model
//! ```

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use scribbleseg::stages::{
    run_descriptors, run_distill, run_eval, run_pseudolabel, run_stats, run_synth, run_train,
    EvalOptions,
};
use scribbleseg::{PipelineConfig, Result};

#[derive(Parser)]
#[command(name = "scribbleseg", version, about = "Scribble-supervised LiDAR segmentation")]
struct Cli {
    /// JSON configuration file; built-in defaults apply when omitted.
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Override the dataset root directory.
    #[arg(long, global = true, value_name = "DIR")]
    data_root: Option<PathBuf>,

    /// Override the output directory for checkpoints, labels and reports.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Override the scene generation seed.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Override the worker thread count; 0 means one per core.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset under the data root
    Synth,
    /// Stage 1: train the teacher-student pair on scribble labels
    Train,
    /// Stage 2: pseudo-label unlabeled points with the trained teacher
    Pseudolabel {
        /// Checkpoint to label with; defaults to the stage-1 output.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
    },
    /// Stage 3: retrain on merged labels from raw geometry only
    Distill {
        /// Directory of merged label files; defaults to the stage-2 output.
        #[arg(long, value_name = "DIR")]
        labels: Option<PathBuf>,
    },
    /// Score a checkpoint against a labeled sequence
    Eval {
        /// Checkpoint to score; defaults to the distilled one if present.
        #[arg(long, value_name = "FILE")]
        checkpoint: Option<PathBuf>,
        /// Sequence to score on; defaults to the validation sequence.
        #[arg(long)]
        sequence: Option<String>,
        /// Reference mean IoU; reports the score as a percentage of it.
        #[arg(long)]
        baseline: Option<f64>,
    },
    /// Summarize label counts and range spread of a sequence
    Stats {
        /// Sequence to summarize; defaults to the training sequence.
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Dump per-point context descriptors for a sequence
    Descriptors {
        /// Sequence to process; defaults to the training sequence.
        #[arg(long)]
        sequence: Option<String>,
    },
    /// Print the effective configuration as JSON
    Config,
}

fn load_config(cli: &Cli) -> Result<PipelineConfig> {
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(root) = &cli.data_root {
        cfg.data_root = root.clone();
    }
    if let Some(out) = &cli.out {
        cfg.out_dir = out.clone();
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(threads) = cli.threads {
        cfg.threads = threads;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn fmt_opt_score(v: Option<f64>) -> String {
    match v {
        Some(v) => format!("{v:.4}"),
        None => "n/a".to_string(),
    }
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Synth => {
            let s = run_synth(&cfg)?;
            println!(
                "synth: {} train + {} val frames, {} points, manifest at {}",
                s.train_frames,
                s.val_frames,
                s.total_points,
                s.manifest.display()
            );
        }
        Command::Train => {
            let s = run_train(&cfg)?;
            println!(
                "train: {} frames, {} optimizer steps, val mIoU {}, checkpoint at {}",
                s.frames,
                s.steps,
                fmt_opt_score(s.val_miou),
                s.checkpoint.display()
            );
        }
        Command::Pseudolabel { checkpoint } => {
            let s = run_pseudolabel(&cfg, checkpoint.as_deref())?;
            println!(
                "pseudolabel: admitted {} of {} unlabeled points ({:.1}%), accuracy {}, labels at {}",
                s.admitted,
                s.candidates,
                100.0 * s.admitted as f64 / s.candidates.max(1) as f64,
                fmt_opt_score(s.accuracy),
                s.labels_dir.display()
            );
        }
        Command::Distill { labels } => {
            let s = run_distill(&cfg, labels.as_deref())?;
            println!(
                "distill: {} frames, {} optimizer steps, val mIoU {}, checkpoint at {}",
                s.frames,
                s.steps,
                fmt_opt_score(s.val_miou),
                s.checkpoint.display()
            );
        }
        Command::Eval {
            checkpoint,
            sequence,
            baseline,
        } => {
            let opts = EvalOptions {
                checkpoint: checkpoint.clone(),
                sequence: sequence.clone(),
                baseline: *baseline,
            };
            let s = run_eval(&cfg, &opts)?;
            match s.relative {
                Some(rel) => println!(
                    "eval: sequence {} mIoU {:.4} ({:.1}% of baseline), report at {}",
                    s.sequence,
                    s.miou,
                    rel,
                    s.report.display()
                ),
                None => println!(
                    "eval: sequence {} mIoU {:.4} over {} points, report at {}",
                    s.sequence,
                    s.miou,
                    s.points_scored,
                    s.report.display()
                ),
            }
        }
        Command::Stats { sequence } => {
            let s = run_stats(&cfg, sequence.as_deref())?;
            println!(
                "stats: {} frames, scribble fraction {}, dense fraction {}, report at {}",
                s.frames,
                fmt_opt_score(s.scribble_fraction),
                fmt_opt_score(s.dense_fraction),
                s.report.display()
            );
        }
        Command::Descriptors { sequence } => {
            let s = run_descriptors(&cfg, sequence.as_deref())?;
            println!(
                "descriptors: {} frames, {} values per point, dumped under {}",
                s.frames,
                s.dim,
                s.dir.display()
            );
        }
        Command::Config => print!("{}", cfg.to_pretty_json()),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            ExitCode::FAILURE
        }
    }
}
