use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use vesselscreen::commands::{self, show, EvalArgs, PhantomArgs, SaliencyArgs, TrainArgs, TrainOverrides};
use vesselscreen::config::parse_dims;
use vesselscreen::core::Dims3;
use vesselscreen::Error;

#[derive(Parser)]
#[command(name = "vesselscreen", version, about = "Screen straightened coronary vessel volumes with a 3D CNN")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn dims_arg(s: &str) -> Result<Dims3, String> {
    parse_dims(s).ok_or_else(|| format!("expected WxHxL, got {:?}", s))
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic vessel cohort with lesion masks.
    Phantom {
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0.5)]
        abnormal_frac: f64,
        #[arg(long, value_parser = dims_arg, default_value = "21x21x96")]
        dims: Dims3,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run subject-level cross-validation training.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        max_epochs: Option<usize>,
        #[arg(long)]
        patience: Option<usize>,
        #[arg(long)]
        folds: Option<usize>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        batch_size: Option<usize>,
        #[arg(long)]
        balance_target: Option<usize>,
        /// Folds trained concurrently.
        #[arg(long, default_value_t = 1)]
        jobs: usize,
    },
    /// Score predictions and optionally localize lesions with Grad-CAM.
    Eval {
        /// Training output directory.
        #[arg(long)]
        run: Option<PathBuf>,
        /// Additional prediction CSV files, one fold each.
        #[arg(long = "predictions")]
        predictions: Vec<PathBuf>,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long)]
        localize: bool,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a Grad-CAM heat map for one volume.
    Saliency {
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        volume: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        tau: f64,
        /// Class to explain: 1 for abnormal, 0 for normal.
        #[arg(long, default_value_t = 1)]
        class: usize,
        #[arg(long)]
        out: PathBuf,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Phantom { n, abnormal_frac, dims, seed, out } => {
            let s = commands::phantom(&PhantomArgs { n, abnormal_frac, dims, seed, out })?;
            println!(
                "subjects: {} ({} abnormal, {} normal)",
                s.subjects,
                s.abnormal_subjects,
                s.subjects - s.abnormal_subjects
            );
            println!(
                "vessels: {} ({} abnormal, {} normal)",
                s.vessels,
                s.abnormal_vessels,
                s.vessels - s.abnormal_vessels
            );
            println!("manifest: {}", s.manifest.display());
        }
        Command::Train {
            manifest,
            config,
            out,
            lr,
            max_epochs,
            patience,
            folds,
            seed,
            batch_size,
            balance_target,
            jobs,
        } => {
            let overrides = TrainOverrides { lr, max_epochs, patience, folds, seed, batch_size, balance_target };
            let cv = commands::train(&TrainArgs { manifest, config, out, overrides, jobs })?;
            for f in &cv.folds {
                println!(
                    "fold {}: auc {}, {} epochs, stop {}",
                    f.split.fold_index,
                    show(f.auc),
                    f.outcome.log.epochs.len(),
                    f.outcome.log.stop_reason.map_or("none", |r| r.as_str())
                );
            }
            println!("mean auc {} (sd {})", show(cv.mean_auc), show(cv.sd_auc));
        }
        Command::Eval { run, predictions, manifest, localize, tau, out } => {
            let s = commands::eval(&EvalArgs { run, predictions, manifest, localize, tau, out })?;
            println!("pooled auc {}", show(s.pooled_auc));
            println!("mean auc {} (sd {})", show(s.mean_auc), show(s.sd_auc));
            if let Some(l) = s.localization {
                println!("saliency peak inside lesion: {}/{}", l.peak_hits, l.vessels);
            }
        }
        Command::Saliency { model, volume, tau, class, out } => {
            let o = commands::saliency(&SaliencyArgs { model, volume, tau, class_index: class, out })?;
            println!("map: {}", o.map.display());
            println!("slice: {}", o.slice.display());
            println!("mask: {}", o.mask.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    vesselscreen::tune_allocator();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e);
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
