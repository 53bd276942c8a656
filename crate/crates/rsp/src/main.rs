use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rsp::dataset::{self, Split};
use rsp::run::{self, TrainOptions};
use rsp::ExperimentConfig;

#[derive(Parser)]
#[command(version, about = "Recurrent state projection: data, training, evaluation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Heldout,
    All,
}

#[derive(Subcommand)]
enum Command {
    /// Render synthetic sequences into a dataset directory.
    Generate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seeds: usize,
        /// Worker threads; defaults to the available parallelism.
        #[arg(long)]
        threads: Option<usize>,
    },
    /// Train a model and write checkpoints plus a metrics CSV.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sequential, reproducible run with zeroed timing columns.
        #[arg(long)]
        deterministic: bool,
    },
    /// Evaluate a checkpoint statefully.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "heldout")]
        split: SplitArg,
    },
    /// Write hidden-norm, class and velocity images for one sequence.
    Viz {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference gradient checks.
    Gradcheck {
        /// One of engine, layers, projection, cell, model.
        #[arg(long)]
        module: Option<String>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn fmt(v: Option<f64>) -> String {
    v.map_or_else(|| "-".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse().command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cmd: Command) -> rsp::Result<ExitCode> {
    match cmd {
        Command::Generate {
            config,
            out,
            seeds,
            threads,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let threads = threads.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
            let m = dataset::generate(&cfg, seeds, &out, threads)?;
            println!("wrote {} sequences to {}", m.sequences.len(), out.display());
        }
        Command::Train {
            config,
            data,
            out,
            deterministic,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let r = run::train(&cfg, &data, &out, TrainOptions { deterministic })?;
            if let Some(last) = r.reports.last() {
                println!("{}", run::METRICS_HEADER);
                println!("{}", run::csv_row(r.reports.len(), last));
            }
        }
        Command::Eval {
            config,
            checkpoint,
            data,
            split,
        } => {
            let cfg = ExperimentConfig::load(&config)?;
            let split = match split {
                SplitArg::Train => Split::Train,
                SplitArg::Heldout => Split::Heldout,
                SplitArg::All => Split::All,
            };
            let r = run::evaluate_checkpoint(&cfg, &checkpoint, &data, split)?;
            let [free, unknown, occupied, moving] = r.iou.per_class;
            println!("mean IoU      {}", fmt(r.iou.mean));
            println!("free IoU      {}", fmt(free));
            println!("unknown IoU   {}", fmt(unknown));
            println!("occupied IoU  {}", fmt(occupied));
            println!("moving IoU    {}", fmt(moving));
            println!("velocity MAE  {}", fmt(r.mae));
            println!("fast MAE      {} (> {} m/s)", fmt(r.mae_fast), run::fast_threshold(&cfg)?);
            println!("parameters    {}", r.params);
        }
        Command::Viz {
            checkpoint,
            sequence,
            out,
        } => {
            let n = run::viz(&checkpoint, &sequence, &out)?;
            println!("rendered {n} frames to {}", out.display());
        }
        Command::Gradcheck { module, seed } => {
            let results = run::gradcheck(module.as_deref(), seed)?;
            let mut ok = true;
            for r in &results {
                ok &= r.passed();
                println!(
                    "{:<4} {:<10} {:<24} max rel error {:.3e} (< {:.0e}, {} coords)",
                    if r.passed() { "ok" } else { "FAIL" },
                    r.module,
                    r.name,
                    r.max_rel_error,
                    r.tolerance,
                    r.coordinates
                );
            }
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}
