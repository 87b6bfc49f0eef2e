//! Command-line front end: simulate -> cancel -> recon -> metrics -> report.

use std::fs;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use emisense::error::Error;
use emisense::io::{read_config, TrainSettings};
use emisense::pipeline::{self, CancelJob, Method};

#[derive(Parser)]
#[command(name = "emisense", version, about = "Simulate, cancel and measure EMI in multi-coil MRI scans")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Cnn,
    Linear,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate a scenario; also writes the EMI-off reference `<out>.clean.emik`.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Override the scenario seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Fit a per-scan model and subtract its predictions.
    Cancel {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, value_enum)]
        method: MethodArg,
        #[arg(long)]
        out: PathBuf,
        /// Use this checkpoint instead of training.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Training seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Scenario file whose [train] section sets the training options.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        batch: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
        /// Divide hidden channel counts by this.
        #[arg(long)]
        channel_divisor: Option<usize>,
        /// Accept a model fitted on a different scan.
        #[arg(long)]
        allow_foreign_model: bool,
    },
    /// Reconstruct the averaged MRI-window image as a PGM.
    Recon {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Noise levels and EMI reduction of a cancelled dataset.
    Metrics {
        #[arg(long)]
        before: PathBuf,
        #[arg(long)]
        after: PathBuf,
        #[arg(long)]
        clean: PathBuf,
        /// Also write the metrics to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Collect run reports from a directory into one text report.
    Report {
        #[arg(long)]
        dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<(), Error> {
    match cli.command {
        Command::Simulate { config, out, seed } => {
            let (data, clean) = pipeline::simulate(&config, &out, seed)?;
            println!("dataset={}\nclean={}", data.display(), clean.display());
        }
        Command::Cancel {
            input,
            method,
            out,
            model,
            seed,
            config,
            epochs,
            batch,
            lr,
            channel_divisor,
            allow_foreign_model,
        } => {
            let mut train = match config {
                Some(c) => read_config(c)?.train,
                None => TrainSettings::default(),
            };
            let h = &mut train.hyper;
            h.seed = seed.unwrap_or(h.seed);
            h.epochs = epochs.unwrap_or(h.epochs);
            h.batch_size = batch.unwrap_or(h.batch_size);
            h.lr = lr.unwrap_or(h.lr);
            train.channel_divisor = channel_divisor.unwrap_or(train.channel_divisor);
            let method = match method {
                MethodArg::Cnn => Method::Cnn,
                MethodArg::Linear => Method::Linear,
            };
            let job = CancelJob { input, output: out, method, model, train, allow_foreign_model };
            let o = pipeline::run_cancel(&job)?;
            println!(
                "corrected={}\ncheckpoint={}\nreport={}\nresiduals={}",
                o.corrected.display(),
                o.checkpoint.display(),
                o.report.display(),
                o.residual_csv.display()
            );
        }
        Command::Recon { input, out } => {
            let img = pipeline::recon(&input, &out)?;
            println!("image={} rows={} cols={}", out.display(), img.rows(), img.cols());
        }
        Command::Metrics { before, after, clean, out } => {
            let text = pipeline::metrics(&before, &after, &clean)?.to_text();
            print!("{text}");
            if let Some(p) = out {
                fs::write(p, text)?;
            }
        }
        Command::Report { dir, out } => {
            let text = pipeline::report(&dir)?;
            print!("{text}");
            if let Some(p) = out {
                fs::write(p, text)?;
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) if !e.use_stderr() => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let msg = e.to_string();
            let first = msg.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error: E_USAGE: {first}");
            return ExitCode::from(1);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}: {e}", e.code());
            ExitCode::from(2)
        }
    }
}
