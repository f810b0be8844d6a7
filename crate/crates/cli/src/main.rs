use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use ddrl_cli::config::{self, ExperimentSpec, SweepSpec};
use ddrl_cli::experiment;
use ddrl_core::ingest::CifarFormat;
use ddrl_core::model_io;

#[derive(Parser)]
#[command(name = "ddrl", version, about = "Hierarchical k-means features for CIFAR images")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (JSON)
    #[arg(long)]
    config: PathBuf,
    /// Overrides executor.workers
    #[arg(long)]
    workers: Option<usize>,
    /// Overrides seed
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides output_dir
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and partition the dataset, print subset sizes
    Ingest(Common),
    /// Train the base config (sweep ignored)
    Train(Common),
    /// Run every config in the sweep
    Experiment {
        #[command(flatten)]
        common: Common,
        /// Run sweep entries concurrently
        #[arg(long)]
        parallel_runs: bool,
    },
    /// Classify images with a saved model
    Infer {
        #[arg(long)]
        model: PathBuf,
        /// CIFAR binary file or directory
        #[arg(long)]
        input: PathBuf,
        #[arg(long, value_enum, default_value = "cifar10")]
        format: Format,
        #[arg(long)]
        limit: Option<usize>,
        /// Predictions CSV goes here
        #[arg(long, default_value = "predictions.csv")]
        out: PathBuf,
        /// Also dump pooled features
        #[arg(long)]
        features_csv: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Format {
    Cifar10,
    Cifar100,
}

fn load(common: &Common) -> Result<ExperimentSpec> {
    let mut spec = config::parse_config(&common.config)?;
    if let Some(w) = common.workers {
        spec.executor.workers = w;
    }
    if let Some(s) = common.seed {
        spec.seed = s;
    }
    if let Some(o) = &common.out {
        spec.output_dir = o.clone();
    }
    spec.validate()?;
    Ok(spec)
}

fn report(summary: &experiment::ExperimentSummary) -> ExitCode {
    let failed = summary.failures();
    println!(
        "{} runs, {} failed; results in {}",
        summary.outcomes.len(),
        failed,
        summary.out_dir.display()
    );
    if failed > 0 {
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}

fn run() -> Result<ExitCode> {
    match Cli::parse().cmd {
        Command::Ingest(c) => {
            let spec = load(&c)?;
            let r = experiment::ingest_report(&spec)?;
            std::fs::create_dir_all(&spec.output_dir)?;
            let path = spec.output_dir.join("ingest.json");
            std::fs::write(&path, serde_json::to_string_pretty(&r)?)?;
            println!("train {} test {} subsets {:?}", r.train_images, r.test_images, r.subset_sizes);
            Ok(ExitCode::SUCCESS)
        }
        Command::Train(c) => {
            let mut spec = load(&c)?;
            spec.sweep = SweepSpec::default();
            Ok(report(&experiment::run_experiment(&spec)?))
        }
        Command::Experiment { common, parallel_runs } => {
            let mut spec = load(&common)?;
            spec.parallel_runs |= parallel_runs;
            Ok(report(&experiment::run_experiment(&spec)?))
        }
        Command::Infer {
            model,
            input,
            format,
            limit,
            out,
            features_csv,
        } => {
            let m = model_io::load_model(&model).with_context(|| format!("loading {}", model.display()))?;
            let format = match format {
                Format::Cifar10 => CifarFormat::Cifar10,
                Format::Cifar100 => CifarFormat::Cifar100,
            };
            let images = experiment::load_images(&input, format, limit)?;
            let acc = experiment::write_predictions(&m, &images, &out, features_csv.as_deref())?;
            println!("{} images, accuracy {acc:.4}", images.len());
            Ok(ExitCode::SUCCESS)
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
