use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use knnlab::adversarial::Mode;
use knnlab::experiments::{run_to_writer, Experiment, ExperimentConfig, ExperimentError, StageRange};

#[derive(Clone, Copy, Debug, ValueEnum)]
enum Command {
    Consistency,
    Baseline,
    Coverhart,
    Dimension,
    Schedule,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum CliMode {
    Proof,
    Empirical,
}

/// k-NN consistency laboratory.
#[derive(Debug, Parser)]
#[command(name = "lab", version)]
struct Cli {
    #[arg(value_enum)]
    command: Command,
    #[arg(long)]
    seed: Option<u64>,
    /// JSON file with an experiment configuration; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long, value_enum)]
    mode: Option<CliMode>,
    /// Inclusive stage range `A..B`.
    #[arg(long)]
    stages: Option<StageRange>,
    #[arg(long)]
    test_count: Option<usize>,
}

fn build_config(cli: &Cli) -> Result<ExperimentConfig, ExperimentError> {
    let mut config = match &cli.config {
        Some(path) => serde_json::from_reader(File::open(path)?)?,
        None => ExperimentConfig::default(),
    };
    config.experiment = match cli.command {
        Command::Consistency => Experiment::Consistency,
        Command::Baseline => Experiment::Baseline,
        Command::Coverhart => Experiment::Coverhart,
        Command::Dimension => Experiment::Dimension,
        Command::Schedule => Experiment::Schedule,
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(mode) = cli.mode {
        config.mode = match mode {
            CliMode::Proof => Mode::ProofBound,
            CliMode::Empirical => Mode::Empirical,
        };
    }
    if let Some(stages) = cli.stages {
        config.stages = stages;
    }
    if let Some(t) = cli.test_count {
        config.test_count = t;
    }
    if cli.out.is_some() {
        config.output_path = cli.out.clone();
    }
    Ok(config)
}

fn run(cli: &Cli) -> Result<(), ExperimentError> {
    let config = build_config(cli)?;
    match &config.output_path {
        Some(path) => {
            let mut w = BufWriter::new(File::create(path)?);
            run_to_writer(&config, &mut w)?;
            w.flush()?;
        }
        None => run_to_writer(&config, io::stdout().lock())?,
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
