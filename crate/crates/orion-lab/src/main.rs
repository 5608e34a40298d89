use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use orion_lab::runner;
use orion_lab::{ExperimentConfig, LabError};

#[derive(Parser)]
#[command(
    name = "orion-lab",
    about = "Causal-analysis experiments on transformer language models",
    version
)]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Override the config's worker count.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Override the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the configured task dataset and check its desiderata.
    Generate,
    /// Re-validate a generated dataset and write the violation report.
    Validate,
    /// Score the dataset and persist normalization baselines.
    Baseline,
    /// Residual-stream patching sweep over sampled example pairs.
    Sweep,
    /// Derive limit layers L1/L2/L3 from the sweep.
    Limits,
    /// Interchange intervention accuracy against the high-level causal graph.
    Iia,
    /// Per-component direct effects on selected examples.
    DirectEffect,
    /// Build distractor datasets and evaluate hardening plus predicates A/B.
    Oversight,
    /// Render the text report from all artifacts present.
    Report,
}

impl Command {
    fn run(&self, cfg: &ExperimentConfig) -> orion_lab::Result<Vec<PathBuf>> {
        match self {
            Command::Generate => runner::cmd_generate(cfg),
            Command::Validate => runner::cmd_validate(cfg),
            Command::Baseline => runner::cmd_baseline(cfg),
            Command::Sweep => runner::cmd_sweep(cfg),
            Command::Limits => runner::cmd_limits(cfg),
            Command::Iia => runner::cmd_iia(cfg),
            Command::DirectEffect => runner::cmd_direct_effect(cfg),
            Command::Oversight => runner::cmd_oversight(cfg),
            Command::Report => runner::cmd_report(cfg),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let config_path = match &cli.config {
        Some(p) => p.clone(),
        None => {
            eprintln!("error: --config <path> is required");
            return ExitCode::from(2);
        }
    };
    let mut cfg = match ExperimentConfig::load(&config_path) {
        Ok(c) => c,
        Err(e) => return fail(e),
    };
    if let Some(out) = cli.out {
        cfg.out_dir = out;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command.run(&cfg) {
        Ok(files) => {
            for f in files {
                println!("{}", f.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => fail(e),
    }
}

fn fail(e: LabError) -> ExitCode {
    eprintln!("error: {e}");
    ExitCode::from(e.exit_code())
}
