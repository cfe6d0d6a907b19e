use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use rrsgd_harness::{default_out_dir, run_experiment, ExperimentConfig, ExperimentId, HarnessError, RunReport};

#[derive(Parser)]
#[command(name = "rrsgd", version, about = "Run SGD / resampling-reweighting experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a trajectory experiment from a config file or experiment name.
    Run(RunArgs),
    /// Run a stability scan config.
    Stability(RunArgs),
    /// Run an SDE study config.
    Sde(RunArgs),
    /// Print the fully resolved config (defaults, file, overrides) as JSON.
    ShowConfig {
        config: String,
        #[arg(long = "override", value_name = "KEY=VALUE")]
        overrides: Vec<String>,
    },
    /// List the known experiment ids.
    ListExperiments,
}

#[derive(Args)]
struct RunArgs {
    /// JSON config path, or a bare experiment id for its defaults.
    config: String,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory (default: the config's `out`, else runs/<id>).
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key.path=value` override, applied before validation. Repeatable.
    #[arg(long = "override", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

fn execute(args: &RunArgs, expect: &[ExperimentId]) -> Result<RunReport, HarnessError> {
    let mut overrides = args.overrides.clone();
    if let Some(seed) = args.seed {
        overrides.push(format!("seed={seed}"));
    }
    if let Some(trials) = args.trials {
        overrides.push(format!("trials={trials}"));
    }
    let cfg = ExperimentConfig::load(args.config.as_ref(), &overrides)?;
    if !expect.contains(&cfg.experiment) {
        let names: Vec<&str> = expect.iter().map(|e| e.name()).collect();
        return Err(HarnessError::Config(format!(
            "experiment {} does not belong to this subcommand (expected one of: {})",
            cfg.experiment,
            names.join(", ")
        )));
    }
    let out = args.out.clone().unwrap_or_else(|| default_out_dir(&cfg));
    let report = run_experiment(&cfg, &out)?;
    eprintln!(
        "{}: {} trials ({} diverged) -> {}",
        cfg.experiment,
        report.trials.len(),
        report.diverged(),
        out.display()
    );
    Ok(report)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let trajectory: Vec<ExperimentId> = ExperimentId::ALL
        .iter()
        .copied()
        .filter(|e| !matches!(e, ExperimentId::StabilityScan | ExperimentId::SdeStudy))
        .collect();
    let result = match &cli.command {
        Command::ListExperiments => {
            for id in ExperimentId::ALL {
                println!("{:<16} {}", id.name(), id.summary());
            }
            return ExitCode::SUCCESS;
        }
        Command::ShowConfig { config, overrides } => match ExperimentConfig::load(config.as_ref(), overrides) {
            Ok(cfg) => {
                print!("{}", cfg.to_json_pretty());
                return ExitCode::SUCCESS;
            }
            Err(e) => Err(e),
        },
        Command::Run(a) => execute(a, &trajectory).map(drop),
        Command::Stability(a) => execute(a, &[ExperimentId::StabilityScan]).map(drop),
        Command::Sde(a) => execute(a, &[ExperimentId::SdeStudy]).map(drop),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
