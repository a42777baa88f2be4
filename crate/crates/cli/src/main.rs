//! `psgm`: run experiments, verifier suites and comparisons from a config file.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod output;

use commands::{Suite, VerifyParams};
use config::{Overrides, ScenarioTag};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("run aborted: {0}")]
    Aborted(String),
    #[error("verification failed")]
    VerifyFailed,
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Invalid(_) => 2,
            CliError::Aborted(_) => 3,
            CliError::VerifyFailed => 4,
            CliError::Io(_) => 1,
        }
    }
}

#[derive(Parser)]
#[command(
    name = "psgm",
    version,
    about = "Preconditioned stochastic gradient experiments"
)]
struct Cli {
    /// Worker threads for replicas and oracles (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<String>,
    #[arg(long)]
    full_scale: bool,
    /// Replica / draw count override.
    #[arg(long)]
    replicas: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write trace.csv, final_coefficients.csv, report.json.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Run verifier suites and write report.json.
    Verify {
        #[arg(value_enum, default_value = "all")]
        suite: Suite,
        #[command(flatten)]
        common: Common,
    },
    /// Constrained PSGM against the all-samples least-squares baseline.
    Compare {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        steps: Option<u64>,
        #[command(flatten)]
        common: Common,
    },
    /// Print the fully resolved preset configuration as TOML.
    PresetDump {
        #[arg(value_enum)]
        scenario: PresetTag,
        #[arg(long)]
        full_scale: bool,
    },
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum PresetTag {
    Crf,
    Equalizer,
}

fn overrides(c: &Common, steps: Option<u64>) -> Result<Overrides, CliError> {
    Overrides {
        seed: c.seed,
        out: c.out.clone(),
        steps,
        full_scale: c.full_scale,
        replicas: c.replicas,
    }
    .with_env()
}

fn load(path: &PathBuf, ov: &Overrides) -> Result<config::Resolved, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::Invalid(format!("cannot read {}: {e}", path.display())))?;
    config::parse(&text)?.resolve(ov)
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(CliError::Invalid("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Invalid(format!("--threads: {e}")))?;
    }
    match cli.command {
        Command::Run {
            config,
            steps,
            common,
        } => {
            let r = load(&config, &overrides(&common, steps)?)?;
            commands::cmd_run(&r)
        }
        Command::Compare {
            config,
            steps,
            common,
        } => {
            let r = load(&config, &overrides(&common, steps)?)?;
            commands::cmd_compare(&r)
        }
        Command::Verify { suite, common } => {
            let ov = overrides(&common, None)?;
            commands::cmd_verify(&VerifyParams {
                suite,
                seed: ov.seed.unwrap_or(config::DEFAULT_SEED),
                replicas: ov.replicas,
                full_scale: ov.full_scale,
                out: ov.out.unwrap_or_else(|| config::DEFAULT_OUT.to_string()),
            })
        }
        Command::PresetDump {
            scenario,
            full_scale,
        } => {
            let tag = match scenario {
                PresetTag::Crf => ScenarioTag::Crf,
                PresetTag::Equalizer => ScenarioTag::Equalizer,
            };
            print!(
                "{}",
                commands::cmd_preset_dump(&config::preset(tag, full_scale))?
            );
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("psgm: {e}");
            ExitCode::from(e.code())
        }
    }
}
