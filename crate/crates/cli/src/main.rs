use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use conelab_cli::checks::{cmd_selftest, Level};
use conelab_cli::{commands, CliError, Config, Outcome};

/// Reproducible batch experiments on the cone scattering model.
#[derive(Parser)]
#[command(name = "conelab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON config; omitted fields take their defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory for report.json and the CSV tables.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Command {
    /// Eigenvalues of P and P_f in a window.
    Spectrum,
    /// Mourre constant over a lambda grid.
    Mourre,
    /// Weighted resolvent norms as eps decreases.
    Lap,
    /// Decay of the Cook integrand.
    Cook,
    /// W(T) phi, Cauchy increments and duality.
    Waveop,
    /// Mass bookkeeping of the dual approximant.
    Complete,
    /// Angular localization of an evolving packet.
    Localize,
    /// Invariant suite.
    Selftest {
        #[arg(long, value_enum, default_value = "quick")]
        level: Level,
    },
    /// Print the materialized config and exit.
    Config,
}

fn run(cli: &Cli) -> Result<Option<Outcome>, CliError> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| CliError::Config(format!("thread pool: {e}")))?;
    }
    let mut config = match &cli.config {
        Some(p) => Config::load(p)?,
        None => Config::default(),
    };
    if let Some(s) = cli.seed {
        config.seed = s;
    }
    let outcome = match &cli.command {
        Command::Spectrum => commands::cmd_spectrum(&config)?,
        Command::Mourre => commands::cmd_mourre(&config)?,
        Command::Lap => commands::cmd_lap(&config)?,
        Command::Cook => commands::cmd_cook(&config)?,
        Command::Waveop => commands::cmd_waveop(&config)?,
        Command::Complete => commands::cmd_complete(&config)?,
        Command::Localize => commands::cmd_localize(&config)?,
        Command::Selftest { level } => cmd_selftest(*level, &config),
        Command::Config => {
            println!("{}", serde_json::to_string_pretty(&config).expect("config serializes"));
            return Ok(None);
        }
    };
    Ok(Some(outcome))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(None) => ExitCode::SUCCESS,
        Ok(Some(mut outcome)) => {
            let path = match outcome.write(&cli.out) {
                Ok(p) => p,
                Err(e) => {
                    eprintln!("{e}");
                    return ExitCode::from(e.exit_code() as u8);
                }
            };
            let r = &outcome.report;
            println!("{}: {} ({:.1} s) -> {}", r.command, if r.passed { "ok" } else { "FAILED" }, r.wall_time_s, path.display());
            for v in &r.violations {
                println!("  violation: {v}");
            }
            if r.passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
