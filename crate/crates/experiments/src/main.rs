use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use sgdvi_experiments::{replay, run_command, Command, CliError, CurveFile, ExperimentSpec};

/// Train with an online estimate of the log marginal likelihood.
///
/// Configuration comes from a TOML file (`--config`) with `--set key=value`
/// overrides on dotted keys, e.g. `--set run.alpha=0.01 --set model.hidden=30`.
/// Results go to `--out` (default `runs/<command>`); every curve file echoes
/// the resolved configuration and can be regenerated with `replay`.
///
/// Exit codes: 0 success, 1 run failure, 2 configuration error.
#[derive(Parser, Debug)]
#[command(name = "sgdvi", version)]
struct Cli {
    /// Experiment spec in TOML.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,
    /// Override a spec key (repeatable), e.g. `run.steps=500`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Sets run.seed_init, run.seed_batch and run.seed_probe together.
    #[arg(long, global = true, value_name = "N")]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// One training run; writes curve.csv with the per-iteration bound.
    Train,
    /// Grid over one of hidden, g0, alpha, sigma0 with matched seeds.
    Sweep,
    /// Particle clouds on a 2-D objective for each configured threshold.
    Particles2d,
    /// Compare the estimators against independent references.
    OracleCheck,
    /// Independent runs as posterior samples.
    Ensemble,
    /// Regenerate an experiment from the config echoed in a curve file.
    Replay {
        /// Any CSV written by a previous run
        #[arg(long, value_name = "CURVE")]
        from: PathBuf,
    },
}

fn run(cli: Cli) -> Result<Vec<PathBuf>, CliError> {
    let command = match cli.command {
        Cmd::Replay { from } => {
            let out = cli.out.unwrap_or_else(|| PathBuf::from("runs/replay"));
            return replay(&from, &out);
        }
        Cmd::Train => Command::Train,
        Cmd::Sweep => Command::Sweep,
        Cmd::Particles2d => Command::Particles2d,
        Cmd::OracleCheck => Command::OracleCheck,
        Cmd::Ensemble => Command::Ensemble,
    };
    let mut spec = ExperimentSpec::load(cli.config.as_deref(), &cli.set)?;
    if let Some(s) = cli.seed {
        spec.set_seed(s);
    }
    let out = cli.out.unwrap_or_else(|| PathBuf::from("runs").join(command.name()));
    run_command(command, &spec, &out)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(files) => {
            for f in &files {
                println!("{}", f.display());
                if let Ok(c) = CurveFile::read(f) {
                    for (k, v) in &c.meta {
                        println!("  {k} = {v}");
                    }
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
