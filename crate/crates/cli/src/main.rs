use anyhow::Result;
use clap::{Parser, Subcommand};
use dopcomp_cli::commands;
use dopcomp_cli::config::{ExperimentConfig, Overrides};
use std::path::PathBuf;
use std::process::ExitCode;

/// Distributed frequency pre-compensation simulator.
///
/// Exit codes for `run`: 0 converged, 1 config error, 2 iteration cap
/// reached, 3 divergence detected.
#[derive(Parser)]
#[command(name = "dopcomp", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment from a JSON config.
    Run {
        /// Path to the JSON config document.
        #[arg(long)]
        config: PathBuf,
        /// Override the config seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Override the output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Override the algorithm: gbp, lsbp, or ml.
        #[arg(long)]
        algorithm: Option<String>,
        /// Override the packet delivery ratio.
        #[arg(long)]
        pdr: Option<f64>,
        /// Override the convergence threshold (Hz).
        #[arg(long)]
        th: Option<f64>,
        /// Override the iteration cap.
        #[arg(long = "l-max")]
        l_max: Option<u64>,
    },
    /// Run a canned experiment: fig6, fig7, fig9, fig10, or fig11.
    Preset {
        name: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Scales the vehicle counts of the simulation presets.
        #[arg(long, default_value_t = 1.0)]
        scale: f64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Run a verification suite: property2, theorem1, theorem2,
    /// tree-exactness, or def1. Exits nonzero on any failed check.
    Verify {
        suite: String,
        #[arg(long, default_value_t = 1)]
        seed: u64,
        /// Random vectors per graph where applicable.
        #[arg(long, default_value_t = 50)]
        trials: u32,
    },
    /// Generate a scenario and write it to disk without running an engine.
    Gen {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load_config(path: &PathBuf, overrides: &Overrides) -> Result<ExperimentConfig> {
    let mut config = ExperimentConfig::load(path)?;
    config.apply_overrides(overrides)?;
    config.validate()?;
    Ok(config)
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Run { config, seed, out, algorithm, pdr, th, l_max } => {
            let overrides = Overrides {
                seed,
                out: out.map(|p| p.display().to_string()),
                algorithm,
                pdr,
                th,
                l_max,
            };
            let config = load_config(&config, &overrides)?;
            let out_dir = PathBuf::from(&config.out_dir);
            commands::run::execute(&config, &out_dir)
        }
        Command::Preset { name, seed, scale, out } => {
            commands::preset::execute(&name, seed, scale, &out)
        }
        Command::Verify { suite, seed, trials } => commands::verify::execute(&suite, seed, trials),
        Command::Gen { config, seed, out } => {
            let overrides = Overrides {
                seed,
                out: out.map(|p| p.display().to_string()),
                ..Overrides::default()
            };
            let config = load_config(&config, &overrides)?;
            let out_dir = PathBuf::from(&config.out_dir);
            commands::gen::execute(&config, &out_dir)
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(error) => {
            eprintln!("error: {error:#}");
            ExitCode::from(1)
        }
    }
}
