use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stalefl_cli::{load_config, run_scenario, Command, ExperimentConfig, Preset, RunRecord};

/// Staleness-aware data-update experiments.
#[derive(Debug, Parser)]
#[command(name = "stalefl", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// TOML file overriding the preset.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value = "desk")]
    preset: Preset,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Overrides the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Choose (R, θ) and report the equilibrium.
    Solve,
    /// Choose (R, θ), then run federated training under it.
    Train,
    /// Compare the chosen strategy with zero, random, no-update and ablated strategies.
    Baselines,
    /// Choose (R, θ) at every time sensitivity of the sweep.
    Sweep {
        /// Comma-separated σ values replacing the configured grid.
        #[arg(long, value_delimiter = ',')]
        sigmas: Option<Vec<f64>>,
    },
    /// Evaluate the server cost on a dense (R, θ) grid.
    Grid {
        /// Points per axis.
        #[arg(long)]
        resolution: Option<usize>,
    },
}

fn resolve(cli: &Cli) -> Result<(Command, ExperimentConfig), stalefl_cli::ConfigError> {
    let mut config = load_config(cli.preset, cli.config.as_deref())?;
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    if let Some(out) = &cli.out {
        config.output_dir = out.clone();
    }
    let command = match &cli.command {
        Cmd::Solve => Command::Solve,
        Cmd::Train => Command::Train,
        Cmd::Baselines => Command::Baselines,
        Cmd::Sweep { sigmas } => {
            if let Some(s) = sigmas {
                config.sweep.sigmas = s.clone();
            }
            Command::Sweep
        }
        Cmd::Grid { resolution } => {
            if let Some(r) = resolution {
                config.grid.resolution = *r;
            }
            Command::Grid
        }
    };
    Ok((command, config.checked()?))
}

fn report(record: &RunRecord) {
    if let Some(eq) = &record.equilibrium {
        println!(
            "R* = {:.3}  θ* = {:.4}  cost = {:.6}  mean-field iterations = {}",
            eq.payment, eq.conservation, eq.cost, eq.iterations
        );
    }
    for t in &record.training {
        println!(
            "{:<16} accuracy {:.4} (final {:.4})",
            t.label, t.accuracy, t.final_accuracy
        );
    }
    if let Some(d) = &record.dominance {
        println!(
            "optimal plan strictly dominates zero and random plans: {}",
            d.holds
        );
    }
    for p in &record.sweep {
        println!(
            "σ = {:<5} R* = {:>8.3}  θ* = {:.4}  ceased = {}",
            p.sigma, p.payment, p.conservation, p.update_ceased
        );
    }
    if let (Some(g), Some(gap)) = (&record.grid_best, record.grid_gap) {
        println!(
            "grid minimum {:.6} at ({:.3}, {:.4}); optimizer gap {:+.3}%",
            g.cost,
            g.payment,
            g.conservation,
            100.0 * gap
        );
    }
    println!("outputs: {}", record.config.output_dir.display());
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (command, config) = match resolve(&cli) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("config error: {e}");
            return ExitCode::from(2);
        }
    };
    match run_scenario(command, config) {
        Ok(record) => {
            report(&record);
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
