//! Batch experiments over the data-update game: strategy decision, the
//! training phase, baselines, time-sensitivity sweeps and a dense grid
//! reference, each writing CSV tables and a JSON run record.

pub mod baselines;
pub mod config;
pub mod error;
pub mod grid;
pub mod output;
pub mod population;
pub mod scenario;
pub mod sweep;

use std::time::Instant;

use serde::Serialize;
use stalefl_core::Evaluation;

pub use baselines::{run_baselines, BaselineReport, BaselineRow, Dominance};
pub use config::{load_config, ConfigError, ExperimentConfig, Preset};
pub use error::{CliError, Result};
pub use grid::{grid_search, GridPoint, GridResult};
pub use output::{config_hash, OutputDir};
pub use population::sample_profiles;
pub use scenario::{EquilibriumSummary, Scenario, TrainingSummary, ACCURACY_WINDOW};
pub use sweep::{run_sigma_sweep, trend_violations, SweepPoint};

use baselines::BASELINE_COLUMNS;
use grid::GRID_COLUMNS;
use scenario::{
    bo_trace_rows, training_rows, write_equilibrium, write_plans, write_profiles, BO_TRACE_COLUMNS,
    TRAINING_COLUMNS,
};
use sweep::SWEEP_COLUMNS;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Command {
    /// Strategy decision only.
    Solve,
    /// Strategy decision followed by the training phase.
    Train,
    /// Strategy decision followed by every baseline.
    Baselines,
    /// Strategy decision at each configured `σ`.
    Sweep,
    /// Dense grid of server costs next to an optimizer run.
    Grid,
}

/// Self-describing summary of one invocation.
#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub command: Command,
    pub scenario: String,
    pub seed: u64,
    pub config_hash: String,
    pub config: ExperimentConfig,
    pub files: Vec<String>,
    /// Whether every reported equilibrium converged.
    pub converged: bool,
    pub equilibrium: Option<EquilibriumSummary>,
    pub bo_trace: Vec<Evaluation>,
    pub training: Vec<TrainingSummary>,
    pub baselines: Vec<BaselineRow>,
    pub dominance: Option<Dominance>,
    pub sweep: Vec<SweepPoint>,
    pub grid_best: Option<GridPoint>,
    /// `(optimizer cost − grid minimum) / grid minimum`.
    pub grid_gap: Option<f64>,
    pub error: Option<String>,
    pub wall_clock_seconds: f64,
}

/// Runs `command`, writing its outputs under `config.output_dir`.
///
/// The run record is written even when the command fails. An unconverged
/// equilibrium is reported as [`CliError::NonConvergence`] after all
/// outputs are on disk.
pub fn run_scenario(command: Command, config: ExperimentConfig) -> Result<RunRecord> {
    let start = Instant::now();
    let mut out = OutputDir::create(&config)?;
    let mut record = RunRecord {
        command,
        scenario: config.scenario.clone(),
        seed: config.seed,
        config_hash: out.hash().to_string(),
        config: config.clone(),
        files: Vec::new(),
        converged: true,
        equilibrium: None,
        bo_trace: Vec::new(),
        training: Vec::new(),
        baselines: Vec::new(),
        dominance: None,
        sweep: Vec::new(),
        grid_best: None,
        grid_gap: None,
        error: None,
        wall_clock_seconds: 0.0,
    };
    let result = Scenario::new(config).and_then(|scn| {
        write_profiles(&mut out, &scn.profiles)?;
        execute(command, &scn, &mut out, &mut record)
    });
    if let Err(e) = &result {
        record.error = Some(e.to_string());
    }
    record.files = out.files().to_vec();
    record.files.push("run_record.json".into());
    record.wall_clock_seconds = start.elapsed().as_secs_f64();
    out.write_json("run_record.json", &record)?;
    result?;
    if !record.converged {
        return Err(CliError::NonConvergence(format!(
            "mean-field iteration did not converge; outputs in {}",
            out.dir().display()
        )));
    }
    Ok(record)
}

fn execute(
    command: Command,
    scn: &Scenario,
    out: &mut OutputDir,
    record: &mut RunRecord,
) -> Result<()> {
    let cfg = &scn.config;
    let sigma = cfg.server.time_sensitivity;
    if command == Command::Sweep {
        let points = run_sigma_sweep(scn, &cfg.sweep.sigmas, cfg.sweep.train, cfg.sweep.workers)?;
        let mut trace = out.table("bo_trace.csv", &BO_TRACE_COLUMNS)?;
        for p in &points {
            for row in bo_trace_rows(p.sigma, &p.optimum) {
                trace.row(row)?;
            }
        }
        let mut table = out.table("sweep.csv", &SWEEP_COLUMNS)?;
        for p in &points {
            table.row(p.fields())?;
        }
        record.converged = points.iter().all(|p| p.converged);
        record.sweep = points;
        return Ok(());
    }

    let optimum = scn.solve()?;
    let mut trace = out.table("bo_trace.csv", &BO_TRACE_COLUMNS)?;
    for row in bo_trace_rows(sigma, &optimum) {
        trace.row(row)?;
    }
    write_equilibrium(out, &optimum.best)?;
    write_plans(out, &optimum.best)?;
    let summary = EquilibriumSummary::of(&optimum.best);
    record.converged = summary.converged;
    record.equilibrium = Some(summary);
    record.bo_trace = optimum.trace.clone();

    match command {
        Command::Solve | Command::Sweep => {}
        Command::Train => {
            let report = scn.train_at(
                &optimum.best_strategy,
                &optimum.best.equilibrium.plans,
                sigma,
            )?;
            let mut table = out.table("training_metrics.csv", &TRAINING_COLUMNS)?;
            for row in training_rows("dufl", sigma, &report) {
                table.row(row)?;
            }
            record.training.push(TrainingSummary::of("dufl", &report));
        }
        Command::Baselines => {
            let report = run_baselines(scn, &optimum.best, sigma)?;
            let mut table = out.table("baselines.csv", &BASELINE_COLUMNS)?;
            for row in &report.rows {
                table.row(row.fields())?;
            }
            if !report.reports.is_empty() {
                let mut table = out.table("training_metrics.csv", &TRAINING_COLUMNS)?;
                for (label, r) in &report.reports {
                    for row in training_rows(label, sigma, r) {
                        table.row(row)?;
                    }
                }
            }
            record.converged &= report.rows.iter().all(|r| r.converged);
            record.baselines = report
                .rows
                .into_iter()
                .filter(|r| r.client.is_none())
                .collect();
            record.dominance = Some(report.dominance);
            record.training = report.training;
        }
        Command::Grid => {
            let g = grid_search(
                &scn.profiles,
                &cfg.server_params(),
                &cfg.fixed_point,
                cfg.bo.payment_range,
                cfg.bo.conservation_range,
                cfg.grid.resolution,
            )?;
            let mut table = out.table("grid.csv", &GRID_COLUMNS)?;
            for p in &g.points {
                table.row(p.fields())?;
            }
            record.grid_gap = Some((optimum.best_cost - g.best.cost) / g.best.cost.abs());
            record.grid_best = Some(g.best);
        }
    }
    Ok(())
}
