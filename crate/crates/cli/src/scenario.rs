//! The strategy decision phase and the training phase for one scenario,
//! plus the CSV writers for their traces.

use serde::Serialize;
use stalefl_core::{
    evaluate_strategy, optimize_server, Evaluation, Plan, Profile, ServerOptimum, Strategy,
    StrategyEvaluation,
};
use stalefl_sim::{run_training, TrainingReport};

use crate::config::ExperimentConfig;
use crate::error::Result;
use crate::output::{num, OutputDir};
use crate::population::sample_profiles;

/// Rounds averaged into the reported accuracy of a training run.
pub const ACCURACY_WINDOW: usize = 5;

/// A resolved config together with its sampled client population.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub config: ExperimentConfig,
    pub profiles: Vec<Profile>,
}

impl Scenario {
    pub fn new(config: ExperimentConfig) -> Result<Self> {
        let profiles = sample_profiles(&config.population, config.seed)?;
        Ok(Self { config, profiles })
    }

    /// Optimizes `(R, θ)` at time sensitivity `σ`.
    pub fn solve_at(&self, sigma: f64) -> Result<ServerOptimum> {
        Ok(optimize_server(
            &self.profiles,
            &self.config.server_params_at(sigma),
            &self.config.bo_config(),
            &self.config.fixed_point,
        )?)
    }

    pub fn solve(&self) -> Result<ServerOptimum> {
        self.solve_at(self.config.server.time_sensitivity)
    }

    /// Equilibrium and cost of a fixed strategy at `σ`.
    pub fn evaluate_at(&self, strategy: Strategy, sigma: f64) -> Result<StrategyEvaluation> {
        Ok(evaluate_strategy(
            strategy,
            &self.profiles,
            &self.config.server_params_at(sigma),
            &self.config.fixed_point,
        )?)
    }

    /// Runs the training phase for `plans` on the stream at `σ`.
    pub fn train_at(
        &self,
        strategy: &Strategy,
        plans: &[Plan],
        sigma: f64,
    ) -> Result<TrainingReport> {
        Ok(run_training(
            strategy,
            plans,
            &self.config.stream_at(sigma),
            &self.config.training,
        )?)
    }
}

/// The no-update reference: no payment and nothing discarded, so no client collects.
pub fn no_update_strategy() -> Strategy {
    Strategy {
        payment: 0.0,
        conservation: 1.0,
    }
}

/// Whether every planned increment is negligible.
pub fn update_ceased(plans: &[Plan]) -> bool {
    plans.iter().flat_map(|p| &p.increments).all(|&d| d < 0.5)
}

#[derive(Debug, Clone, Serialize)]
pub struct EquilibriumSummary {
    pub payment: f64,
    pub conservation: f64,
    pub cost: f64,
    pub payment_cost: f64,
    pub volume_cost: f64,
    pub staleness_cost: f64,
    pub iterations: usize,
    pub final_residual: f64,
    pub tolerance: f64,
    pub converged: bool,
    pub total_collection: f64,
    pub update_ceased: bool,
}

impl EquilibriumSummary {
    pub fn of(eval: &StrategyEvaluation) -> Self {
        let eq = &eval.equilibrium;
        Self {
            payment: eval.strategy.payment,
            conservation: eval.strategy.conservation,
            cost: eval.cost.total,
            payment_cost: eval.cost.payment,
            volume_cost: eval.cost.volume,
            staleness_cost: eval.cost.staleness,
            iterations: eq.iterations_used,
            final_residual: eq.final_residual(),
            tolerance: eq.tolerance,
            converged: eq.converged,
            total_collection: eq.plans.iter().map(|p| p.total_collection()).sum(),
            update_ceased: update_ceased(&eq.plans),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct TrainingSummary {
    pub label: String,
    pub final_accuracy: f64,
    /// Mean accuracy over the last [`ACCURACY_WINDOW`] rounds.
    pub accuracy: f64,
    pub final_loss: f64,
}

impl TrainingSummary {
    pub fn of(label: &str, report: &TrainingReport) -> Self {
        Self {
            label: label.to_string(),
            final_accuracy: report.final_accuracy(),
            accuracy: report.tail_accuracy(ACCURACY_WINDOW),
            final_loss: report.rounds.last().map_or(0.0, |r| r.loss),
        }
    }
}

pub fn write_profiles(out: &mut OutputDir, profiles: &[Profile]) -> Result<()> {
    let mut t = out.table(
        "profiles.csv",
        &["client", "collect_cost", "train_cost", "initial_volume"],
    )?;
    for (k, p) in profiles.iter().enumerate() {
        t.row([
            k.to_string(),
            num(p.collect_cost),
            num(p.train_cost),
            num(p.initial_volume),
        ])?;
    }
    Ok(())
}

pub const BO_TRACE_COLUMNS: [&str; 10] = [
    "sigma",
    "iteration",
    "phase",
    "payment",
    "conservation",
    "cost",
    "converged",
    "incumbent",
    "expected_improvement",
    "is_best",
];

pub fn bo_trace_rows(sigma: f64, optimum: &ServerOptimum) -> Vec<Vec<String>> {
    let best = optimum.best_strategy;
    let mut marked = false;
    optimum
        .trace
        .iter()
        .map(|e: &Evaluation| {
            let is_best =
                !marked && e.payment == best.payment && e.conservation == best.conservation;
            marked |= is_best;
            vec![
                num(sigma),
                e.iteration.to_string(),
                format!("{:?}", e.phase).to_lowercase(),
                num(e.payment),
                num(e.conservation),
                num(e.cost),
                e.converged.to_string(),
                num(e.incumbent),
                e.expected_improvement.map(num).unwrap_or_default(),
                is_best.to_string(),
            ]
        })
        .collect()
}

/// Per-round field, totals and population means `Δ̄(t)`, `D̄(t)`, `S̄(t)`, plus the residual history.
pub fn write_equilibrium(out: &mut OutputDir, eval: &StrategyEvaluation) -> Result<()> {
    let eq = &eval.equilibrium;
    let n = eq.plans.len().max(1) as f64;
    let totals = eq.total_volumes();
    let mut t = out.table(
        "mean_field.csv",
        &[
            "round",
            "initial_field",
            "field",
            "total_volume",
            "mean_increment",
            "mean_volume",
            "mean_staleness",
        ],
    )?;
    for (r, total) in totals.iter().enumerate() {
        let mean = |f: fn(&Plan) -> &Vec<f64>| eq.plans.iter().map(|p| f(p)[r]).sum::<f64>() / n;
        t.row([
            r.to_string(),
            num(eq.initial_field.values()[r]),
            num(eq.field.values()[r]),
            num(*total),
            num(mean(|p| &p.increments)),
            num(mean(|p| &p.volumes)),
            num(mean(|p| &p.staleness)),
        ])?;
    }
    let mut t = out.table("residuals.csv", &["iteration", "residual", "tolerance"])?;
    for (i, r) in eq.residual_history.iter().enumerate() {
        t.row([i.to_string(), num(*r), num(eq.tolerance)])?;
    }
    Ok(())
}

pub fn write_plans(out: &mut OutputDir, eval: &StrategyEvaluation) -> Result<()> {
    let eq = &eval.equilibrium;
    let mut t = out.table(
        "plans.csv",
        &[
            "client",
            "round",
            "increment",
            "volume",
            "costate",
            "staleness",
            "payment_share",
        ],
    )?;
    for (k, plan) in eq.plans.iter().enumerate() {
        for r in 0..plan.horizon() {
            let share = eval.strategy.payment * plan.volumes[r] / eq.field.values()[r];
            t.row([
                k.to_string(),
                r.to_string(),
                num(plan.increments[r]),
                num(plan.volumes[r]),
                num(plan.costates[r]),
                num(plan.staleness[r]),
                num(share),
            ])?;
        }
    }
    Ok(())
}

pub const TRAINING_COLUMNS: [&str; 9] = [
    "label",
    "sigma",
    "round",
    "accuracy",
    "loss",
    "total_volume",
    "mean_staleness",
    "skipped_clients",
    "model_kept",
];

pub fn training_rows(label: &str, sigma: f64, report: &TrainingReport) -> Vec<Vec<String>> {
    report
        .rounds
        .iter()
        .map(|m| {
            vec![
                label.to_string(),
                num(sigma),
                m.round.to_string(),
                num(m.accuracy),
                num(m.loss),
                m.total_volume.to_string(),
                num(m.mean_staleness),
                m.skipped_clients.len().to_string(),
                m.model_kept.to_string(),
            ]
        })
        .collect()
}
