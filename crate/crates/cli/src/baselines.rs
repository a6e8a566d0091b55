//! Reference strategies compared against the chosen equilibrium.
//!
//! At the chosen `(R*, θ*)` and its mean field: the optimal plans, the
//! zero-collection plans and volume-matched random plans. As whole
//! strategies: the no-update reference `(0, 1)` and ablations that move
//! one of `R*`, `θ*` while holding the other.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use stalefl_core::{server_cost, Plan, Strategy, StrategyEvaluation};
use stalefl_sim::TrainingReport;

use crate::error::Result;
use crate::output::num;
use crate::scenario::{no_update_strategy, Scenario, TrainingSummary, ACCURACY_WINDOW};

/// Stream offset separating the random-plan generator from profile sampling.
const RANDOM_PLAN_STREAM: u64 = 0x7261_6e64;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BaselineRow {
    pub baseline: String,
    pub trial: Option<usize>,
    /// `None` for rows that aggregate all clients.
    pub client: Option<usize>,
    pub payment: f64,
    pub conservation: f64,
    pub total_collection: f64,
    pub utility: f64,
    pub server_cost: Option<f64>,
    pub accuracy: Option<f64>,
    pub converged: bool,
}

pub const BASELINE_COLUMNS: [&str; 10] = [
    "baseline",
    "trial",
    "client",
    "payment",
    "conservation",
    "total_collection",
    "utility",
    "server_cost",
    "accuracy",
    "converged",
];

impl BaselineRow {
    pub fn fields(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        vec![
            self.baseline.clone(),
            self.trial.map(|t| t.to_string()).unwrap_or_default(),
            self.client.map_or("all".into(), |k| k.to_string()),
            num(self.payment),
            num(self.conservation),
            num(self.total_collection),
            num(self.utility),
            opt(self.server_cost),
            opt(self.accuracy),
            self.converged.to_string(),
        ]
    }
}

/// Per-client comparison of the optimal plan against the plan-level baselines.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Dominance {
    pub optimal_utility: Vec<f64>,
    pub zero_utility: Vec<f64>,
    pub best_random_utility: Vec<f64>,
    /// Largest relative gap between a random plan's total collection and the optimal one.
    pub max_volume_mismatch: f64,
    /// Whether the optimal plan is strictly best for every client.
    pub holds: bool,
}

#[derive(Debug, Clone, Serialize)]
pub struct BaselineReport {
    pub rows: Vec<BaselineRow>,
    pub dominance: Dominance,
    pub training: Vec<TrainingSummary>,
    #[serde(skip)]
    pub reports: Vec<(String, TrainingReport)>,
}

/// Nonnegative increments summing to `total`, with uniform random weights on
/// rounds `0..T-1` and nothing in the last round.
pub fn random_matched_increments(total: f64, horizon: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut out = vec![0.0; horizon];
    if horizon < 2 || total <= 0.0 {
        return out;
    }
    let weights: Vec<f64> = (0..horizon - 1).map(|_| rng.random::<f64>()).collect();
    let sum: f64 = weights.iter().sum();
    for (o, w) in out.iter_mut().zip(&weights) {
        *o = total * w / sum;
    }
    out
}

fn strategy_row(name: &str, eval: &StrategyEvaluation) -> BaselineRow {
    let plans = &eval.equilibrium.plans;
    BaselineRow {
        baseline: name.into(),
        trial: None,
        client: None,
        payment: eval.strategy.payment,
        conservation: eval.strategy.conservation,
        total_collection: plans.iter().map(Plan::total_collection).sum(),
        utility: plans.iter().map(|p| p.utility).sum(),
        server_cost: Some(eval.cost.total),
        accuracy: None,
        converged: eval.equilibrium.converged,
    }
}

fn client_rows(
    name: &str,
    trial: Option<usize>,
    strategy: &Strategy,
    plans: &[Plan],
) -> Vec<BaselineRow> {
    plans
        .iter()
        .enumerate()
        .map(|(k, p)| BaselineRow {
            baseline: name.into(),
            trial,
            client: Some(k),
            payment: strategy.payment,
            conservation: strategy.conservation,
            total_collection: p.total_collection(),
            utility: p.utility,
            server_cost: None,
            accuracy: None,
            converged: true,
        })
        .collect()
}

/// Evaluates every baseline against `chosen`, the equilibrium at `(R*, θ*)`, at time sensitivity `σ`.
pub fn run_baselines(
    scn: &Scenario,
    chosen: &StrategyEvaluation,
    sigma: f64,
) -> Result<BaselineReport> {
    let cfg = &scn.config;
    let params = cfg.server_params_at(sigma);
    let star = chosen.strategy;
    let eq = &chosen.equilibrium;
    let horizon = eq.field.len();
    let mut rows = Vec::new();

    // Plan-level baselines under the equilibrium field.
    let optimal = &eq.plans;
    rows.extend(client_rows("optimal", None, &star, optimal));
    rows.push(strategy_row("optimal", chosen));

    let zero: Vec<Plan> = scn
        .profiles
        .iter()
        .map(|p| Plan::from_increments(p, &star, &eq.field, &vec![0.0; horizon]))
        .collect::<std::result::Result<_, _>>()?;
    rows.extend(client_rows("zero", None, &star, &zero));
    let zero_cost = server_cost(&star, &zero, &params)?;
    let mut zero_row = strategy_row("zero", chosen);
    zero_row.total_collection = 0.0;
    zero_row.utility = zero.iter().map(|p| p.utility).sum();
    zero_row.server_cost = Some(zero_cost.total);
    rows.push(zero_row);

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ RANDOM_PLAN_STREAM);
    let draws: Vec<Vec<Vec<f64>>> = (0..cfg.baselines.random_trials)
        .map(|_| {
            optimal
                .iter()
                .map(|p| random_matched_increments(p.total_collection(), horizon, &mut rng))
                .collect()
        })
        .collect();
    let random: Vec<(Vec<Plan>, f64)> = draws
        .par_iter()
        .map(|incs| {
            let plans: Vec<Plan> = scn
                .profiles
                .iter()
                .zip(incs)
                .map(|(p, d)| Plan::from_increments(p, &star, &eq.field, d))
                .collect::<std::result::Result<_, _>>()?;
            let cost = server_cost(&star, &plans, &params)?.total;
            Ok((plans, cost))
        })
        .collect::<std::result::Result<_, stalefl_core::GameError>>()?;
    let n = scn.profiles.len();
    let mut best_random = vec![f64::NEG_INFINITY; n];
    let mut mismatch: f64 = 0.0;
    for (trial, (plans, cost)) in random.iter().enumerate() {
        rows.extend(client_rows("random", Some(trial), &star, plans));
        for (k, p) in plans.iter().enumerate() {
            best_random[k] = best_random[k].max(p.utility);
            let target = optimal[k].total_collection();
            if target > 0.0 {
                mismatch = mismatch.max((p.total_collection() - target).abs() / target);
            }
        }
        rows.push(BaselineRow {
            trial: Some(trial),
            utility: plans.iter().map(|p| p.utility).sum(),
            server_cost: Some(*cost),
            ..strategy_row("random", chosen)
        });
    }
    let holds = (0..n).all(|k| {
        optimal[k].utility > zero[k].utility
            && (cfg.baselines.random_trials == 0 || optimal[k].utility > best_random[k])
    });
    let dominance = Dominance {
        optimal_utility: optimal.iter().map(|p| p.utility).collect(),
        zero_utility: zero.iter().map(|p| p.utility).collect(),
        best_random_utility: best_random,
        max_volume_mismatch: mismatch,
        holds,
    };

    // Strategy-level baselines, each with its own equilibrium.
    let mut strategies: Vec<(String, Strategy)> = vec![("no_update".into(), no_update_strategy())];
    for off in &cfg.baselines.theta_offsets {
        let theta = (star.conservation + off).clamp(0.0, 1.0);
        strategies.push((format!("theta{off:+}"), Strategy::new(star.payment, theta)?));
    }
    for f in &cfg.baselines.payment_factors {
        strategies.push((
            format!("payment_x{f}"),
            Strategy::new(star.payment * f, star.conservation)?,
        ));
    }
    let evals: Vec<StrategyEvaluation> = strategies
        .par_iter()
        .map(|(_, s)| scn.evaluate_at(*s, sigma))
        .collect::<Result<_>>()?;
    let first_strategy_row = rows.len();
    for ((name, s), eval) in strategies.iter().zip(&evals) {
        if name == "no_update" {
            rows.extend(client_rows(name, None, s, &eval.equilibrium.plans));
        }
        rows.push(strategy_row(name, eval));
    }

    let mut training = Vec::new();
    let mut reports = Vec::new();
    if cfg.baselines.train {
        let mut jobs: Vec<(String, Strategy, &[Plan])> = vec![
            ("optimal".into(), star, optimal.as_slice()),
            ("zero".into(), star, zero.as_slice()),
        ];
        for ((name, s), eval) in strategies.iter().zip(&evals) {
            jobs.push((name.clone(), *s, eval.equilibrium.plans.as_slice()));
        }
        reports = jobs
            .par_iter()
            .map(|(name, s, plans)| Ok((name.clone(), scn.train_at(s, plans, sigma)?)))
            .collect::<Result<Vec<_>>>()?;
        for (name, report) in &reports {
            let acc = report.tail_accuracy(ACCURACY_WINDOW);
            let start = if name == "optimal" || name == "zero" {
                0
            } else {
                first_strategy_row
            };
            if let Some(row) = rows[start..]
                .iter_mut()
                .find(|r| &r.baseline == name && r.client.is_none())
            {
                row.accuracy = Some(acc);
            }
            training.push(TrainingSummary::of(name, report));
        }
    }

    Ok(BaselineReport {
        rows,
        dominance,
        training,
        reports,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{ExperimentConfig, Preset};

    #[test]
    fn random_increments_match_total() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for horizon in [1, 2, 5, 30] {
            let d = random_matched_increments(123.0, horizon, &mut rng);
            assert_eq!(d.len(), horizon);
            assert_eq!(d[horizon - 1], 0.0);
            assert!(d.iter().all(|&x| x >= 0.0));
            if horizon >= 2 {
                assert!((d.iter().sum::<f64>() - 123.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn desk_baselines() {
        let mut config = ExperimentConfig::preset(Preset::Desk);
        config.baselines.random_trials = 20;
        config.baselines.train = false;
        let scn = Scenario::new(config).unwrap();
        let sigma = scn.config.server.time_sensitivity;
        let chosen = scn.solve().unwrap().best;
        let report = run_baselines(&scn, &chosen, sigma).unwrap();
        assert!(report.dominance.holds, "{:?}", report.dominance);
        assert!(report.dominance.max_volume_mismatch < 0.01);
        let no_update = report
            .rows
            .iter()
            .find(|r| r.baseline == "no_update" && r.client.is_none())
            .unwrap();
        assert_eq!(no_update.total_collection, 0.0);
        // Zero offset reproduces the chosen cost.
        let same = report
            .rows
            .iter()
            .find(|r| r.baseline == "theta+0")
            .unwrap();
        assert!((same.server_cost.unwrap() - chosen.cost.total).abs() <= 1e-9 * chosen.cost.total);
    }
}
