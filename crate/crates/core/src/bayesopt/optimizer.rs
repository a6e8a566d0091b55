//! GP-EI search over the server strategy box.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::acquisition::expected_improvement_from;
use super::gp::{gp_fit, Bounds};
use crate::error::{GameError, Result};
use crate::meanfield::{solve_mean_field, EquilibriumReport, FixedPointConfig};
use crate::planner::ClientProfile;
use crate::server::{server_cost, CostBreakdown, ServerParams, ServerStrategy};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BoConfig {
    /// `p`: low-discrepancy points evaluated before the first acquisition.
    pub initial_design_size: usize,
    /// `q`: uniform candidates scored by EI each round.
    pub candidate_pool_size: usize,
    /// `M`: total evaluations of the true cost.
    pub budget: usize,
    pub payment_range: [f64; 2],
    pub conservation_range: [f64; 2],
    pub seed: u64,
    /// Evaluate `(R_min, θ_max)`, the strategy that buys no fresh data, ahead of the design.
    pub anchor_no_update: bool,
    /// Fit the surrogate to `ln(cost)` while every observed cost is positive.
    pub log_costs: bool,
    /// Share of each candidate pool drawn around the incumbent instead of uniformly.
    pub local_fraction: f64,
    /// Standard deviation of the local candidates, as a fraction of each box side.
    pub local_scale: f64,
}

impl Default for BoConfig {
    fn default() -> Self {
        Self {
            initial_design_size: 8,
            candidate_pool_size: 1024,
            budget: 30,
            payment_range: [0.0, 500.0],
            conservation_range: [0.0, 1.0],
            seed: 0,
            anchor_no_update: true,
            log_costs: true,
            local_fraction: 0.25,
            local_scale: 0.05,
        }
    }
}

impl BoConfig {
    pub fn validate(&self) -> Result<()> {
        let invalid =
            |name: &'static str, reason: String| GameError::InvalidParameter { name, reason };
        if self.initial_design_size < 2 {
            return Err(invalid("initial_design_size", "must be at least 2".into()));
        }
        if self.budget < self.initial_design_size {
            return Err(invalid(
                "budget",
                format!(
                    "must be at least initial_design_size = {}",
                    self.initial_design_size
                ),
            ));
        }
        if !(0.0..=1.0).contains(&self.local_fraction) {
            return Err(invalid("local_fraction", "must lie in [0, 1]".into()));
        }
        if !(self.local_scale > 0.0) {
            return Err(invalid("local_scale", "must be positive".into()));
        }
        if self.candidate_pool_size == 0 {
            return Err(invalid("candidate_pool_size", "must be at least 1".into()));
        }
        if !(self.payment_range[0] >= 0.0) {
            return Err(invalid(
                "payment_range",
                "payments must be nonnegative".into(),
            ));
        }
        if !(self.conservation_range[0] >= 0.0 && self.conservation_range[1] <= 1.0) {
            return Err(invalid(
                "conservation_range",
                "must lie within [0, 1]".into(),
            ));
        }
        self.bounds().map(|_| ())
    }

    pub fn bounds(&self) -> Result<Bounds> {
        Bounds::new(
            [self.payment_range[0], self.conservation_range[0]],
            [self.payment_range[1], self.conservation_range[1]],
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Anchor,
    Initial,
    Acquisition,
}

/// One evaluation of the true cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub iteration: usize,
    pub phase: Phase,
    pub payment: f64,
    pub conservation: f64,
    pub cost: f64,
    /// Whether the cost came from a converged mean-field solve.
    pub converged: bool,
    /// Best cost seen so far, including this evaluation.
    pub incumbent: f64,
    /// EI that selected this point, for acquisition rounds.
    pub expected_improvement: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoOutcome {
    pub best_payment: f64,
    pub best_conservation: f64,
    pub best_cost: f64,
    pub best_iteration: usize,
    pub trace: Vec<Evaluation>,
}

/// Radical inverse of `i` in `base`.
fn radical_inverse(mut i: usize, base: usize) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while i > 0 {
        out += (i % base) as f64 * scale;
        i /= base;
        scale *= inv;
    }
    out
}

/// Halton points in bases 2 and 3 with a random Cranley–Patterson shift, in `[0,1)²`.
pub fn shifted_halton(n: usize, rng: &mut impl Rng) -> Vec<[f64; 2]> {
    let shift = [rng.random::<f64>(), rng.random::<f64>()];
    (1..=n)
        .map(|i| {
            [
                (radical_inverse(i, 2) + shift[0]).fract(),
                (radical_inverse(i, 3) + shift[1]).fract(),
            ]
        })
        .collect()
}

#[derive(Default)]
struct History {
    observations: Vec<([f64; 2], f64)>,
    trace: Vec<Evaluation>,
    best: usize,
}

impl History {
    fn push(&mut self, x: [f64; 2], phase: Phase, ei: Option<f64>, cost: f64, converged: bool) {
        let iteration = self.observations.len();
        if iteration == 0 || cost < self.observations[self.best].1 {
            self.best = iteration;
        }
        self.observations.push((x, cost));
        self.trace.push(Evaluation {
            iteration,
            phase,
            payment: x[0],
            conservation: x[1],
            cost,
            converged,
            incumbent: self.observations[self.best].1,
            expected_improvement: ei,
        });
    }
}

/// Targets for the GP: optionally log-transformed, then clipped at the upper
/// Tukey fence so that a few enormous costs do not flatten the rest.
fn surrogate_targets(observations: &[([f64; 2], f64)], use_log: bool) -> Vec<([f64; 2], f64)> {
    let mut ys: Vec<f64> = observations
        .iter()
        .map(|&(_, c)| if use_log { c.ln() } else { c })
        .collect();
    let mut sorted = ys.clone();
    sorted.sort_by(f64::total_cmp);
    let quantile = |q: f64| {
        let pos = q * (sorted.len() - 1) as f64;
        let (lo, hi) = (pos.floor() as usize, pos.ceil() as usize);
        sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
    };
    let (q1, q3) = (quantile(0.25), quantile(0.75));
    let fence = q3 + 1.5 * (q3 - q1);
    for y in &mut ys {
        *y = y.min(fence);
    }
    observations
        .iter()
        .zip(ys)
        .map(|(&(x, _), y)| (x, y))
        .collect()
}

/// Minimizes `objective` over the configured box.
///
/// `objective` returns the cost and whether it is trustworthy (converged).
pub fn minimize<F>(mut objective: F, cfg: &BoConfig) -> Result<BoOutcome>
where
    F: FnMut([f64; 2]) -> Result<(f64, bool)>,
{
    cfg.validate()?;
    let bounds = cfg.bounds()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut design: Vec<([f64; 2], Phase)> = Vec::new();
    if cfg.anchor_no_update {
        design.push(([bounds.lower[0], bounds.upper[1]], Phase::Anchor));
    }
    design.extend(
        shifted_halton(cfg.initial_design_size, &mut rng)
            .into_iter()
            .map(|u| (bounds.denormalize(u), Phase::Initial)),
    );
    design.truncate(cfg.budget);

    let mut history = History::default();
    let mut evaluate = |x: [f64; 2], phase, ei, history: &mut History| -> Result<()> {
        let (cost, converged) = objective(x)?;
        if !cost.is_finite() {
            return Err(GameError::InvalidParameter {
                name: "objective",
                reason: format!("non-finite cost {cost} at ({}, {})", x[0], x[1]),
            });
        }
        history.push(x, phase, ei, cost, converged);
        Ok(())
    };

    for (x, phase) in design {
        evaluate(x, phase, None, &mut history)?;
    }
    while history.observations.len() < cfg.budget {
        let observations = &history.observations;
        let use_log = cfg.log_costs && observations.iter().all(|o| o.1 > 0.0);
        let surrogate = surrogate_targets(observations, use_log);
        let gp = gp_fit(&surrogate, &bounds)?;
        let incumbent = surrogate.iter().map(|o| o.1).fold(f64::INFINITY, f64::min);
        let centre = bounds.normalize(observations[history.best].0);
        let local = (cfg.local_fraction * cfg.candidate_pool_size as f64).round() as usize;
        let spread = Normal::new(0.0, cfg.local_scale).expect("validated scale");
        let pool: Vec<[f64; 2]> = (0..cfg.candidate_pool_size)
            .map(|i| {
                let u = if i < local {
                    centre.map(|c| (c + spread.sample(&mut rng)).clamp(0.0, 1.0))
                } else {
                    [rng.random::<f64>(), rng.random::<f64>()]
                };
                bounds.denormalize(u)
            })
            .collect();
        let scored: Vec<(f64, f64)> = pool
            .par_iter()
            .map(|&x| {
                let p = gp.predict(x);
                (
                    expected_improvement_from(p.mean, p.std_dev, incumbent),
                    p.mean,
                )
            })
            .collect();
        let mut pick = 0;
        for (i, &(ei, mean)) in scored.iter().enumerate().skip(1) {
            let (best_ei, best_mean) = scored[pick];
            if ei > best_ei || (ei == best_ei && mean < best_mean) {
                pick = i;
            }
        }
        let ei = scored[pick].0;
        evaluate(pool[pick], Phase::Acquisition, Some(ei), &mut history)?;
    }

    let (x, best_cost) = history.observations[history.best];
    Ok(BoOutcome {
        best_payment: x[0],
        best_conservation: x[1],
        best_cost,
        best_iteration: history.best,
        trace: history.trace,
    })
}

/// Equilibrium and server cost of a single strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    pub strategy: ServerStrategy<f64>,
    pub equilibrium: EquilibriumReport<f64>,
    pub cost: CostBreakdown<f64>,
}

/// Solves the follower equilibrium for `strategy` and prices it with the server cost.
pub fn evaluate_strategy(
    strategy: ServerStrategy<f64>,
    profiles: &[ClientProfile<f64>],
    params: &ServerParams<f64>,
    fp_cfg: &FixedPointConfig,
) -> Result<StrategyEvaluation> {
    let equilibrium = solve_mean_field(&strategy, profiles, params.horizon, fp_cfg)?;
    let cost = server_cost(&strategy, &equilibrium.plans, params)?;
    Ok(StrategyEvaluation {
        strategy,
        equilibrium,
        cost,
    })
}

/// Result of the server's search, with the equilibrium at the chosen strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerOptimum {
    pub best_strategy: ServerStrategy<f64>,
    pub best_cost: f64,
    pub trace: Vec<Evaluation>,
    pub best: StrategyEvaluation,
}

/// Searches `(R, θ)` by GP-EI, each query being a mean-field solve followed by the server cost.
pub fn optimize_server(
    profiles: &[ClientProfile<f64>],
    params: &ServerParams<f64>,
    cfg: &BoConfig,
    fp_cfg: &FixedPointConfig,
) -> Result<ServerOptimum> {
    params.validate()?;
    fp_cfg.validate()?;
    if profiles.len() != params.num_clients {
        return Err(GameError::LengthMismatch {
            what: "client profiles",
            expected: params.num_clients,
            got: profiles.len(),
        });
    }
    let mut best: Option<StrategyEvaluation> = None;
    let outcome = minimize(
        |x| {
            let strategy = ServerStrategy::new(x[0], x[1])?;
            let eval = evaluate_strategy(strategy, profiles, params, fp_cfg)?;
            let result = (eval.cost.total, eval.equilibrium.converged);
            if best.as_ref().is_none_or(|b| eval.cost.total < b.cost.total) {
                best = Some(eval);
            }
            Ok(result)
        },
        cfg,
    )?;
    let best = best.ok_or(GameError::NoObservations)?;
    Ok(ServerOptimum {
        best_strategy: best.strategy,
        best_cost: outcome.best_cost,
        trace: outcome.trace,
        best,
    })
}
