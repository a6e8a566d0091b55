//! Mean-field fixed point between the clients' plans and the total-volume estimate.
//!
//! Each client plans against `φ(t)`; the realized total `Σ_k D_k(t)` must
//! in turn reproduce `φ(t)`. The residual of iterate `j` is
//! `max_t |Σ_k D_k(t)[φ_j] − φ_j(t)|`, which for plain replacement is
//! exactly the change between successive estimates.
//!
//! Plain replacement tends to fall into a period-two cycle: a large `φ`
//! lowers the per-unit price `R/φ`, clients stop collecting, the total
//! shrinks, the price jumps, and so on. [`FieldUpdate::Newton`] instead
//! solves `φ = G(φ)` with the exact Jacobian of the piecewise-linear map
//! (collecting rounds frozen) and a backtracking line search on the
//! residual; it typically converges in four to seven evaluations.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::VOLUME_EPS;
use crate::error::{GameError, Result};
use crate::linalg::lu_solve;
use crate::planner::{
    price_response, solve_plan_warm, ClientPlan, ClientProfile, MeanField, PlannerConfig,
};
use crate::scalar::Scalar;
use crate::server::ServerStrategy;

/// How the next estimate is formed from the current one.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldUpdate {
    /// Newton step on `φ − G(φ) = 0` with backtracking.
    #[default]
    Newton,
    /// `φ ← (1−ω)·φ + ω·G(φ)`; drops `ω` to at most 0.5 after two successive residual increases.
    Relaxation,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FixedPointConfig {
    /// `ε`; `None` uses `1e-6 · Σ_k D_k⁰`.
    pub tolerance: Option<f64>,
    /// `J`: maximum number of field evaluations.
    pub max_iterations: usize,
    /// `ω` for [`FieldUpdate::Relaxation`].
    pub damping: f64,
    pub update: FieldUpdate,
    pub planner: PlannerConfig,
}

impl Default for FixedPointConfig {
    fn default() -> Self {
        Self {
            tolerance: None,
            max_iterations: 20,
            damping: 1.0,
            update: FieldUpdate::Newton,
            planner: PlannerConfig::default(),
        }
    }
}

impl FixedPointConfig {
    pub fn validate(&self) -> Result<()> {
        if let Some(eps) = self.tolerance {
            if !(eps > 0.0) {
                return Err(GameError::InvalidParameter {
                    name: "tolerance",
                    reason: "must be positive".into(),
                });
            }
        }
        if self.max_iterations == 0 {
            return Err(GameError::InvalidParameter {
                name: "max_iterations",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.damping > 0.0 && self.damping <= 1.0) {
            return Err(GameError::InvalidParameter {
                name: "damping",
                reason: "must lie in (0, 1]".into(),
            });
        }
        Ok(())
    }

    /// The tolerance actually used for a population.
    pub fn resolved_tolerance<S: Scalar>(&self, profiles: &[ClientProfile<S>]) -> S {
        match self.tolerance {
            Some(eps) => S::lit(eps),
            None => {
                let total: S = profiles.iter().map(|p| p.initial_volume).sum();
                let floor = S::from_usize_lossy(profiles.len()) * S::lit(VOLUME_EPS);
                (S::lit(1e-6) * total).max(floor)
            }
        }
    }
}

/// Outcome of the fixed-point iteration for one server strategy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquilibriumReport<S> {
    pub initial_field: MeanField<S>,
    pub field: MeanField<S>,
    /// Plans computed against `field`.
    pub plans: Vec<ClientPlan<S>>,
    pub iterations_used: usize,
    /// Residual of every evaluated estimate, in order.
    pub residual_history: Vec<S>,
    pub converged: bool,
    pub tolerance: S,
}

impl<S: Scalar> EquilibriumReport<S> {
    pub fn final_residual(&self) -> S {
        self.residual_history
            .last()
            .copied()
            .unwrap_or_else(S::infinity)
    }

    /// `Σ_k D_k(t)` under the reported plans.
    pub fn total_volumes(&self) -> Vec<S> {
        total_volumes(&self.plans, self.field.len())
    }
}

/// `φ₀(t) = Σ_k D_k⁰` for every round, floored at `N · VOLUME_EPS`.
pub fn initialize_field<S: Scalar>(profiles: &[ClientProfile<S>], horizon: usize) -> MeanField<S> {
    let total: S = profiles.iter().map(|p| p.initial_volume).sum();
    MeanField::floored(vec![total; horizon], profiles.len())
}

/// Iterates client planning and field updates from [`initialize_field`].
pub fn solve_mean_field<S: Scalar>(
    strategy: &ServerStrategy<S>,
    profiles: &[ClientProfile<S>],
    horizon: usize,
    cfg: &FixedPointConfig,
) -> Result<EquilibriumReport<S>> {
    let initial = initialize_field(profiles, horizon);
    solve_mean_field_from(strategy, profiles, initial, cfg)
}

/// Same as [`solve_mean_field`] with an explicit starting estimate.
pub fn solve_mean_field_from<S: Scalar>(
    strategy: &ServerStrategy<S>,
    profiles: &[ClientProfile<S>],
    initial: MeanField<S>,
    cfg: &FixedPointConfig,
) -> Result<EquilibriumReport<S>> {
    cfg.validate()?;
    strategy.validate()?;
    if profiles.is_empty() {
        return Err(GameError::InvalidParameter {
            name: "profiles",
            reason: "need at least one client".into(),
        });
    }
    if initial.is_empty() {
        return Err(GameError::InvalidParameter {
            name: "horizon",
            reason: "must be at least 1".into(),
        });
    }
    let tolerance = cfg.resolved_tolerance(profiles);
    let num_clients = profiles.len();
    let horizon = initial.len();

    let mut field = initial.clone();
    let mut plans = plan_all(strategy, profiles, &field, &cfg.planner, None)?;
    let mut history: Vec<S> = Vec::new();
    let mut damping = S::lit(cfg.damping);
    let mut converged = false;

    loop {
        let totals = total_volumes(&plans, horizon);
        let residual = max_abs_diff(&totals, field.values());
        history.push(residual);
        if residual <= tolerance {
            converged = true;
            break;
        }
        if history.len() >= cfg.max_iterations {
            break;
        }
        let (next_field, next_plans) = match cfg.update {
            FieldUpdate::Relaxation => {
                let n = history.len();
                if n >= 3 && history[n - 1] > history[n - 2] && history[n - 2] > history[n - 3] {
                    damping = damping.min(S::lit(0.5));
                }
                let next = relax(&field, &totals, damping, num_clients);
                let next_plans = plan_all(strategy, profiles, &next, &cfg.planner, Some(&plans))?;
                (next, next_plans)
            }
            FieldUpdate::Newton => newton_step(
                strategy,
                profiles,
                &field,
                &plans,
                &totals,
                residual,
                &cfg.planner,
            )?,
        };
        field = next_field;
        plans = next_plans;
    }

    Ok(EquilibriumReport {
        initial_field: initial,
        field,
        plans,
        iterations_used: history.len(),
        residual_history: history,
        converged,
        tolerance,
    })
}

fn plan_all<S: Scalar>(
    strategy: &ServerStrategy<S>,
    profiles: &[ClientProfile<S>],
    field: &MeanField<S>,
    cfg: &PlannerConfig,
    warm: Option<&[ClientPlan<S>]>,
) -> Result<Vec<ClientPlan<S>>> {
    profiles
        .par_iter()
        .enumerate()
        .map(|(k, profile)| {
            let hint = warm.map(|plans| plans[k].collecting_rounds());
            solve_plan_warm(profile, strategy, field, cfg, hint.as_deref())
        })
        .collect()
}

fn total_volumes<S: Scalar>(plans: &[ClientPlan<S>], horizon: usize) -> Vec<S> {
    (0..horizon)
        .map(|t| plans.iter().map(|p| p.volumes[t]).sum())
        .collect()
}

fn max_abs_diff<S: Scalar>(a: &[S], b: &[S]) -> S {
    a.iter()
        .zip(b)
        .map(|(x, y)| (*x - *y).abs())
        .fold(S::zero(), S::max)
}

fn relax<S: Scalar>(field: &MeanField<S>, totals: &[S], omega: S, n: usize) -> MeanField<S> {
    let next = field
        .values()
        .iter()
        .zip(totals)
        .map(|(&phi, &g)| (S::one() - omega) * phi + omega * g)
        .collect();
    MeanField::floored(next, n)
}

fn residual_of<S: Scalar>(field: &MeanField<S>, plans: &[ClientPlan<S>]) -> S {
    max_abs_diff(&total_volumes(plans, field.len()), field.values())
}

#[allow(clippy::too_many_arguments)]
fn newton_step<S: Scalar>(
    strategy: &ServerStrategy<S>,
    profiles: &[ClientProfile<S>],
    field: &MeanField<S>,
    plans: &[ClientPlan<S>],
    totals: &[S],
    residual: S,
    planner: &PlannerConfig,
) -> Result<(MeanField<S>, Vec<ClientPlan<S>>)> {
    let horizon = field.len();
    let n = profiles.len();
    let phi = field.values();
    let defect: Vec<S> = totals.iter().zip(phi).map(|(&g, &p)| g - p).collect();

    // Jacobian of G(φ) = Σ_k D_k(R/φ) with the collecting rounds frozen.
    let responses: Vec<Vec<Vec<S>>> = profiles
        .par_iter()
        .zip(plans)
        .map(|(profile, plan)| {
            price_response(profile, strategy.conservation, &plan.collecting_rounds())
        })
        .collect();
    let mut system = vec![vec![S::zero(); horizon]; horizon];
    for (t, row) in system.iter_mut().enumerate() {
        for (tau, entry) in row.iter_mut().enumerate() {
            let dprice = -strategy.payment / (phi[tau] * phi[tau]);
            let dg: S = responses.iter().map(|r| r[tau][t]).sum::<S>() * dprice;
            *entry = if t == tau { S::one() - dg } else { -dg };
        }
    }

    let Some(direction) = lu_solve(system, defect.clone()) else {
        let next = relax(field, totals, S::lit(0.5), n);
        let next_plans = plan_all(strategy, profiles, &next, planner, Some(plans))?;
        return Ok((next, next_plans));
    };

    // Keep the estimate positive, then backtrack on the residual.
    let mut step = S::one();
    for (&p, &d) in phi.iter().zip(&direction) {
        if d < S::zero() {
            step = step.min(S::lit(0.9) * p / -d);
        }
    }
    let min_step = S::lit(1.0 / 1024.0);
    loop {
        let trial_values = phi
            .iter()
            .zip(&direction)
            .map(|(&p, &d)| p + step * d)
            .collect();
        let trial = MeanField::floored(trial_values, n);
        let trial_plans = plan_all(strategy, profiles, &trial, planner, Some(plans))?;
        let trial_residual = residual_of(&trial, &trial_plans);
        if trial_residual < (S::one() - S::lit(1e-4) * step) * residual || step <= min_step {
            return Ok((trial, trial_plans));
        }
        step *= S::lit(0.5);
    }
}
