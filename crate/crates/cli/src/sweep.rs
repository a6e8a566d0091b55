//! Time-sensitivity sweep: the optimal strategy at each `σ`, and optionally
//! its training accuracy against the no-update reference.

use rayon::prelude::*;
use serde::Serialize;
use stalefl_core::ServerOptimum;

use crate::error::Result;
use crate::output::num;
use crate::scenario::{no_update_strategy, update_ceased, Scenario, TrainingSummary};

#[derive(Debug, Clone, Serialize)]
pub struct SweepPoint {
    pub sigma: f64,
    pub payment: f64,
    pub conservation: f64,
    pub cost: f64,
    pub total_collection: f64,
    pub update_ceased: bool,
    pub converged: bool,
    pub dufl: Option<TrainingSummary>,
    pub no_update: Option<TrainingSummary>,
    #[serde(skip)]
    pub optimum: ServerOptimum,
}

pub const SWEEP_COLUMNS: [&str; 9] = [
    "sigma",
    "payment",
    "conservation",
    "cost",
    "total_collection",
    "update_ceased",
    "converged",
    "dufl_accuracy",
    "no_update_accuracy",
];

impl SweepPoint {
    pub fn fields(&self) -> Vec<String> {
        let acc =
            |s: &Option<TrainingSummary>| s.as_ref().map(|s| num(s.accuracy)).unwrap_or_default();
        vec![
            num(self.sigma),
            num(self.payment),
            num(self.conservation),
            num(self.cost),
            num(self.total_collection),
            self.update_ceased.to_string(),
            self.converged.to_string(),
            acc(&self.dufl),
            acc(&self.no_update),
        ]
    }
}

fn sweep_point(scn: &Scenario, sigma: f64, train: bool) -> Result<SweepPoint> {
    let optimum = scn.solve_at(sigma)?;
    let eq = &optimum.best.equilibrium;
    let (dufl, no_update) = if train {
        let reference = scn.evaluate_at(no_update_strategy(), sigma)?;
        let (a, b) = rayon::join(
            || scn.train_at(&optimum.best_strategy, &eq.plans, sigma),
            || scn.train_at(&reference.strategy, &reference.equilibrium.plans, sigma),
        );
        (
            Some(TrainingSummary::of("dufl", &a?)),
            Some(TrainingSummary::of("no_update", &b?)),
        )
    } else {
        (None, None)
    };
    Ok(SweepPoint {
        sigma,
        payment: optimum.best_strategy.payment,
        conservation: optimum.best_strategy.conservation,
        cost: optimum.best_cost,
        total_collection: eq.plans.iter().map(|p| p.total_collection()).sum(),
        update_ceased: update_ceased(&eq.plans),
        converged: eq.converged,
        dufl,
        no_update,
        optimum,
    })
}

/// Solves every `σ` as an independent job on a pool of `workers` threads (0: all cores).
/// Results come back in grid order regardless of scheduling.
pub fn run_sigma_sweep(
    scn: &Scenario,
    sigmas: &[f64],
    train: bool,
    workers: usize,
) -> Result<Vec<SweepPoint>> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()?;
    pool.install(|| {
        sigmas
            .par_iter()
            .map(|&sigma| sweep_point(scn, sigma, train))
            .collect()
    })
}

/// Adjacent pairs where `R*` falls or `θ*` rises as `σ` grows, over points that still collect.
pub fn trend_violations(points: &[SweepPoint]) -> usize {
    let active: Vec<&SweepPoint> = points.iter().filter(|p| !p.update_ceased).collect();
    active
        .windows(2)
        .filter(|w| w[1].payment < w[0].payment || w[1].conservation > w[0].conservation)
        .count()
}

/// DUFL accuracy minus no-update accuracy, in percentage points.
pub fn accuracy_gain(point: &SweepPoint) -> Option<f64> {
    Some(100.0 * (point.dufl.as_ref()?.accuracy - point.no_update.as_ref()?.accuracy))
}
