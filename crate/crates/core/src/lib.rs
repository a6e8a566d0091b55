//! Staleness-aware data-update game for federated learning.
//!
//! Clients decide how much fresh data to collect each round, the server
//! sets a per-round payment `R` and a conservation rate `θ`, and the two
//! sides are coupled through a mean-field estimate of the total buffered
//! volume. Everything up to the server cost is generic over [`Scalar`];
//! the Bayesian optimizer works in `f64`.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bayesopt;
pub mod buffer;
pub mod error;
mod linalg;
pub mod meanfield;
pub mod planner;
pub mod scalar;
pub mod server;

pub use bayesopt::{
    evaluate_strategy, optimize_server, BoConfig, Evaluation, ServerOptimum, StrategyEvaluation,
};
pub use buffer::{
    staleness_closed_form, staleness_recursive, BufferTrajectory, StalenessTrajectory, VOLUME_EPS,
};
pub use error::{GameError, Result};
pub use meanfield::{
    initialize_field, solve_mean_field, solve_mean_field_from, EquilibriumReport, FieldUpdate,
    FixedPointConfig,
};
pub use planner::{
    client_utility, exact_payment_share, increments_from_volumes, solve_plan, solve_plan_warm,
    ClientPlan, ClientProfile, MeanField, PlannerConfig,
};
pub use scalar::Scalar;
pub use server::{
    convergence_bound, kappa_from_constants, round_terms, server_cost, ConvergenceParams,
    CostBreakdown, Kappas, RoundTerms, ServerParams, ServerStrategy,
};

/// Double-precision aliases used throughout the simulator and CLI.
pub type Profile = ClientProfile<f64>;
pub type Plan = ClientPlan<f64>;
pub type Field = MeanField<f64>;
pub type Strategy = ServerStrategy<f64>;
pub type Params = ServerParams<f64>;
pub type Equilibrium = EquilibriumReport<f64>;
pub type Buffer = BufferTrajectory<f64>;

/// Single-precision aliases.
pub type Profile32 = ClientProfile<f32>;
pub type Plan32 = ClientPlan<f32>;
pub type Strategy32 = ServerStrategy<f32>;
