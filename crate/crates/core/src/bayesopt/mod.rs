//! Server-side search over `(R, θ)`: a Gaussian-process surrogate of the
//! server cost and an expected-improvement acquisition over seeded
//! candidate pools.

pub mod acquisition;
pub mod gp;
pub mod optimizer;

pub use acquisition::{expected_improvement, expected_improvement_from};
pub use gp::{gp_fit, Bounds, GpState, Prediction};
pub use optimizer::{
    evaluate_strategy, minimize, optimize_server, shifted_halton, BoConfig, BoOutcome, Evaluation,
    Phase, ServerOptimum, StrategyEvaluation,
};
