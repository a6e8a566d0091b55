use thiserror::Error;

/// Errors raised by the planning, cost and optimization routines.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum GameError {
    #[error("conservation rate {0} outside [0, 1]")]
    ConservationOutOfRange(f64),

    #[error("{what} must be nonnegative, got {value}")]
    Negative { what: &'static str, value: f64 },

    #[error("invalid {name}: {reason}")]
    InvalidParameter { name: &'static str, reason: String },

    #[error("length mismatch for {what}: expected {expected}, got {got}")]
    LengthMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("buffer volume {volume} at round {round} is below the division guard")]
    EmptyBuffer { round: usize, volume: f64 },

    #[error(
        "client plan solve did not converge after {iterations} iterations (residual {residual:e})"
    )]
    InnerNonConvergence { iterations: usize, residual: f64 },

    #[error("learning rate {learning_rate} exceeds 1/(2*smoothness) = {limit}")]
    StepTooLarge { learning_rate: f64, limit: f64 },

    #[error("surrogate needs at least one observation")]
    NoObservations,

    #[error("kernel matrix is not positive definite even with jitter {jitter:e}")]
    SingularKernel { jitter: f64 },
}

pub type Result<T> = std::result::Result<T, GameError>;
