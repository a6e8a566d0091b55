//! Federated training over synthetic drifting streams.
//!
//! Clients keep sample buffers that follow a server strategy `(R, θ)` and
//! their planned collections, train a multinomial logistic-regression model
//! locally on an aged copy of their buffer, and the server averages the
//! local models weighted by buffer volume.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod aggregate;
pub mod buffer;
pub mod error;
pub mod model;
pub mod rng;
pub mod stream;
pub mod training;

pub use aggregate::aggregate;
pub use buffer::{age_samples, aging_std, apply_buffer_update, discard_count, ClientBuffer};
pub use error::{Result, SimError};
pub use model::{local_train, GlobalModel, LocalTraining};
pub use stream::{draw_fresh, draw_test, Sample, SensitivityScaling, StreamConfig};
pub use training::{run_training, train_clients, RoundMetrics, TrainingConfig, TrainingReport};
