//! The federated training phase: broadcast, buffer update, local training
//! and aggregation, repeated for every planned round.
//!
//! Fresh samples planned as `Δ_k(t)` are drawn from the round-`t+1`
//! distribution and enter the buffer at the start of round `t+1`. The
//! integer number drawn is `round(D_k(t+1) − retained)`, which carries the
//! rounding of both the increment and the discard forward, so realized
//! counts stay within half a sample of the plan.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use stalefl_core::{exact_payment_share, Plan, Strategy};

use crate::aggregate::aggregate;
use crate::buffer::{age_samples, ClientBuffer};
use crate::error::{Result, SimError};
use crate::model::{local_train, GlobalModel, LocalTraining};
use crate::rng::{stream_rng, Purpose};
use crate::stream::{draw_fresh, draw_test, StreamConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingConfig {
    pub local: LocalTraining,
    /// Held-out samples drawn per round from the current distribution.
    pub test_size: usize,
    /// Optional buffer cap `U` for every client.
    pub capacity: Option<usize>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            local: LocalTraining::default(),
            test_size: 1000,
            capacity: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub round: usize,
    /// Test accuracy of the aggregated model on the round's distribution.
    pub accuracy: f64,
    /// Test cross-entropy of the aggregated model.
    pub loss: f64,
    pub total_volume: usize,
    /// Volume-weighted mean of `age + 1` across all buffers.
    pub mean_staleness: f64,
    /// Clients with an empty buffer, excluded from aggregation.
    pub skipped_clients: Vec<usize>,
    /// Whether no client could train, so the previous model was kept.
    pub model_kept: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingReport {
    pub rounds: Vec<RoundMetrics>,
    /// `[client][round]` buffer counts.
    pub realized_volumes: Vec<Vec<usize>>,
    /// `[client][round]` fresh samples that entered the buffer at the start of the round.
    pub collected: Vec<Vec<usize>>,
    /// `[client][round]` payment share under the realized counts.
    pub realized_payments: Vec<Vec<f64>>,
    /// `[client][round]` mean `age + 1` of the buffer.
    pub empirical_staleness: Vec<Vec<f64>>,
    pub final_model: GlobalModel,
}

impl TrainingReport {
    pub fn final_accuracy(&self) -> f64 {
        self.rounds.last().map_or(0.0, |r| r.accuracy)
    }

    /// Mean accuracy over the last `window` rounds.
    pub fn tail_accuracy(&self, window: usize) -> f64 {
        let n = window.clamp(1, self.rounds.len().max(1));
        let tail = &self.rounds[self.rounds.len().saturating_sub(n)..];
        if tail.is_empty() {
            return 0.0;
        }
        tail.iter().map(|r| r.accuracy).sum::<f64>() / tail.len() as f64
    }
}

fn check_inputs(plans: &[Plan], stream: &StreamConfig, cfg: &TrainingConfig) -> Result<usize> {
    stream.validate()?;
    cfg.local.validate()?;
    let horizon = plans
        .first()
        .map(|p| p.horizon())
        .ok_or(SimError::InvalidConfig {
            name: "plans",
            reason: "need at least one client".into(),
        })?;
    for plan in plans {
        if plan.horizon() != horizon {
            return Err(SimError::LengthMismatch {
                what: "plan horizon",
                expected: horizon,
                got: plan.horizon(),
            });
        }
    }
    if horizon == 0 {
        return Err(SimError::InvalidConfig {
            name: "horizon",
            reason: "must be at least 1".into(),
        });
    }
    Ok(horizon)
}

/// Trains every client on its aged buffer; `None` marks an empty buffer.
pub fn train_clients(
    model: &GlobalModel,
    buffers: &[ClientBuffer],
    stream: &StreamConfig,
    local: &LocalTraining,
    round: usize,
) -> Vec<Option<GlobalModel>> {
    buffers
        .par_iter()
        .enumerate()
        .map(|(k, buffer)| {
            let aged = age_samples(buffer, stream, k, round);
            let mut rng = stream_rng(stream.seed, k as u64, round as u64, Purpose::Training);
            local_train(model, &aged, local, &mut rng)
        })
        .collect()
}

/// Executes the planned rounds and records per-round metrics.
pub fn run_training(
    strategy: &Strategy,
    plans: &[Plan],
    stream: &StreamConfig,
    cfg: &TrainingConfig,
) -> Result<TrainingReport> {
    strategy.validate()?;
    let horizon = check_inputs(plans, stream, cfg)?;
    let n = plans.len();
    let theta = strategy.conservation;

    let mut buffers: Vec<ClientBuffer> = plans
        .iter()
        .enumerate()
        .map(|(k, plan)| {
            let count = plan.volumes[0].round().max(0.0) as usize;
            ClientBuffer::new(draw_fresh(stream, k, 0, count), cfg.capacity)
        })
        .collect();
    let mut model = GlobalModel::zeros(stream.num_classes, stream.feature_dim);
    let mut rounds = Vec::with_capacity(horizon);
    let mut realized_volumes = vec![Vec::with_capacity(horizon); n];
    let mut collected = vec![Vec::with_capacity(horizon); n];
    let mut realized_payments = vec![Vec::with_capacity(horizon); n];
    let mut empirical_staleness = vec![Vec::with_capacity(horizon); n];
    for (k, buffer) in buffers.iter().enumerate() {
        collected[k].push(buffer.len());
    }

    for t in 0..horizon {
        let counts: Vec<f64> = buffers.iter().map(|b| b.len() as f64).collect();
        let total: usize = buffers.iter().map(ClientBuffer::len).sum();
        let mut weighted_staleness = 0.0;
        for (k, buffer) in buffers.iter().enumerate() {
            let s = buffer.empirical_staleness(t);
            realized_volumes[k].push(buffer.len());
            empirical_staleness[k].push(s);
            realized_payments[k].push(exact_payment_share(&counts, k, strategy.payment));
            weighted_staleness += s * buffer.len() as f64;
        }

        let trained = train_clients(&model, &buffers, stream, &cfg.local, t);
        let skipped: Vec<usize> = (0..n).filter(|&k| trained[k].is_none()).collect();
        let (models, volumes): (Vec<GlobalModel>, Vec<f64>) = trained
            .into_iter()
            .zip(&counts)
            .filter_map(|(m, &v)| m.map(|m| (m, v)))
            .unzip();
        let model_kept = match aggregate(&models, &volumes) {
            Some(next) => {
                model = next;
                false
            }
            None => true,
        };
        model.round = t + 1;

        let test = draw_test(stream, t, cfg.test_size);
        rounds.push(RoundMetrics {
            round: t,
            accuracy: model.accuracy(&test),
            loss: model.mean_loss(&test),
            total_volume: total,
            mean_staleness: if total > 0 {
                weighted_staleness / total as f64
            } else {
                1.0
            },
            skipped_clients: skipped,
            model_kept,
        });

        if t + 1 < horizon {
            buffers = buffers
                .into_iter()
                .enumerate()
                .map(|(k, buffer)| {
                    let target = plans[k].volumes[t + 1];
                    let retained = buffer.retained_after(theta) as f64;
                    let fresh = (target - retained).round().max(0.0) as usize;
                    collected[k].push(fresh);
                    buffer.apply_update(theta, draw_fresh(stream, k, t + 1, fresh))
                })
                .collect();
        }
    }

    Ok(TrainingReport {
        rounds,
        realized_volumes,
        collected,
        realized_payments,
        empirical_staleness,
        final_model: model,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use stalefl_core::{solve_mean_field, FixedPointConfig, MeanField, Profile};

    fn small_cfg() -> TrainingConfig {
        TrainingConfig {
            local: LocalTraining {
                epochs: 2,
                batch_size: 32,
                learning_rate: 0.1,
                l2: 0.0,
            },
            test_size: 200,
            capacity: None,
        }
    }

    fn equilibrium(r: f64, theta: f64, n: usize, horizon: usize) -> (Strategy, Vec<Plan>) {
        let profiles: Vec<Profile> = (0..n)
            .map(|k| Profile::new(2e-4 + 1e-4 * k as f64, 1e-5, 60.0).unwrap())
            .collect();
        let strategy = Strategy::new(r, theta).unwrap();
        let report =
            solve_mean_field(&strategy, &profiles, horizon, &FixedPointConfig::default()).unwrap();
        assert!(report.converged);
        (strategy, report.plans)
    }

    #[test]
    fn realized_counts_track_plan() {
        let (strategy, plans) = equilibrium(40.0, 0.63, 3, 12);
        let stream = StreamConfig::default();
        let report = run_training(&strategy, &plans, &stream, &small_cfg()).unwrap();
        for (k, plan) in plans.iter().enumerate() {
            for t in 0..12 {
                let diff = report.realized_volumes[k][t] as f64 - plan.volumes[t];
                assert!(diff.abs() <= 1.0, "client {k} round {t}: {diff}");
                // Oldest-first retention never makes the buffer staler than planned.
                assert!(report.empirical_staleness[k][t] <= plan.staleness[t] * 1.1 + 1e-9);
            }
        }
    }

    #[test]
    fn payments_sum_to_reward() {
        let (strategy, plans) = equilibrium(40.0, 0.5, 3, 6);
        let report =
            run_training(&strategy, &plans, &StreamConfig::default(), &small_cfg()).unwrap();
        for t in 0..6 {
            let paid: f64 = report.realized_payments.iter().map(|p| p[t]).sum();
            assert!((paid - 40.0).abs() < 1e-9);
        }
    }

    #[test]
    fn deterministic() {
        let (strategy, plans) = equilibrium(40.0, 0.5, 3, 5);
        let stream = StreamConfig {
            drift_rate: 0.1,
            aging_noise: 0.1,
            time_sensitivity: 1.0,
            seed: 4,
            ..Default::default()
        };
        let a = run_training(&strategy, &plans, &stream, &small_cfg()).unwrap();
        let b = run_training(&strategy, &plans, &stream, &small_cfg()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn static_case_is_plain_fedavg() {
        let (strategy, plans) = equilibrium(0.0, 1.0, 3, 6);
        assert!(plans.iter().all(|p| p.total_collection() == 0.0));
        let stream = StreamConfig {
            seed: 9,
            ..Default::default()
        };
        let cfg = small_cfg();
        let report = run_training(&strategy, &plans, &stream, &cfg).unwrap();

        let buffers: Vec<ClientBuffer> = (0..3)
            .map(|k| ClientBuffer::new(draw_fresh(&stream, k, 0, 60), None))
            .collect();
        let mut model = GlobalModel::zeros(stream.num_classes, stream.feature_dim);
        for t in 0..6 {
            let models: Vec<GlobalModel> = train_clients(&model, &buffers, &stream, &cfg.local, t)
                .into_iter()
                .map(Option::unwrap)
                .collect();
            model = aggregate(&models, &[60.0; 3]).unwrap();
            let acc = model.accuracy(&draw_test(&stream, t, cfg.test_size));
            assert_eq!(acc, report.rounds[t].accuracy);
        }
        assert_eq!(model.params(), report.final_model.params());
    }

    #[test]
    fn empty_buffers_are_skipped() {
        let profile = Profile::new(1e-3, 1e-5, 5.0).unwrap();
        let strategy = Strategy::new(0.0, 0.0).unwrap();
        let field = MeanField::constant(5.0, 3).unwrap();
        let plan =
            stalefl_core::solve_plan(&profile, &strategy, &field, &Default::default()).unwrap();
        let report =
            run_training(&strategy, &[plan], &StreamConfig::default(), &small_cfg()).unwrap();
        assert!(report.rounds[0].skipped_clients.is_empty());
        assert_eq!(report.rounds[1].skipped_clients, vec![0]);
        assert!(report.rounds[1].model_kept);
        assert_eq!(report.realized_volumes[0], vec![5, 0, 0]);
    }

    #[test]
    fn rejects_ragged_plans() {
        let (strategy, mut plans) = equilibrium(10.0, 0.5, 2, 4);
        let (_, short) = equilibrium(10.0, 0.5, 1, 3);
        plans.push(short[0].clone());
        assert!(run_training(&strategy, &plans, &StreamConfig::default(), &small_cfg()).is_err());
    }
}
