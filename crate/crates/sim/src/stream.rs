//! Synthetic drifting data streams.
//!
//! Each class is a spherical Gaussian cluster. The cluster means rotate by
//! `drift_rate · t` radians in every coordinate plane `(0,1), (2,3), …`,
//! and the set of visible classes grows linearly from
//! `initial_class_fraction · K` to `K` over `class_ramp_rounds` rounds.
//! All clients share the same layout and differ only in their draws.

use rand::Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::rng::{stream_rng, Purpose, TEST_CLIENT};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub features: Vec<f64>,
    pub label: usize,
    /// Round in which the sample entered its buffer.
    pub birth_round: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub feature_dim: usize,
    pub num_classes: usize,
    /// Rotation of the class means per round, in radians.
    pub drift_rate: f64,
    /// Aging blur per unit of `σ` and per round of age.
    pub aging_noise: f64,
    /// `σ`, the task's sensitivity to stale data.
    pub time_sensitivity: f64,
    pub initial_class_fraction: f64,
    /// Rounds until every class is visible.
    pub class_ramp_rounds: usize,
    /// Distance of each class mean from the origin.
    pub class_separation: f64,
    /// Per-coordinate standard deviation within a class.
    pub class_spread: f64,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            feature_dim: 10,
            num_classes: 4,
            drift_rate: 0.0,
            aging_noise: 0.0,
            time_sensitivity: 0.0,
            initial_class_fraction: 1.0,
            class_ramp_rounds: 30,
            class_separation: 3.0,
            class_spread: 1.0,
            seed: 0,
        }
    }
}

/// How a task's time sensitivity `σ` shapes its stream.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SensitivityScaling {
    /// `drift_rate = drift_per_unit · σ`.
    pub drift_per_unit: f64,
    pub aging_noise: f64,
    /// `initial_class_fraction = max(min_class_fraction, 1 − class_fraction_drop · σ)`.
    pub class_fraction_drop: f64,
    pub min_class_fraction: f64,
}

impl Default for SensitivityScaling {
    fn default() -> Self {
        Self {
            drift_per_unit: 0.04,
            aging_noise: 0.1,
            class_fraction_drop: 0.4,
            min_class_fraction: 0.25,
        }
    }
}

impl StreamConfig {
    /// Copy of `self` with drift, blur and class coverage set from `σ`.
    pub fn with_sensitivity(&self, sigma: f64, scaling: &SensitivityScaling) -> Self {
        Self {
            drift_rate: scaling.drift_per_unit * sigma,
            aging_noise: scaling.aging_noise,
            time_sensitivity: sigma,
            initial_class_fraction: (1.0 - scaling.class_fraction_drop * sigma)
                .max(scaling.min_class_fraction)
                .min(1.0),
            ..self.clone()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let invalid = |name, reason: &str| SimError::InvalidConfig {
            name,
            reason: reason.to_string(),
        };
        if self.feature_dim == 0 {
            return Err(invalid("feature_dim", "must be at least 1"));
        }
        if self.num_classes < 2 {
            return Err(invalid("num_classes", "must be at least 2"));
        }
        for (name, v) in [
            ("drift_rate", self.drift_rate),
            ("aging_noise", self.aging_noise),
            ("time_sensitivity", self.time_sensitivity),
            ("class_separation", self.class_separation),
            ("class_spread", self.class_spread),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(invalid(name, "must be finite and nonnegative"));
            }
        }
        if !(self.initial_class_fraction > 0.0 && self.initial_class_fraction <= 1.0) {
            return Err(invalid("initial_class_fraction", "must lie in (0, 1]"));
        }
        Ok(())
    }

    /// Number of classes visible in round `t`; always at least one.
    pub fn available_classes(&self, round: usize) -> usize {
        let progress = if self.class_ramp_rounds == 0 {
            1.0
        } else {
            (round as f64 / self.class_ramp_rounds as f64).min(1.0)
        };
        let fraction = self.initial_class_fraction + (1.0 - self.initial_class_fraction) * progress;
        ((fraction * self.num_classes as f64 - 1e-9).ceil() as usize).clamp(1, self.num_classes)
    }

    /// Class means at round 0: random directions scaled to `class_separation`.
    fn base_means(&self) -> Vec<Vec<f64>> {
        let mut rng = stream_rng(self.seed, 0, 0, Purpose::Layout);
        (0..self.num_classes)
            .map(|_| {
                let v: Vec<f64> = (0..self.feature_dim)
                    .map(|_| StandardNormal.sample(&mut rng))
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
                v.iter().map(|x| x / norm * self.class_separation).collect()
            })
            .collect()
    }

    /// Class means at round `t`.
    pub fn class_means(&self, round: usize) -> Vec<Vec<f64>> {
        let angle = self.drift_rate * round as f64;
        let (sin, cos) = angle.sin_cos();
        self.base_means()
            .into_iter()
            .map(|mut m| {
                for pair in m.chunks_exact_mut(2) {
                    let (a, b) = (pair[0], pair[1]);
                    pair[0] = cos * a - sin * b;
                    pair[1] = sin * a + cos * b;
                }
                m
            })
            .collect()
    }

    fn draw(&self, client: u64, round: usize, count: usize, purpose: Purpose) -> Vec<Sample> {
        if count == 0 {
            return Vec::new();
        }
        let mut rng = stream_rng(self.seed, client, round as u64, purpose);
        let means = self.class_means(round);
        let visible = self.available_classes(round);
        let spread = Normal::new(0.0, self.class_spread).expect("validated spread");
        (0..count)
            .map(|_| {
                let label = rng.random_range(0..visible);
                let features = means[label]
                    .iter()
                    .map(|m| m + spread.sample(&mut rng))
                    .collect();
                Sample {
                    features,
                    label,
                    birth_round: round,
                }
            })
            .collect()
    }
}

/// `count` samples from client `client`'s round-`t` distribution.
pub fn draw_fresh(stream: &StreamConfig, client: usize, round: usize, count: usize) -> Vec<Sample> {
    stream.draw(client as u64, round, count, Purpose::Fresh)
}

/// Held-out samples from the round-`t` distribution, shared by all clients.
pub fn draw_test(stream: &StreamConfig, round: usize, count: usize) -> Vec<Sample> {
    stream.draw(TEST_CLIENT, round, count, Purpose::Test)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_draw() {
        assert!(draw_fresh(&StreamConfig::default(), 0, 3, 0).is_empty());
    }

    #[test]
    fn stationary_stream_repeats() {
        let s = StreamConfig::default();
        let a = draw_fresh(&s, 2, 0, 50);
        let b = draw_fresh(&s, 2, 50, 50);
        assert_eq!(s.class_means(0), s.class_means(50));
        assert_eq!(s.available_classes(0), s.available_classes(50));
        assert_eq!(a.len(), 50);
        // Same distribution, independent draws.
        assert_ne!(a[0].features, b[0].features);
        assert_eq!(draw_fresh(&s, 2, 0, 50), a);
    }

    #[test]
    fn class_schedule() {
        let s = StreamConfig {
            num_classes: 4,
            initial_class_fraction: 0.5,
            class_ramp_rounds: 10,
            ..Default::default()
        };
        let labels: std::collections::BTreeSet<usize> =
            draw_fresh(&s, 0, 0, 500).iter().map(|x| x.label).collect();
        assert_eq!(labels.into_iter().collect::<Vec<_>>(), vec![0, 1]);
        assert_eq!(s.available_classes(5), 3);
        assert_eq!(s.available_classes(10), 4);
        assert_eq!(s.available_classes(100), 4);
    }

    #[test]
    fn drift_rotates_means() {
        let s = StreamConfig {
            drift_rate: 0.1,
            ..Default::default()
        };
        let (m0, m5) = (s.class_means(0), s.class_means(5));
        for (a, b) in m0.iter().zip(&m5) {
            let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
            let norm: f64 = a.iter().map(|x| x * x).sum::<f64>();
            assert!((dot / norm - 0.5f64.cos()).abs() < 1e-12);
        }
    }

    #[test]
    fn sensitivity_mapping() {
        let base = StreamConfig::default();
        let scaling = SensitivityScaling::default();
        let calm = base.with_sensitivity(0.0, &scaling);
        assert_eq!((calm.drift_rate, calm.initial_class_fraction), (0.0, 1.0));
        let hot = base.with_sensitivity(1.25, &scaling);
        assert!(hot.drift_rate > 0.0 && hot.initial_class_fraction < 1.0);
        assert!(base.with_sensitivity(10.0, &scaling).initial_class_fraction >= 0.25);
    }

    #[test]
    fn rejects_bad_config() {
        let bad = StreamConfig {
            initial_class_fraction: 0.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
        let bad = StreamConfig {
            num_classes: 1,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
