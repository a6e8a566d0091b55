//! Client sample buffers: oldest-first discard, fresh appends and aging blur.

use std::collections::VecDeque;

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::rng::{stream_rng, Purpose};
use crate::stream::{Sample, StreamConfig};

/// Samples ordered by `birth_round`, oldest first.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ClientBuffer {
    samples: VecDeque<Sample>,
    /// Optional storage cap `U`.
    pub capacity: Option<usize>,
}

/// Samples dropped when conserving a fraction `θ` of `count`.
pub fn discard_count(count: usize, theta: f64) -> usize {
    let drop = ((1.0 - theta) * count as f64 - 1e-9).ceil();
    (drop.max(0.0) as usize).min(count)
}

impl ClientBuffer {
    pub fn new(samples: Vec<Sample>, capacity: Option<usize>) -> Self {
        let mut buffer = Self {
            samples: VecDeque::new(),
            capacity,
        };
        buffer.append(samples);
        buffer
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> impl ExactSizeIterator<Item = &Sample> {
        self.samples.iter()
    }

    /// Samples kept after discarding with rate `θ`, without modifying the buffer.
    pub fn retained_after(&self, theta: f64) -> usize {
        self.len() - discard_count(self.len(), theta)
    }

    fn append(&mut self, fresh: Vec<Sample>) {
        let mut fresh = fresh;
        fresh.sort_by_key(|s| s.birth_round);
        self.samples.extend(fresh);
        if let Some(cap) = self.capacity {
            while self.samples.len() > cap {
                self.samples.pop_front();
            }
        }
    }

    /// Drops the `⌈(1−θ)·count⌉` oldest samples, then appends `fresh`.
    pub fn apply_update(mut self, theta: f64, fresh: Vec<Sample>) -> Self {
        let drop = discard_count(self.len(), theta);
        self.samples.drain(..drop);
        self.append(fresh);
        self
    }

    /// Mean of `age + 1` over the buffer at `round`; 1 for an empty buffer.
    pub fn empirical_staleness(&self, round: usize) -> f64 {
        if self.is_empty() {
            return 1.0;
        }
        let total: usize = self
            .samples
            .iter()
            .map(|s| round.saturating_sub(s.birth_round) + 1)
            .sum();
        total as f64 / self.len() as f64
    }
}

/// Free-function form of [`ClientBuffer::apply_update`].
pub fn apply_buffer_update(buffer: ClientBuffer, theta: f64, fresh: Vec<Sample>) -> ClientBuffer {
    buffer.apply_update(theta, fresh)
}

/// Per-feature blur for a sample of the given age.
pub fn aging_std(stream: &StreamConfig, age: usize) -> f64 {
    stream.aging_noise * stream.time_sensitivity * age as f64
}

/// Blurred copy of the buffer as seen in `round`; the buffer itself stays pristine.
pub fn age_samples(
    buffer: &ClientBuffer,
    stream: &StreamConfig,
    client: usize,
    round: usize,
) -> Vec<Sample> {
    let mut rng = stream_rng(stream.seed, client as u64, round as u64, Purpose::Aging);
    buffer
        .samples
        .iter()
        .map(|s| {
            let std = aging_std(stream, round.saturating_sub(s.birth_round));
            if std == 0.0 {
                return s.clone();
            }
            let features = s
                .features
                .iter()
                .map(|x| {
                    let z: f64 = StandardNormal.sample(&mut rng);
                    x + std * z
                })
                .collect();
            Sample {
                features,
                ..s.clone()
            }
        })
        .collect()
}
