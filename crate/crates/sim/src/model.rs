//! Multinomial logistic regression trained by mini-batch gradient descent.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Result, SimError};
use crate::stream::Sample;

/// Linear softmax classifier: `K × d` weights (row-major) and `K` biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GlobalModel {
    pub num_classes: usize,
    pub feature_dim: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    /// Round the model was produced in.
    pub round: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LocalTraining {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// Ridge penalty `λ/2 · ‖W‖²` on the weights (not the bias).
    pub l2: f64,
}

impl Default for LocalTraining {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 64,
            learning_rate: 1e-2,
            l2: 0.0,
        }
    }
}

impl LocalTraining {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(SimError::InvalidConfig {
                name: "batch_size",
                reason: "must be at least 1".into(),
            });
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(SimError::InvalidConfig {
                name: "learning_rate",
                reason: "must be positive".into(),
            });
        }
        if !(self.l2 >= 0.0) {
            return Err(SimError::InvalidConfig {
                name: "l2",
                reason: "must be nonnegative".into(),
            });
        }
        Ok(())
    }
}

impl GlobalModel {
    pub fn zeros(num_classes: usize, feature_dim: usize) -> Self {
        Self {
            num_classes,
            feature_dim,
            weights: vec![0.0; num_classes * feature_dim],
            bias: vec![0.0; num_classes],
            round: 0,
        }
    }

    /// Number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }

    /// Weights followed by biases.
    pub fn params(&self) -> Vec<f64> {
        self.weights.iter().chain(&self.bias).copied().collect()
    }

    pub fn set_params(&mut self, params: &[f64]) {
        let (w, b) = params.split_at(self.weights.len());
        self.weights.copy_from_slice(w);
        self.bias.copy_from_slice(b);
    }

    fn probabilities(&self, x: &[f64]) -> Vec<f64> {
        let mut z: Vec<f64> = (0..self.num_classes)
            .map(|c| {
                let row = &self.weights[c * self.feature_dim..(c + 1) * self.feature_dim];
                row.iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + self.bias[c]
            })
            .collect();
        let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for v in &mut z {
            *v = (*v - max).exp();
            total += *v;
        }
        z.iter_mut().for_each(|v| *v /= total);
        z
    }

    pub fn predict(&self, x: &[f64]) -> usize {
        let p = self.probabilities(x);
        (0..p.len()).fold(0, |best, c| if p[c] > p[best] { c } else { best })
    }

    /// Fraction of correctly classified samples; 0 for an empty set.
    pub fn accuracy(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|s| self.predict(&s.features) == s.label)
            .count();
        hits as f64 / samples.len() as f64
    }

    /// Mean cross-entropy plus the ridge penalty, and its gradient in [`params`](Self::params) order.
    pub fn loss_and_gradient(&self, batch: &[&Sample], l2: f64) -> (f64, Vec<f64>) {
        let d = self.feature_dim;
        let mut grad = vec![0.0; self.num_params()];
        let mut loss = 0.0;
        let n = batch.len().max(1) as f64;
        for s in batch {
            let p = self.probabilities(&s.features);
            loss -= p[s.label].max(f64::MIN_POSITIVE).ln();
            for c in 0..self.num_classes {
                let err = p[c] - if c == s.label { 1.0 } else { 0.0 };
                for (g, x) in grad[c * d..(c + 1) * d].iter_mut().zip(&s.features) {
                    *g += err * x;
                }
                grad[self.weights.len() + c] += err;
            }
        }
        grad.iter_mut().for_each(|g| *g /= n);
        loss /= n;
        if l2 > 0.0 {
            loss += 0.5 * l2 * self.weights.iter().map(|w| w * w).sum::<f64>();
            for (g, w) in grad.iter_mut().zip(&self.weights) {
                *g += l2 * w;
            }
        }
        (loss, grad)
    }

    /// Mean cross-entropy without the penalty; 0 for an empty set.
    pub fn mean_loss(&self, samples: &[Sample]) -> f64 {
        let refs: Vec<&Sample> = samples.iter().collect();
        if refs.is_empty() {
            0.0
        } else {
            self.loss_and_gradient(&refs, 0.0).0
        }
    }
}

/// Runs `cfg.epochs` shuffled passes of mini-batch gradient descent from `model`.
///
/// Returns `None` for an empty buffer, leaving the caller to skip the client.
pub fn local_train(
    model: &GlobalModel,
    samples: &[Sample],
    cfg: &LocalTraining,
    rng: &mut impl Rng,
) -> Option<GlobalModel> {
    if samples.is_empty() {
        return None;
    }
    let mut local = model.clone();
    let mut order: Vec<usize> = (0..samples.len()).collect();
    let mut params = local.params();
    for _ in 0..cfg.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&i| &samples[i]).collect();
            let (_, grad) = local.loss_and_gradient(&batch, cfg.l2);
            for (p, g) in params.iter_mut().zip(&grad) {
                *p -= cfg.learning_rate * g;
            }
            local.set_params(&params);
        }
    }
    Some(local)
}
