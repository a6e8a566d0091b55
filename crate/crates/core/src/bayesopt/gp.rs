//! Gaussian-process surrogate over the normalized strategy box.
//!
//! Squared-exponential kernel with one length scale per input. Targets are
//! standardized before fitting, so the signal variance is 1 in standardized
//! units. Length scales are picked from a fixed grid by log marginal
//! likelihood.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};

use crate::error::{GameError, Result};

/// Candidate length scales for each input dimension.
pub const LENGTH_SCALE_GRID: [f64; 5] = [0.05, 0.1, 0.2, 0.4, 0.8];
/// First jitter tried on the kernel diagonal.
pub const INITIAL_JITTER: f64 = 1e-8;
/// Largest jitter before the kernel is declared singular.
pub const MAX_JITTER: f64 = 1e-1;

/// Axis-aligned box of the two strategy inputs `(R, θ)`.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct Bounds {
    pub lower: [f64; 2],
    pub upper: [f64; 2],
}

impl Bounds {
    pub fn new(lower: [f64; 2], upper: [f64; 2]) -> Result<Self> {
        for d in 0..2 {
            if !(lower[d].is_finite() && upper[d].is_finite() && lower[d] < upper[d]) {
                return Err(GameError::InvalidParameter {
                    name: "bounds",
                    reason: format!("need lower < upper, got [{}, {}]", lower[d], upper[d]),
                });
            }
        }
        Ok(Self { lower, upper })
    }

    pub fn normalize(&self, x: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|d| (x[d] - self.lower[d]) / (self.upper[d] - self.lower[d]))
    }

    pub fn denormalize(&self, u: [f64; 2]) -> [f64; 2] {
        [0, 1].map(|d| self.lower[d] + u[d] * (self.upper[d] - self.lower[d]))
    }

    pub fn contains(&self, x: [f64; 2]) -> bool {
        (0..2).all(|d| x[d] >= self.lower[d] && x[d] <= self.upper[d])
    }

    /// The four vertices of the box.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let (l, u) = (self.lower, self.upper);
        [[l[0], l[1]], [l[0], u[1]], [u[0], l[1]], [u[0], u[1]]]
    }
}

/// Fitted posterior.
#[derive(Debug, Clone)]
pub struct GpState {
    bounds: Bounds,
    inputs: Vec<[f64; 2]>,
    targets: Vec<f64>,
    target_mean: f64,
    target_scale: f64,
    pub length_scales: [f64; 2],
    /// Signal variance in raw cost units.
    pub signal_variance: f64,
    pub noise_jitter: f64,
    pub log_marginal_likelihood: f64,
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
}

/// Posterior mean and standard deviation at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub mean: f64,
    pub std_dev: f64,
}

fn kernel(a: [f64; 2], b: [f64; 2], ls: [f64; 2]) -> f64 {
    let r2: f64 = (0..2).map(|d| ((a[d] - b[d]) / ls[d]).powi(2)).sum();
    (-0.5 * r2).exp()
}

struct Fit {
    chol: Cholesky<f64, Dyn>,
    weights: DVector<f64>,
    jitter: f64,
    lml: f64,
}

fn fit_with(inputs: &[[f64; 2]], y: &DVector<f64>, ls: [f64; 2]) -> Option<Fit> {
    let n = inputs.len();
    let base = DMatrix::from_fn(n, n, |i, j| kernel(inputs[i], inputs[j], ls));
    let mut jitter = INITIAL_JITTER;
    while jitter <= MAX_JITTER * (1.0 + 1e-12) {
        let mut k = base.clone();
        for i in 0..n {
            k[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(k) {
            let weights = chol.solve(y);
            let log_det: f64 = chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum();
            let lml = -0.5 * y.dot(&weights)
                - log_det
                - 0.5 * n as f64 * (2.0 * std::f64::consts::PI).ln();
            return Some(Fit {
                chol,
                weights,
                jitter,
                lml,
            });
        }
        jitter *= 10.0;
    }
    None
}

/// Fits a GP to `(point, cost)` observations given in raw `(R, θ)` units.
pub fn gp_fit(observations: &[([f64; 2], f64)], bounds: &Bounds) -> Result<GpState> {
    if observations.is_empty() {
        return Err(GameError::NoObservations);
    }
    for (x, cost) in observations {
        if !bounds.contains(*x) || !cost.is_finite() {
            return Err(GameError::InvalidParameter {
                name: "observation",
                reason: format!(
                    "({}, {}) -> {cost} is outside the box or not finite",
                    x[0], x[1]
                ),
            });
        }
    }
    let n = observations.len() as f64;
    let inputs: Vec<[f64; 2]> = observations
        .iter()
        .map(|(x, _)| bounds.normalize(*x))
        .collect();
    let targets: Vec<f64> = observations.iter().map(|(_, c)| *c).collect();
    let target_mean = targets.iter().sum::<f64>() / n;
    let variance = targets
        .iter()
        .map(|c| (c - target_mean).powi(2))
        .sum::<f64>()
        / n;
    let target_scale = if variance > 0.0 { variance.sqrt() } else { 1.0 };
    let y = DVector::from_iterator(
        targets.len(),
        targets.iter().map(|c| (c - target_mean) / target_scale),
    );

    let mut best: Option<(Fit, [f64; 2])> = None;
    for &l0 in &LENGTH_SCALE_GRID {
        for &l1 in &LENGTH_SCALE_GRID {
            let ls = [l0, l1];
            if let Some(fit) = fit_with(&inputs, &y, ls) {
                if best.as_ref().is_none_or(|(b, _)| fit.lml > b.lml) {
                    best = Some((fit, ls));
                }
            }
        }
    }
    let Some((fit, length_scales)) = best else {
        return Err(GameError::SingularKernel { jitter: MAX_JITTER });
    };
    Ok(GpState {
        bounds: *bounds,
        inputs,
        targets,
        target_mean,
        target_scale,
        length_scales,
        signal_variance: target_scale * target_scale,
        noise_jitter: fit.jitter,
        log_marginal_likelihood: fit.lml,
        chol: fit.chol,
        weights: fit.weights,
    })
}

impl GpState {
    pub fn num_observations(&self) -> usize {
        self.inputs.len()
    }

    /// Raw observed costs, in insertion order.
    pub fn targets(&self) -> &[f64] {
        &self.targets
    }

    pub fn bounds(&self) -> &Bounds {
        &self.bounds
    }

    /// Posterior at a raw `(R, θ)` point.
    pub fn predict(&self, x: [f64; 2]) -> Prediction {
        let u = self.bounds.normalize(x);
        let k = DVector::from_iterator(
            self.inputs.len(),
            self.inputs
                .iter()
                .map(|&xi| kernel(u, xi, self.length_scales)),
        );
        let mean = k.dot(&self.weights);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&k)
            .unwrap_or_else(|| DVector::zeros(k.len()));
        let variance = (1.0 - v.dot(&v)).max(0.0);
        Prediction {
            mean: self.target_mean + self.target_scale * mean,
            std_dev: self.target_scale * variance.sqrt(),
        }
    }
}
