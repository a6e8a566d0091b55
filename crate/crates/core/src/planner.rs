//! Client-side optimal data-collection plans.
//!
//! Given the server's `(R, θ)` and a mean-field estimate `φ(t)` of the total
//! buffered volume, client `k` maximizes
//!
//! ```text
//! Σ_t [ D(t)/φ(t)·R − α·Δ(t)² − β·D(t)² ]   s.t.   D(t+1) = θ·D(t) + Δ(t),  Δ(t) ≥ 0
//! ```
//!
//! The optimum satisfies the Hamiltonian conditions
//!
//! ```text
//! λ(T-1) = R/φ(T-1) − 2β·D(T-1)
//! λ(t)   = θ·λ(t+1) + R/φ(t) − 2β·D(t)
//! Δ(t)   = [λ(t+1) / 2α]⁺,   Δ(T-1) = 0
//! ```
//!
//! a forward state equation coupled to a backward costate equation. For a
//! fixed set of rounds where the clamp is inactive the system is linear and
//! is solved exactly by a backward Riccati pass `λ(t) = P_t·D(t) + q_t`
//! followed by a forward roll. The outer loop re-derives the clamp set from
//! the new costates until it repeats (a primal-dual active-set iteration).
//! The problem is a strictly concave QP, so the fixed point is the unique
//! optimum; if the active-set iteration ever cycles, a Lawson–Hanson
//! active-set method reusing the same Riccati pass finishes the solve.

use serde::{Deserialize, Serialize};

use crate::buffer::{staleness_recursive, BufferTrajectory, VOLUME_EPS};
use crate::error::{GameError, Result};
use crate::scalar::Scalar;
use crate::server::ServerStrategy;

/// Per-client economics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClientProfile<S> {
    /// `α_k`: cost per squared unit of freshly collected data.
    pub collect_cost: S,
    /// `β_k`: cost per squared unit of buffered (trained-on) data.
    pub train_cost: S,
    /// `D_k⁰`
    pub initial_volume: S,
}

impl<S: Scalar> ClientProfile<S> {
    pub fn new(collect_cost: S, train_cost: S, initial_volume: S) -> Result<Self> {
        let p = Self {
            collect_cost,
            train_cost,
            initial_volume,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("collect_cost", self.collect_cost),
            ("train_cost", self.train_cost),
        ] {
            if !(v > S::zero()) || !v.is_finite() {
                return Err(GameError::InvalidParameter {
                    name,
                    reason: format!("must be positive, got {v}"),
                });
            }
        }
        if !(self.initial_volume >= S::zero()) || !self.initial_volume.is_finite() {
            return Err(GameError::Negative {
                what: "initial volume",
                value: self.initial_volume.as_f64(),
            });
        }
        Ok(())
    }
}

/// Estimate `φ(t)` of the total buffered volume across clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MeanField<S> {
    phi: Vec<S>,
}

impl<S: Scalar> MeanField<S> {
    pub fn new(phi: Vec<S>) -> Result<Self> {
        if let Some(bad) = phi.iter().find(|v| !(**v > S::zero()) || !v.is_finite()) {
            return Err(GameError::InvalidParameter {
                name: "mean field",
                reason: format!("entries must be positive and finite, got {bad}"),
            });
        }
        Ok(Self { phi })
    }

    /// Builds a field with every entry floored at `num_clients · VOLUME_EPS`.
    pub fn floored(phi: Vec<S>, num_clients: usize) -> Self {
        let floor = S::from_usize_lossy(num_clients.max(1)) * S::lit(VOLUME_EPS);
        Self {
            phi: phi.into_iter().map(|v| v.max(floor)).collect(),
        }
    }

    pub fn constant(value: S, horizon: usize) -> Result<Self> {
        Self::new(vec![value; horizon])
    }

    pub fn values(&self) -> &[S] {
        &self.phi
    }

    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// A client's trajectories over the horizon together with its utility.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClientPlan<S> {
    /// `Δ(0..T-1)`; the last entry is always zero.
    pub increments: Vec<S>,
    /// `D(0..T-1)`
    pub volumes: Vec<S>,
    /// `λ(0..T-1)`
    pub costates: Vec<S>,
    /// `S(0..T-1)`
    pub staleness: Vec<S>,
    pub utility: S,
    /// Outer active-set iterations used by the solve.
    pub iterations: usize,
}

impl<S: Scalar> ClientPlan<S> {
    pub fn horizon(&self) -> usize {
        self.volumes.len()
    }

    /// Rounds where the clamp is inactive (`Δ(t) > 0`).
    pub fn collecting_rounds(&self) -> Vec<bool> {
        self.increments.iter().map(|&d| d > S::zero()).collect()
    }

    pub fn total_collection(&self) -> S {
        self.increments.iter().copied().sum()
    }

    /// Builds a plan from arbitrary nonnegative increments (used for baselines).
    ///
    /// The final increment is ignored for the trajectory since `D(T)` lies
    /// outside the horizon; it is forced to zero in the returned plan.
    pub fn from_increments(
        profile: &ClientProfile<S>,
        strategy: &ServerStrategy<S>,
        field: &MeanField<S>,
        increments: &[S],
    ) -> Result<Self> {
        let horizon = field.len();
        if increments.len() != horizon {
            return Err(GameError::LengthMismatch {
                what: "increments",
                expected: horizon,
                got: increments.len(),
            });
        }
        if horizon == 0 {
            return Err(GameError::InvalidParameter {
                name: "horizon",
                reason: "must be at least 1".into(),
            });
        }
        let buffer = BufferTrajectory::roll(
            profile.initial_volume,
            strategy.conservation,
            &increments[..horizon - 1],
        )?;
        let mut deltas = increments.to_vec();
        deltas[horizon - 1] = S::zero();
        let prices = prices(strategy, field);
        let costates = costates(
            &prices,
            profile.train_cost,
            strategy.conservation,
            buffer.volumes(),
        );
        let staleness = staleness_recursive(&buffer).into_values();
        let volumes = buffer.into_volumes();
        let utility = utility_of(profile, strategy, field, &deltas, &volumes);
        Ok(Self {
            increments: deltas,
            volumes,
            costates,
            staleness,
            utility,
            iterations: 0,
        })
    }
}

/// Stopping rule of the inner solve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlannerConfig {
    /// `ε_inner`: admissible `|Δ − [λ/2α]⁺|` at the solution.
    pub tolerance: f64,
    /// `max_inner`: cap on active-set iterations (per phase).
    pub max_iterations: usize,
}

impl Default for PlannerConfig {
    fn default() -> Self {
        Self {
            tolerance: 1e-8,
            max_iterations: 10_000,
        }
    }
}

/// Optimal plan for one client.
pub fn solve_plan<S: Scalar>(
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
    cfg: &PlannerConfig,
) -> Result<ClientPlan<S>> {
    solve_plan_warm(profile, strategy, field, cfg, None)
}

/// [`solve_plan`] seeded with a guess of the collecting rounds, typically
/// the previous solution for a nearby mean field.
pub fn solve_plan_warm<S: Scalar>(
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
    cfg: &PlannerConfig,
    warm: Option<&[bool]>,
) -> Result<ClientPlan<S>> {
    profile.validate()?;
    strategy.validate()?;
    let horizon = field.len();
    if horizon == 0 {
        return Err(GameError::InvalidParameter {
            name: "mean field",
            reason: "horizon must be at least 1".into(),
        });
    }
    let prices = prices(strategy, field);
    let theta = strategy.conservation;

    let mut free = match warm {
        Some(w) if w.len() == horizon => w.to_vec(),
        _ => vec![false; horizon],
    };
    free[horizon - 1] = false;

    let tol_delta = S::lit(cfg.tolerance);
    let mut seen: Vec<Vec<bool>> = Vec::new();
    let mut solution = None;
    let mut iterations = 0;
    while iterations < cfg.max_iterations {
        iterations += 1;
        let (deltas, volumes) = riccati_sweep(profile, theta, &prices, &free);
        let lambda = costates(&prices, profile.train_cost, theta, &volumes);
        let next: Vec<bool> = (0..horizon)
            .map(|t| t + 1 < horizon && lambda[t + 1] > S::zero())
            .collect();
        if next == free {
            if kkt_residual(profile, &deltas, &lambda) <= tol_delta * scale_of(&deltas) {
                solution = Some(deltas);
            }
            break;
        }
        if seen.contains(&next) {
            break;
        }
        seen.push(std::mem::replace(&mut free, next));
    }

    let deltas = match solution {
        Some(d) => d,
        None => {
            let (deltas, extra) = lawson_hanson(profile, theta, &prices, cfg)?;
            iterations += extra;
            deltas
        }
    };
    finish(profile, strategy, field, deltas, iterations)
}

/// Utility of `plan` under the mean-field objective.
pub fn client_utility<S: Scalar>(
    plan: &ClientPlan<S>,
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
) -> Result<S> {
    let horizon = field.len();
    if plan.volumes.len() != horizon || plan.increments.len() != horizon {
        return Err(GameError::LengthMismatch {
            what: "plan horizon",
            expected: horizon,
            got: plan.volumes.len(),
        });
    }
    Ok(utility_of(
        profile,
        strategy,
        field,
        &plan.increments,
        &plan.volumes,
    ))
}

/// Client `k`'s share `D_k(t)·R / Σ_i D_i(t)` of the per-round payment; zero when all buffers are empty.
pub fn exact_payment_share<S: Scalar>(volumes: &[S], k: usize, payment: S) -> S {
    let total: S = volumes.iter().copied().sum();
    if total <= S::zero() {
        return S::zero();
    }
    volumes[k] * payment / total
}

/// Evaluates the collection rule directly from a volume trajectory:
/// `Δ(t) = [1/(2α) · Σ_{τ=t+1}^{T-1} θ^(τ-t-1)·(R/φ(τ) − 2β·D(τ))]⁺`, `Δ(T-1) = 0`.
pub fn increments_from_volumes<S: Scalar>(
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
    volumes: &[S],
) -> Vec<S> {
    let horizon = volumes.len();
    let theta = strategy.conservation;
    let two = S::lit(2.0);
    (0..horizon)
        .map(|t| {
            if t + 1 >= horizon {
                return S::zero();
            }
            let sum: S = (t + 1..horizon)
                .map(|tau| {
                    theta.powi((tau - t - 1) as i32)
                        * (strategy.payment / field.values()[tau]
                            - two * profile.train_cost * volumes[tau])
                })
                .sum();
            (sum / (two * profile.collect_cost)).max(S::zero())
        })
        .collect()
}

/// `∂D(t)/∂p(τ)` for the linear system with the collecting rounds frozen,
/// where `p(τ) = R/φ(τ)` is the per-unit price. Column `τ` is returned as
/// `out[τ]`.
pub(crate) fn price_response<S: Scalar>(
    profile: &ClientProfile<S>,
    theta: S,
    collecting: &[bool],
) -> Vec<Vec<S>> {
    let horizon = collecting.len();
    let homogeneous = ClientProfile {
        initial_volume: S::zero(),
        ..*profile
    };
    let mut unit = vec![S::zero(); horizon];
    (0..horizon)
        .map(|tau| {
            unit[tau] = S::one();
            let (_, volumes) = riccati_sweep(&homogeneous, theta, &unit, collecting);
            unit[tau] = S::zero();
            volumes
        })
        .collect()
}

fn prices<S: Scalar>(strategy: &ServerStrategy<S>, field: &MeanField<S>) -> Vec<S> {
    field
        .values()
        .iter()
        .map(|&phi| strategy.payment / phi)
        .collect()
}

/// Exact solve of the forward–backward system with `Δ(t) = 0` outside `free`.
fn riccati_sweep<S: Scalar>(
    profile: &ClientProfile<S>,
    theta: S,
    prices: &[S],
    free: &[bool],
) -> (Vec<S>, Vec<S>) {
    let horizon = prices.len();
    let two = S::lit(2.0);
    let beta2 = two * profile.train_cost;
    let gain = S::one() / (two * profile.collect_cost);

    let mut p_coef = vec![S::zero(); horizon];
    let mut q_coef = vec![S::zero(); horizon];
    let mut denom = vec![S::one(); horizon];
    p_coef[horizon - 1] = -beta2;
    q_coef[horizon - 1] = prices[horizon - 1];
    for t in (0..horizon.saturating_sub(1)).rev() {
        let c = if free[t] { gain } else { S::zero() };
        // P ≤ 0 throughout, so the denominator stays ≥ 1.
        denom[t] = S::one() - p_coef[t + 1] * c;
        p_coef[t] = theta * theta * p_coef[t + 1] / denom[t] - beta2;
        q_coef[t] = theta * q_coef[t + 1] / denom[t] + prices[t];
    }

    let mut deltas = vec![S::zero(); horizon];
    let mut volumes = vec![S::zero(); horizon];
    volumes[0] = profile.initial_volume;
    for t in 0..horizon.saturating_sub(1) {
        if free[t] {
            let lambda_next = (p_coef[t + 1] * theta * volumes[t] + q_coef[t + 1]) / denom[t];
            deltas[t] = gain * lambda_next;
        }
        volumes[t + 1] = theta * volumes[t] + deltas[t];
    }
    (deltas, volumes)
}

fn costates<S: Scalar>(prices: &[S], train_cost: S, theta: S, volumes: &[S]) -> Vec<S> {
    let horizon = prices.len();
    let beta2 = S::lit(2.0) * train_cost;
    let mut lambda = vec![S::zero(); horizon];
    lambda[horizon - 1] = prices[horizon - 1] - beta2 * volumes[horizon - 1];
    for t in (0..horizon.saturating_sub(1)).rev() {
        lambda[t] = theta * lambda[t + 1] + prices[t] - beta2 * volumes[t];
    }
    lambda
}

/// `max_t |Δ(t) − [λ(t+1)/2α]⁺|`
fn kkt_residual<S: Scalar>(profile: &ClientProfile<S>, deltas: &[S], lambda: &[S]) -> S {
    let gain = S::one() / (S::lit(2.0) * profile.collect_cost);
    let horizon = deltas.len();
    (0..horizon)
        .map(|t| {
            let target = if t + 1 < horizon {
                (gain * lambda[t + 1]).max(S::zero())
            } else {
                S::zero()
            };
            (deltas[t] - target).abs()
        })
        .fold(S::zero(), S::max)
}

fn scale_of<S: Scalar>(deltas: &[S]) -> S {
    deltas.iter().copied().fold(S::one(), S::max)
}

/// Lawson–Hanson active-set method on the collection QP. Each subproblem
/// (optimum over a free set with the other increments pinned to zero) is one
/// Riccati sweep.
fn lawson_hanson<S: Scalar>(
    profile: &ClientProfile<S>,
    theta: S,
    prices: &[S],
    cfg: &PlannerConfig,
) -> Result<(Vec<S>, usize)> {
    let horizon = prices.len();
    let two = S::lit(2.0);
    let tol_grad = two * profile.collect_cost * S::lit(cfg.tolerance);
    let mut x = vec![S::zero(); horizon];
    let mut free = vec![false; horizon];
    let mut iterations = 0;

    loop {
        if iterations >= cfg.max_iterations {
            let volumes = roll_volumes(profile, theta, &x);
            let lambda = costates(prices, profile.train_cost, theta, &volumes);
            return Err(GameError::InnerNonConvergence {
                iterations,
                residual: kkt_residual(profile, &x, &lambda).as_f64(),
            });
        }
        iterations += 1;
        let volumes = roll_volumes(profile, theta, &x);
        let lambda = costates(prices, profile.train_cost, theta, &volumes);
        // Negative gradient of the minimization form: λ(t+1) − 2αΔ(t).
        let entering = (0..horizon.saturating_sub(1))
            .filter(|&t| !free[t])
            .map(|t| (t, lambda[t + 1] - two * profile.collect_cost * x[t]))
            .filter(|&(_, w)| w > tol_grad)
            .fold(None::<(usize, S)>, |best, cand| match best {
                Some(b) if b.1 >= cand.1 => Some(b),
                _ => Some(cand),
            });
        let Some((j, _)) = entering else {
            return Ok((x, iterations));
        };
        free[j] = true;

        loop {
            let (z, _) = riccati_sweep(profile, theta, prices, &free);
            // Largest step toward z that keeps every free increment nonnegative.
            let blocking = (0..horizon)
                .filter(|&t| free[t] && z[t] <= S::zero())
                .map(|t| {
                    let gap = x[t] - z[t];
                    let step = if gap > S::zero() {
                        x[t] / gap
                    } else {
                        S::zero()
                    };
                    (t, step)
                })
                .fold(None::<(usize, S)>, |best, cand| match best {
                    Some(b) if b.1 <= cand.1 => Some(b),
                    _ => Some(cand),
                });
            let Some((stop, step)) = blocking else {
                x = z;
                break;
            };
            for t in 0..horizon {
                if free[t] {
                    x[t] = x[t] + step * (z[t] - x[t]);
                    if t == stop || x[t] <= S::zero() {
                        x[t] = S::zero();
                        free[t] = false;
                    }
                }
            }
        }
    }
}

fn roll_volumes<S: Scalar>(profile: &ClientProfile<S>, theta: S, deltas: &[S]) -> Vec<S> {
    let mut volumes = Vec::with_capacity(deltas.len());
    let mut current = profile.initial_volume;
    for &d in deltas {
        volumes.push(current);
        current = theta * current + d;
    }
    volumes
}

fn utility_of<S: Scalar>(
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
    deltas: &[S],
    volumes: &[S],
) -> S {
    volumes
        .iter()
        .zip(deltas)
        .zip(field.values())
        .map(|((&d, &delta), &phi)| {
            d / phi * strategy.payment
                - profile.collect_cost * delta * delta
                - profile.train_cost * d * d
        })
        .sum()
}

fn finish<S: Scalar>(
    profile: &ClientProfile<S>,
    strategy: &ServerStrategy<S>,
    field: &MeanField<S>,
    mut deltas: Vec<S>,
    iterations: usize,
) -> Result<ClientPlan<S>> {
    let horizon = deltas.len();
    for d in deltas.iter_mut() {
        *d = d.max(S::zero());
    }
    deltas[horizon - 1] = S::zero();
    let mut plan = ClientPlan::from_increments(profile, strategy, field, &deltas)?;
    plan.iterations = iterations;
    Ok(plan)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn profile(alpha: f64, beta: f64, d0: f64) -> ClientProfile<f64> {
        ClientProfile::new(alpha, beta, d0).unwrap()
    }

    fn strategy(r: f64, theta: f64) -> ServerStrategy<f64> {
        ServerStrategy::new(r, theta).unwrap()
    }

    fn utility_direct(
        p: &ClientProfile<f64>,
        s: &ServerStrategy<f64>,
        phi: &[f64],
        deltas: &[f64],
    ) -> f64 {
        let mut d = p.initial_volume;
        let mut total = 0.0;
        for t in 0..phi.len() {
            total +=
                d / phi[t] * s.payment - p.collect_cost * deltas[t].powi(2) - p.train_cost * d * d;
            d = s.conservation * d + deltas[t];
        }
        total
    }

    fn random_instance(
        rng: &mut ChaCha8Rng,
        horizon: usize,
    ) -> (ClientProfile<f64>, ServerStrategy<f64>, MeanField<f64>) {
        let p = profile(
            rng.random_range(1e-4..1e-3),
            rng.random_range(5e-6..5e-5),
            rng.random_range(0.0..1500.0),
        );
        let s = strategy(rng.random_range(0.0..500.0), rng.random_range(0.0..=1.0));
        let phi = (0..horizon)
            .map(|_| rng.random_range(300.0..20_000.0))
            .collect();
        (p, s, MeanField::new(phi).unwrap())
    }

    #[test]
    fn zero_payment_collects_nothing() {
        let p = profile(3e-4, 2e-5, 800.0);
        let s = strategy(0.0, 0.7);
        let field = MeanField::constant(5000.0, 12).unwrap();
        let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();
        assert!(plan.increments.iter().all(|&d| d == 0.0));
        for (t, &v) in plan.volumes.iter().enumerate() {
            assert!((v - 0.7f64.powi(t as i32) * 800.0).abs() < 1e-9);
        }
    }

    #[test]
    fn last_round_never_collects() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..50 {
            let horizon = rng.random_range(1..40);
            let (p, s, field) = random_instance(&mut rng, horizon);
            let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();
            assert_eq!(*plan.increments.last().unwrap(), 0.0);
            assert!(plan.increments.iter().all(|&d| d >= 0.0));
        }
    }

    #[test]
    fn matches_dense_grid_search() {
        let p = profile(1e-3, 1e-5, 100.0);
        let s = strategy(60.0, 0.5);
        let phi = [300.0; 3];
        let field = MeanField::new(phi.to_vec()).unwrap();
        let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();

        let mut best = (f64::NEG_INFINITY, 0.0, 0.0);
        for i in 0..=2000 {
            for j in 0..=2000 {
                let (a, b) = (i as f64 * 0.25, j as f64 * 0.25);
                let u = utility_direct(&p, &s, &phi, &[a, b, 0.0]);
                if u > best.0 {
                    best = (u, a, b);
                }
            }
        }
        assert!(
            (plan.utility - best.0).abs() <= 1e-2,
            "{} vs {}",
            plan.utility,
            best.0
        );
        assert!(plan.utility >= best.0 - 1e-9);
        assert!((plan.increments[0] - best.1).abs() <= 0.25);
        assert!((plan.increments[1] - best.2).abs() <= 0.25);
    }

    #[test]
    fn finite_difference_optimality() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let h = 1e-4;
        for _ in 0..40 {
            let horizon = rng.random_range(2..30);
            let (p, s, field) = random_instance(&mut rng, horizon);
            let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();
            for t in 0..horizon - 1 {
                let mut up = plan.increments.clone();
                let mut down = plan.increments.clone();
                up[t] += h;
                down[t] -= h;
                let grad = (utility_direct(&p, &s, field.values(), &up)
                    - utility_direct(&p, &s, field.values(), &down))
                    / (2.0 * h);
                if plan.increments[t] > 1e-3 {
                    assert!(grad.abs() <= 1e-4, "interior gradient {grad} at t={t}");
                } else {
                    assert!(grad <= 1e-4, "clamped round could improve: {grad}");
                }
            }
        }
    }

    #[test]
    fn lawson_hanson_agrees_with_active_set_sweep() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = PlannerConfig::default();
        for _ in 0..60 {
            let horizon = rng.random_range(1..60);
            let (p, s, field) = random_instance(&mut rng, horizon);
            let plan = solve_plan(&p, &s, &field, &cfg).unwrap();
            let (lh, _) = lawson_hanson(&p, s.conservation, &prices(&s, &field), &cfg).unwrap();
            for (a, b) in plan.increments.iter().zip(&lh) {
                assert!((a - b).abs() <= 1e-7 * (1.0 + a.abs()), "{a} vs {b}");
            }
        }
    }

    #[test]
    fn unclamped_rule_reproduces_sweep() {
        let p = profile(1e-3, 1e-5, 10.0);
        let s = strategy(100.0, 0.6);
        let field = MeanField::constant(100.0, 15).unwrap();
        let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();
        assert!(plan.increments[..14].iter().all(|&d| d > 0.0));
        let rule = increments_from_volumes(&p, &s, &field, &plan.volumes);
        for (a, b) in plan.increments.iter().zip(&rule) {
            assert!((a - b).abs() <= 1e-8);
        }
        // λ(t+1)/2α is the same quantity via the stored costates.
        for t in 0..14 {
            assert!((plan.costates[t + 1] / 2e-3 - plan.increments[t]).abs() <= 1e-8);
        }
    }

    #[test]
    fn comparative_statics() {
        let field = MeanField::new((0..25).map(|t| 2000.0 + 40.0 * t as f64).collect()).unwrap();
        let cfg = PlannerConfig::default();
        let solve = |a: f64, b: f64, r: f64| {
            solve_plan(&profile(a, b, 300.0), &strategy(r, 0.6), &field, &cfg).unwrap()
        };
        let check = |lo: &ClientPlan<f64>, hi: &ClientPlan<f64>| {
            for (l, h) in lo.increments.iter().zip(&hi.increments) {
                assert!(*h >= *l - 1e-9, "{h} < {l}");
            }
        };
        let payments = [0.0, 10.0, 50.0, 100.0, 250.0, 500.0];
        for w in payments.windows(2) {
            check(&solve(4e-4, 2e-5, w[0]), &solve(4e-4, 2e-5, w[1]));
        }
        let alphas = [1e-4, 2e-4, 5e-4, 1e-3];
        for w in alphas.windows(2) {
            check(&solve(w[1], 2e-5, 200.0), &solve(w[0], 2e-5, 200.0));
        }
        let betas = [5e-6, 1e-5, 2e-5, 5e-5];
        for w in betas.windows(2) {
            check(&solve(4e-4, w[1], 200.0), &solve(4e-4, w[0], 200.0));
        }
    }

    #[test]
    fn utility_examples() {
        let p = profile(1e-3, 1e-5, 0.0);
        let s = strategy(60.0, 0.5);
        let field = MeanField::constant(300.0, 4).unwrap();
        let idle = ClientPlan::from_increments(&p, &s, &field, &[0.0; 4]).unwrap();
        assert_eq!(client_utility(&idle, &p, &s, &field).unwrap(), 0.0);

        // Identical clients against φ = N·D receive R/N per round.
        let p = profile(1e-3, 1e-5, 100.0);
        let s = strategy(60.0, 1.0);
        let n = 3.0;
        let field = MeanField::constant(n * 100.0, 4).unwrap();
        let plan = ClientPlan::from_increments(&p, &s, &field, &[0.0; 4]).unwrap();
        let payment: f64 = plan
            .volumes
            .iter()
            .zip(field.values())
            .map(|(d, phi)| d / phi * s.payment)
            .sum();
        assert!((payment - 4.0 * 20.0).abs() < 1e-12);
        assert!(client_utility(&plan, &p, &s, &MeanField::constant(1.0, 3).unwrap()).is_err());
    }

    #[test]
    fn payment_share_examples() {
        assert_eq!(exact_payment_share(&[100.0, 100.0, 100.0], 0, 60.0), 20.0);
        assert_eq!(exact_payment_share(&[0.0, 0.0, 0.0], 1, 60.0), 0.0);
        assert_eq!(exact_payment_share(&[10.0, 30.0], 1, 100.0), 75.0);
    }

    #[test]
    fn rejects_invalid_profiles() {
        assert!(ClientProfile::new(0.0, 1e-5, 10.0).is_err());
        assert!(ClientProfile::new(1e-3, -1e-5, 10.0).is_err());
        assert!(ClientProfile::new(1e-3, 1e-5, -1.0).is_err());
        assert!(MeanField::new(vec![1.0, 0.0]).is_err());
    }

    #[test]
    fn single_precision_plan() {
        let p = ClientProfile::<f32>::new(1e-3, 1e-5, 100.0).unwrap();
        let s = ServerStrategy::<f32>::new(60.0, 0.5).unwrap();
        let field = MeanField::constant(300.0f32, 3).unwrap();
        let plan = solve_plan(
            &p,
            &s,
            &field,
            &PlannerConfig {
                tolerance: 1e-4,
                ..Default::default()
            },
        )
        .unwrap();
        let p64 = profile(1e-3, 1e-5, 100.0);
        let plan64 = solve_plan(
            &p64,
            &strategy(60.0, 0.5),
            &MeanField::constant(300.0, 3).unwrap(),
            &PlannerConfig::default(),
        )
        .unwrap();
        for (a, b) in plan.increments.iter().zip(&plan64.increments) {
            assert!((*a as f64 - b).abs() < 1e-2 * (1.0 + b));
        }
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn beats_volume_preserving_perturbations(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let horizon = rng.random_range(3..25);
            let (p, s, field) = random_instance(&mut rng, horizon);
            let plan = solve_plan(&p, &s, &field, &PlannerConfig::default()).unwrap();
            for _ in 0..50 {
                let mut deltas = plan.increments.clone();
                let from = rng.random_range(0..horizon - 1);
                let to = rng.random_range(0..horizon - 1);
                let amount = deltas[from] * rng.random_range(0.0..=1.0);
                deltas[from] -= amount;
                deltas[to] += amount;
                let u = utility_direct(&p, &s, field.values(), &deltas);
                prop_assert!(u <= plan.utility + 1e-9 * (1.0 + plan.utility.abs()));
            }
        }
    }
}
