//! Server-side strategy, staleness-aware cost and the convergence-bound diagnostic.
//!
//! The server pays `R` per round and fixes the conservation rate `θ`. Its
//! cost trades payment against the two controllable accuracy terms of the
//! convergence bound, a volume term `κ₂·N·ψ²/D(t)` and a staleness term
//! `κ₃·Σ_k D_k(t)/D(t)·S_k(t)·σ²`, discounted by `κ₁^(T-1-t)`:
//!
//! ```text
//! U(R, θ) = Σ_t [ γR + (1-γ)·κ₁^(T-1-t)·( volume(t) + staleness(t) ) ]
//! ```

use serde::{Deserialize, Serialize};

use crate::buffer::{check_conservation, VOLUME_EPS};
use crate::error::{GameError, Result};
use crate::planner::ClientPlan;
use crate::scalar::Scalar;

/// The pair `(R, θ)` announced by the server.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ServerStrategy<S> {
    pub payment: S,
    pub conservation: S,
}

impl<S: Scalar> ServerStrategy<S> {
    pub fn new(payment: S, conservation: S) -> Result<Self> {
        let s = Self {
            payment,
            conservation,
        };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        check_conservation(self.conservation)?;
        if !(self.payment >= S::zero()) || !self.payment.is_finite() {
            return Err(GameError::Negative {
                what: "payment",
                value: self.payment.as_f64(),
            });
        }
        Ok(())
    }
}

/// Weights of the server cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerParams<S> {
    /// `γ`: weight of payment against accuracy loss.
    pub tradeoff: S,
    pub kappa1: S,
    pub kappa2: S,
    pub kappa3: S,
    /// `ψ`: gradient-noise scale of the volume term.
    pub noise_scale: S,
    /// `σ`: how fast data loses value with age.
    pub time_sensitivity: S,
    pub num_clients: usize,
    pub horizon: usize,
}

impl<S: Scalar> ServerParams<S> {
    pub fn validate(&self) -> Result<()> {
        let invalid = |name: &'static str, reason: &str| GameError::InvalidParameter {
            name,
            reason: reason.to_string(),
        };
        if !(self.tradeoff >= S::zero() && self.tradeoff <= S::one()) {
            return Err(invalid("tradeoff", "must lie in [0, 1]"));
        }
        if !(self.kappa1 > S::zero()) {
            return Err(invalid("kappa1", "must be positive"));
        }
        for (name, v) in [
            ("kappa2", self.kappa2),
            ("kappa3", self.kappa3),
            ("noise_scale", self.noise_scale),
            ("time_sensitivity", self.time_sensitivity),
        ] {
            if !(v >= S::zero()) {
                return Err(invalid(name, "must be nonnegative"));
            }
        }
        if self.num_clients == 0 {
            return Err(invalid("num_clients", "must be at least 1"));
        }
        if self.horizon == 0 {
            return Err(invalid("horizon", "must be at least 1"));
        }
        Ok(())
    }

    /// Replaces the three `κ` weights by their closed forms in terms of the learning constants.
    pub fn with_kappas(mut self, kappas: Kappas<S>) -> Self {
        self.kappa1 = kappas.kappa1;
        self.kappa2 = kappas.kappa2;
        self.kappa3 = kappas.kappa3;
        self
    }
}

/// Learning-problem constants behind the convergence bound.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceParams<S> {
    /// `ρ`
    pub lipschitz: S,
    /// `β`
    pub smoothness: S,
    /// `μ`
    pub strong_convexity: S,
    /// `η`, must satisfy `η ≤ 1/(2β)`
    pub learning_rate: S,
    /// `E[F(w(0)) - F(w*)]`
    pub initial_gap: S,
    /// Per-round loss shift `Ω_t`; empty means all zeros.
    pub omega: Vec<S>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Kappas<S> {
    pub kappa1: S,
    pub kappa2: S,
    pub kappa3: S,
}

/// `κ₁ = 1 + 4μβη² − 2μη`, `κ₂ = 2βη²`, `κ₃ = βη²`.
pub fn kappa_from_constants<S: Scalar>(conv: &ConvergenceParams<S>) -> Kappas<S> {
    let (mu, beta, eta) = (conv.strong_convexity, conv.smoothness, conv.learning_rate);
    let two = S::lit(2.0);
    let beta_eta2 = beta * eta * eta;
    Kappas {
        kappa1: S::one() + S::lit(4.0) * mu * beta_eta2 - two * mu * eta,
        kappa2: two * beta_eta2,
        kappa3: beta_eta2,
    }
}

/// The two controllable accuracy terms of one round, before discounting.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundTerms<S> {
    /// `κ₂·N·ψ²/D(t)`
    pub volume: S,
    /// `κ₃·Σ_k D_k(t)/D(t)·S_k(t)·σ²`
    pub staleness: S,
    /// `κ₁^(T-1-t)`
    pub discount: S,
}

/// Itemized server cost.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown<S> {
    pub total: S,
    /// `γ·T·R`
    pub payment: S,
    /// `(1-γ)·Σ_t κ₁^(T-1-t)·volume(t)`
    pub volume: S,
    /// `(1-γ)·Σ_t κ₁^(T-1-t)·staleness(t)`
    pub staleness: S,
    pub rounds: Vec<RoundTerms<S>>,
    /// Rounds whose total volume fell below the division guard and was floored.
    pub guarded_rounds: Vec<usize>,
}

impl<S: Scalar> CostBreakdown<S> {
    /// `(1-γ)`-scaled accuracy part of the cost.
    pub fn accuracy(&self) -> S {
        self.volume + self.staleness
    }
}

/// Evaluates the per-round accuracy terms over the clients' planned trajectories.
pub fn round_terms<S: Scalar>(
    plans: &[ClientPlan<S>],
    params: &ServerParams<S>,
) -> Result<(Vec<RoundTerms<S>>, Vec<usize>)> {
    params.validate()?;
    if plans.len() != params.num_clients {
        return Err(GameError::LengthMismatch {
            what: "client plans",
            expected: params.num_clients,
            got: plans.len(),
        });
    }
    let horizon = params.horizon;
    for plan in plans {
        if plan.horizon() != horizon {
            return Err(GameError::LengthMismatch {
                what: "plan horizon",
                expected: horizon,
                got: plan.horizon(),
            });
        }
    }
    let eps = S::lit(VOLUME_EPS);
    let n = S::from_usize_lossy(params.num_clients);
    let psi2 = params.noise_scale * params.noise_scale;
    let sigma2 = params.time_sensitivity * params.time_sensitivity;
    let mut rounds = Vec::with_capacity(horizon);
    let mut guarded = Vec::new();
    for t in 0..horizon {
        let raw_total: S = plans.iter().map(|p| p.volumes[t]).sum();
        let total = if raw_total <= eps {
            guarded.push(t);
            eps
        } else {
            raw_total
        };
        let weighted_staleness: S = if raw_total <= eps {
            S::one()
        } else {
            plans
                .iter()
                .map(|p| p.volumes[t] / total * p.staleness[t])
                .sum()
        };
        rounds.push(RoundTerms {
            volume: params.kappa2 * n * psi2 / total,
            staleness: params.kappa3 * weighted_staleness * sigma2,
            discount: params.kappa1.powi((horizon - 1 - t) as i32),
        });
    }
    Ok((rounds, guarded))
}

/// Server cost of `strategy` given every client's plan.
pub fn server_cost<S: Scalar>(
    strategy: &ServerStrategy<S>,
    plans: &[ClientPlan<S>],
    params: &ServerParams<S>,
) -> Result<CostBreakdown<S>> {
    strategy.validate()?;
    let (rounds, guarded_rounds) = round_terms(plans, params)?;
    let gamma = params.tradeoff;
    let weight = S::one() - gamma;
    let payment = gamma * strategy.payment * S::from_usize_lossy(params.horizon);
    let volume = weight * rounds.iter().map(|r| r.discount * r.volume).sum::<S>();
    let staleness = weight * rounds.iter().map(|r| r.discount * r.staleness).sum::<S>();
    Ok(CostBreakdown {
        total: payment + volume + staleness,
        payment,
        volume,
        staleness,
        rounds,
        guarded_rounds,
    })
}

/// Full convergence bound after `T` rounds, including the terms the server cannot control.
pub fn convergence_bound<S: Scalar>(
    params: &ServerParams<S>,
    conv: &ConvergenceParams<S>,
    plans: &[ClientPlan<S>],
) -> Result<S> {
    let limit = S::one() / (S::lit(2.0) * conv.smoothness);
    if !(conv.learning_rate <= limit) {
        return Err(GameError::StepTooLarge {
            learning_rate: conv.learning_rate.as_f64(),
            limit: limit.as_f64(),
        });
    }
    let horizon = params.horizon;
    if !conv.omega.is_empty() && conv.omega.len() != horizon {
        return Err(GameError::LengthMismatch {
            what: "omega",
            expected: horizon,
            got: conv.omega.len(),
        });
    }
    let contraction = params.kappa1.powi(horizon as i32) * conv.initial_gap;
    if horizon == 0 {
        return Ok(contraction);
    }
    let (rounds, _) = round_terms(plans, params)?;
    let accumulated: S = rounds
        .iter()
        .enumerate()
        .map(|(t, r)| {
            let omega = conv.omega.get(t).copied().unwrap_or_else(S::zero);
            r.discount * (r.volume + r.staleness + omega)
        })
        .sum();
    Ok(contraction + accumulated)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::planner::{ClientProfile, MeanField};
    use proptest::prelude::*;

    fn params(
        gamma: f64,
        kappa1: f64,
        psi: f64,
        sigma: f64,
        n: usize,
        t: usize,
    ) -> ServerParams<f64> {
        ServerParams {
            tradeoff: gamma,
            kappa1,
            kappa2: 1.0,
            kappa3: 0.01,
            noise_scale: psi,
            time_sensitivity: sigma,
            num_clients: n,
            horizon: t,
        }
    }

    // D ≡ [100, 100] and S ≡ [1, 1.5] via θ = 0.5, Δ = [50, 0].
    fn two_round_plans(n: usize) -> (ServerStrategy<f64>, Vec<ClientPlan<f64>>) {
        let strategy = ServerStrategy::new(10.0, 0.5).unwrap();
        let profile = ClientProfile::new(1e-3, 1e-5, 100.0).unwrap();
        let field = MeanField::constant(200.0, 2).unwrap();
        let plan = ClientPlan::from_increments(&profile, &strategy, &field, &[50.0, 0.0]).unwrap();
        assert_eq!(plan.volumes, vec![100.0, 100.0]);
        assert_eq!(plan.staleness, vec![1.0, 1.5]);
        (strategy, vec![plan; n])
    }

    #[test]
    fn hand_evaluated_cost() {
        let (strategy, plans) = two_round_plans(2);
        let cost = server_cost(&strategy, &plans, &params(0.0, 1.0, 1.0, 1.0, 2, 2)).unwrap();
        assert!((cost.total - 0.045).abs() < 1e-15);
        assert!((cost.volume - 0.02).abs() < 1e-15);
        assert!((cost.staleness - 0.025).abs() < 1e-15);
        assert!(cost.guarded_rounds.is_empty());
    }

    #[test]
    fn degenerate_weights() {
        let (strategy, plans) = two_round_plans(2);
        let pay_only = server_cost(&strategy, &plans, &params(1.0, 1.0, 1.0, 1.0, 2, 2)).unwrap();
        assert_eq!(pay_only.total, 2.0 * 10.0);
        let noiseless = server_cost(&strategy, &plans, &params(0.3, 1.0, 0.0, 0.0, 2, 2)).unwrap();
        assert!((noiseless.total - 0.3 * 2.0 * 10.0).abs() < 1e-12);
        assert_eq!(noiseless.accuracy(), 0.0);
    }

    #[test]
    fn rejects_mismatched_inputs() {
        let (strategy, plans) = two_round_plans(2);
        assert!(server_cost(&strategy, &plans, &params(0.0, 1.0, 1.0, 1.0, 3, 2)).is_err());
        assert!(server_cost(&strategy, &plans, &params(0.0, 1.0, 1.0, 1.0, 2, 3)).is_err());
        assert!(server_cost(&strategy, &plans, &params(1.5, 1.0, 1.0, 1.0, 2, 2)).is_err());
    }

    #[test]
    fn empty_round_is_floored() {
        let strategy = ServerStrategy::new(0.0, 0.0).unwrap();
        let profile = ClientProfile::new(1e-3, 1e-5, 10.0).unwrap();
        let field = MeanField::constant(10.0, 3).unwrap();
        let plan = ClientPlan::from_increments(&profile, &strategy, &field, &[0.0; 3]).unwrap();
        let cost = server_cost(&strategy, &[plan], &params(0.0, 1.0, 1.0, 1.0, 1, 3)).unwrap();
        assert_eq!(cost.guarded_rounds, vec![1, 2]);
        assert!(cost.total.is_finite());
        assert_eq!(cost.rounds[2].staleness, 0.01);
    }

    #[test]
    fn bound_examples() {
        let (_, plans) = two_round_plans(2);
        let conv = ConvergenceParams {
            lipschitz: 1.0,
            smoothness: 1.0,
            strong_convexity: 0.1,
            learning_rate: 0.5,
            initial_gap: 1.0,
            omega: vec![0.1, 0.1],
        };
        let bound = convergence_bound(&params(0.0, 0.9, 1.0, 1.0, 2, 2), &conv, &plans).unwrap();
        let want = 0.81 + 0.9 * (0.01 + 0.01 + 0.1) + (0.01 + 0.015 + 0.1);
        assert!((bound - want).abs() < 1e-14);

        let quiet = ConvergenceParams {
            omega: vec![],
            ..conv.clone()
        };
        let bound = convergence_bound(&params(0.0, 0.9, 0.0, 0.0, 2, 2), &quiet, &plans).unwrap();
        assert!((bound - 0.81).abs() < 1e-14);

        let at_zero = convergence_bound(&params(0.0, 0.9, 1.0, 1.0, 2, 0), &quiet, &[]);
        assert_eq!(at_zero, Ok(1.0));

        let too_fast = ConvergenceParams {
            learning_rate: 0.6,
            ..conv
        };
        assert!(matches!(
            convergence_bound(&params(0.0, 0.9, 1.0, 1.0, 2, 2), &too_fast, &plans),
            Err(GameError::StepTooLarge { .. })
        ));
    }

    #[test]
    fn kappa_examples() {
        let conv = |mu: f64, beta: f64, eta: f64| ConvergenceParams {
            lipschitz: 1.0,
            smoothness: beta,
            strong_convexity: mu,
            learning_rate: eta,
            initial_gap: 1.0,
            omega: vec![],
        };
        let k = kappa_from_constants(&conv(1.0, 1.0, 0.5));
        assert_eq!((k.kappa1, k.kappa2, k.kappa3), (1.0, 0.5, 0.25));
        let k = kappa_from_constants(&conv(1.0, 2.0, 0.25));
        assert!((k.kappa1 - 1.0).abs() < 1e-15);
        let k = kappa_from_constants(&conv(1.0, 1.0, 1e-9));
        assert!((k.kappa1 - 1.0).abs() < 1e-8 && k.kappa2 < 1e-17 && k.kappa3 < 1e-17);
    }

    proptest! {
        #[test]
        fn affine_in_payment(gamma in 0.0..=1.0f64, r1 in 0.0..500.0f64, r2 in 0.0..500.0f64) {
            let (_, plans) = two_round_plans(2);
            let p = params(gamma, 1.0, 1.0, 1.0, 2, 2);
            let cost = |r| server_cost(&ServerStrategy::new(r, 0.5).unwrap(), &plans, &p).unwrap().total;
            let slope = gamma * 2.0;
            prop_assert!((cost(r2) - cost(r1) - slope * (r2 - r1)).abs() < 1e-9);
        }

        #[test]
        fn staleness_term_grows_with_sigma(s1 in 0.0..3.0f64, s2 in 0.0..3.0f64) {
            let (strategy, plans) = two_round_plans(2);
            let (lo, hi) = if s1 <= s2 { (s1, s2) } else { (s2, s1) };
            let at = |s| server_cost(&strategy, &plans, &params(0.1, 1.0, 1.0, s, 2, 2)).unwrap().staleness;
            prop_assert!(at(hi) >= at(lo));
        }
    }
}
