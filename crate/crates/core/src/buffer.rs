//! Buffer-volume evolution and the degree-of-staleness (DoS) metric.
//!
//! A client's buffer evolves as `D(t+1) = θ·D(t) + Δ(t)`: a fraction `θ` of
//! the buffered samples survives each round and `Δ(t)` fresh samples are
//! appended. Freshly collected data carries staleness 1 and every surviving
//! sample ages by one round, so the buffer's DoS is the volume-weighted
//! mean of `age + 1`:
//!
//! ```text
//! S(0) = 1
//! S(t) = θ·D(t-1)/D(t) · (S(t-1) + 1) + Δ(t-1)/D(t)          (recursion)
//!      = Σ_{τ=0..t} θ^(t-τ) · D(τ) / D(t)                      (closed form)
//! ```
//!
//! Rounds whose volume is at or below [`VOLUME_EPS`] hold no stale data and
//! report `S = 1`.

use serde::{Deserialize, Serialize};

use crate::error::{GameError, Result};
use crate::scalar::Scalar;

/// Division guard for empty buffers.
pub const VOLUME_EPS: f64 = 1e-9;

/// Volumes produced by rolling a buffer forward from `D(0)`.
///
/// `volumes` has one more entry than `increments`: `increments[t]` moves the
/// buffer from round `t` to round `t + 1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BufferTrajectory<S> {
    conservation_rate: S,
    increments: Vec<S>,
    volumes: Vec<S>,
}

impl<S: Scalar> BufferTrajectory<S> {
    /// Rolls `D(t+1) = θ·D(t) + Δ(t)` over every increment.
    pub fn roll(initial_volume: S, conservation_rate: S, increments: &[S]) -> Result<Self> {
        check_conservation(conservation_rate)?;
        if !(initial_volume >= S::zero()) {
            return Err(GameError::Negative {
                what: "initial volume",
                value: initial_volume.as_f64(),
            });
        }
        if let Some(bad) = increments.iter().find(|d| !(**d >= S::zero())) {
            return Err(GameError::Negative {
                what: "increment",
                value: bad.as_f64(),
            });
        }
        let mut volumes = Vec::with_capacity(increments.len() + 1);
        let mut current = initial_volume;
        volumes.push(current);
        for &delta in increments {
            current = conservation_rate * current + delta;
            volumes.push(current);
        }
        Ok(Self {
            conservation_rate,
            increments: increments.to_vec(),
            volumes,
        })
    }

    /// Number of rounds covered by `volumes`.
    pub fn horizon(&self) -> usize {
        self.volumes.len()
    }

    pub fn initial_volume(&self) -> S {
        self.volumes[0]
    }

    pub fn conservation_rate(&self) -> S {
        self.conservation_rate
    }

    pub fn increments(&self) -> &[S] {
        &self.increments
    }

    pub fn volumes(&self) -> &[S] {
        &self.volumes
    }

    pub fn into_volumes(self) -> Vec<S> {
        self.volumes
    }
}

/// Per-round staleness values, with the rounds where the empty-buffer guard fired.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StalenessTrajectory<S> {
    values: Vec<S>,
    guarded_rounds: Vec<usize>,
}

impl<S: Scalar> StalenessTrajectory<S> {
    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub fn into_values(self) -> Vec<S> {
        self.values
    }

    /// Rounds whose volume was at or below [`VOLUME_EPS`] and were assigned `S = 1`.
    pub fn guarded_rounds(&self) -> &[usize] {
        &self.guarded_rounds
    }

    /// Fails if any round needed the empty-buffer guard.
    pub fn strict(self, buffer: &BufferTrajectory<S>) -> Result<Self> {
        match self.guarded_rounds.first() {
            Some(&round) => Err(GameError::EmptyBuffer {
                round,
                volume: buffer.volumes[round].as_f64(),
            }),
            None => Ok(self),
        }
    }
}

/// Staleness via the one-step recursion.
pub fn staleness_recursive<S: Scalar>(buffer: &BufferTrajectory<S>) -> StalenessTrajectory<S> {
    let eps = S::lit(VOLUME_EPS);
    let theta = buffer.conservation_rate;
    let d = &buffer.volumes;
    let mut values = Vec::with_capacity(d.len());
    let mut guarded_rounds = Vec::new();
    for t in 0..d.len() {
        let s = if t == 0 {
            S::one()
        } else if d[t] <= eps {
            guarded_rounds.push(t);
            S::one()
        } else {
            theta * d[t - 1] / d[t] * (values[t - 1] + S::one()) + buffer.increments[t - 1] / d[t]
        };
        values.push(s);
    }
    if d.first().is_some_and(|&d0| d0 <= eps) {
        guarded_rounds.insert(0, 0);
    }
    StalenessTrajectory {
        values,
        guarded_rounds,
    }
}

/// Staleness via the explicit weighted sum over all past volumes.
pub fn staleness_closed_form<S: Scalar>(buffer: &BufferTrajectory<S>) -> StalenessTrajectory<S> {
    let eps = S::lit(VOLUME_EPS);
    let theta = buffer.conservation_rate;
    let d = &buffer.volumes;
    let mut values = Vec::with_capacity(d.len());
    let mut guarded_rounds = Vec::new();
    for t in 0..d.len() {
        if d[t] <= eps {
            guarded_rounds.push(t);
            values.push(S::one());
            continue;
        }
        // θ^0 = 1 even for θ = 0, so the τ = t term always contributes 1.
        let weighted: S = (0..=t)
            .map(|tau| theta.powi((t - tau) as i32) * d[tau])
            .sum();
        values.push(weighted / d[t]);
    }
    StalenessTrajectory {
        values,
        guarded_rounds,
    }
}

pub(crate) fn check_conservation<S: Scalar>(theta: S) -> Result<()> {
    if theta >= S::zero() && theta <= S::one() {
        Ok(())
    } else {
        Err(GameError::ConservationOutOfRange(theta.as_f64()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn roll(d0: f64, theta: f64, deltas: &[f64]) -> BufferTrajectory<f64> {
        BufferTrajectory::roll(d0, theta, deltas).unwrap()
    }

    #[test]
    fn roll_examples() {
        assert_eq!(roll(100.0, 0.5, &[50.0]).volumes(), &[100.0, 100.0]);
        assert_eq!(
            roll(1000.0, 1.0, &[0.0, 0.0, 0.0]).volumes(),
            &[1000.0, 1000.0, 1000.0, 1000.0]
        );
        let v = roll(100.0, 0.3, &[10.0, 20.0]);
        assert!((v.volumes()[1] - 40.0).abs() < 1e-12);
        assert!((v.volumes()[2] - 32.0).abs() < 1e-12);
    }

    #[test]
    fn roll_rejects_bad_inputs() {
        assert_eq!(
            BufferTrajectory::roll(1.0, 1.5, &[]).unwrap_err(),
            GameError::ConservationOutOfRange(1.5)
        );
        assert!(BufferTrajectory::roll(-1.0, 0.5, &[]).is_err());
        assert!(BufferTrajectory::roll(1.0, 0.5, &[1.0, -0.1]).is_err());
        assert!(BufferTrajectory::roll(1.0, f64::NAN, &[]).is_err());
    }

    #[test]
    fn staleness_examples() {
        let b = roll(100.0, 0.5, &[50.0]);
        assert_eq!(staleness_recursive(&b).values(), &[1.0, 1.5]);
        assert!((staleness_closed_form(&b).values()[1] - 1.5).abs() < 1e-15);

        let fresh = roll(100.0, 0.0, &[10.0, 20.0, 5.0]);
        assert!(staleness_recursive(&fresh)
            .values()
            .iter()
            .all(|&s| s == 1.0));
        assert!(staleness_closed_form(&fresh)
            .values()
            .iter()
            .all(|&s| s == 1.0));

        let frozen = roll(7.0, 1.0, &[0.0; 5]);
        for (t, &s) in staleness_recursive(&frozen).values().iter().enumerate() {
            assert!((s - (t + 1) as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn empty_buffer_guard() {
        // θ = 0 with no collection empties the buffer after round 0.
        let b = roll(10.0, 0.0, &[0.0, 0.0]);
        let s = staleness_recursive(&b);
        assert_eq!(s.values(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.guarded_rounds(), &[1, 2]);
        assert_eq!(staleness_closed_form(&b).guarded_rounds(), &[1, 2]);
        assert!(matches!(
            s.strict(&b),
            Err(GameError::EmptyBuffer { round: 1, .. })
        ));
    }

    #[test]
    fn unrolled_volume_formula() {
        let deltas = [3.0, 0.0, 11.0, 2.5, 7.0];
        let (d0, theta) = (40.0, 0.7);
        let b = roll(d0, theta, &deltas);
        for t in 0..deltas.len() {
            let unrolled = theta.powi(t as i32 + 1) * d0
                + (0..=t)
                    .map(|tau| theta.powi((t - tau) as i32) * deltas[tau])
                    .sum::<f64>();
            assert!((b.volumes()[t + 1] - unrolled).abs() < 1e-12);
        }
    }

    #[test]
    fn works_in_single_precision() {
        let b = BufferTrajectory::<f32>::roll(100.0, 0.5, &[50.0]).unwrap();
        assert_eq!(staleness_recursive(&b).values(), &[1.0f32, 1.5]);
    }

    fn instance() -> impl Strategy<Value = (f64, f64, Vec<f64>)> {
        (
            0.0..=1.0f64,
            1.0..1000.0f64,
            prop::collection::vec(0.0..100.0f64, 0..50),
        )
            .prop_map(|(theta, d0, deltas)| (theta, d0, deltas))
    }

    proptest! {
        #[test]
        fn recursion_matches_closed_form((theta, d0, deltas) in instance()) {
            let b = roll(d0, theta, &deltas);
            prop_assume!(b.volumes().iter().all(|&v| v >= 1.0));
            let rec = staleness_recursive(&b);
            let closed = staleness_closed_form(&b);
            for (r, c) in rec.values().iter().zip(closed.values()) {
                prop_assert!((r - c).abs() <= 1e-10, "{} vs {}", r, c);
            }
        }

        #[test]
        fn staleness_floor((theta, d0, deltas) in instance()) {
            let b = roll(d0, theta, &deltas);
            for (&s, &v) in staleness_recursive(&b).values().iter().zip(b.volumes()) {
                if v > VOLUME_EPS {
                    prop_assert!(s >= 1.0 - 1e-12);
                }
            }
        }

        #[test]
        fn staleness_nondecreasing_in_theta(
            d0 in 1.0..1000.0f64,
            deltas in prop::collection::vec(0.0..100.0f64, 1..30),
        ) {
            let grid: Vec<f64> = (0..=10).map(|i| i as f64 / 10.0).collect();
            let curves: Vec<Vec<f64>> = grid
                .iter()
                .map(|&th| staleness_closed_form(&roll(d0, th, &deltas)).into_values())
                .collect();
            for pair in curves.windows(2) {
                for (lo, hi) in pair[0].iter().zip(&pair[1]) {
                    prop_assert!(*hi >= *lo - 1e-9);
                }
            }
        }
    }
}
