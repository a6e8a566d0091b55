//! Dense `(R, θ)` grid of server costs, the reference the optimizer is checked against.

use rayon::prelude::*;
use serde::Serialize;
use stalefl_core::{evaluate_strategy, FixedPointConfig, Params, Profile, Strategy};

use crate::error::Result;
use crate::output::num;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub payment: f64,
    pub conservation: f64,
    pub cost: f64,
    pub converged: bool,
}

pub const GRID_COLUMNS: [&str; 4] = ["payment", "conservation", "cost", "converged"];

impl GridPoint {
    pub fn fields(&self) -> Vec<String> {
        vec![
            num(self.payment),
            num(self.conservation),
            num(self.cost),
            self.converged.to_string(),
        ]
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct GridResult {
    /// Payment-major: all `θ` for the first `R`, then the next `R`.
    pub points: Vec<GridPoint>,
    pub best: GridPoint,
}

fn axis(range: [f64; 2], resolution: usize, i: usize) -> f64 {
    range[0] + (range[1] - range[0]) * i as f64 / (resolution - 1) as f64
}

/// Evaluates the server cost on a `resolution × resolution` grid spanning both ranges.
pub fn grid_search(
    profiles: &[Profile],
    params: &Params,
    fp_cfg: &FixedPointConfig,
    payment_range: [f64; 2],
    conservation_range: [f64; 2],
    resolution: usize,
) -> Result<GridResult> {
    let points: Vec<GridPoint> = (0..resolution * resolution)
        .into_par_iter()
        .map(|idx| {
            let strategy = Strategy::new(
                axis(payment_range, resolution, idx / resolution),
                axis(conservation_range, resolution, idx % resolution),
            )?;
            let eval = evaluate_strategy(strategy, profiles, params, fp_cfg)?;
            Ok(GridPoint {
                payment: strategy.payment,
                conservation: strategy.conservation,
                cost: eval.cost.total,
                converged: eval.equilibrium.converged,
            })
        })
        .collect::<Result<_>>()?;
    let best = *points
        .iter()
        .min_by(|a, b| a.cost.total_cmp(&b.cost))
        .expect("resolution is at least 2");
    Ok(GridResult { points, best })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn covers_the_box() {
        let profiles = vec![Profile::new(5e-4, 2e-5, 50.0).unwrap(); 2];
        let params = Params {
            tradeoff: 1e-4,
            kappa1: 1.0,
            kappa2: 1.0,
            kappa3: 1e-2,
            noise_scale: 10.0,
            time_sensitivity: 0.75,
            num_clients: 2,
            horizon: 4,
        };
        let g = grid_search(
            &profiles,
            &params,
            &FixedPointConfig::default(),
            [0.0, 100.0],
            [0.0, 1.0],
            3,
        )
        .unwrap();
        let corners: Vec<(f64, f64)> = g
            .points
            .iter()
            .map(|p| (p.payment, p.conservation))
            .collect();
        assert_eq!(corners[0], (0.0, 0.0));
        assert_eq!(corners[1], (0.0, 0.5));
        assert_eq!(corners[8], (100.0, 1.0));
        assert!(g.points.iter().all(|p| p.cost >= g.best.cost));
    }
}
