//! Client populations drawn from the configured cost distributions.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stalefl_core::Profile;

use crate::config::PopulationConfig;
use crate::error::Result;

/// Draws `α_k` then `β_k` for each client from a generator seeded with `seed`.
pub fn sample_profiles(cfg: &PopulationConfig, seed: u64) -> Result<Vec<Profile>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let [a_lo, a_hi] = cfg.collect_cost;
    let [b_lo, b_hi] = cfg.train_cost;
    (0..cfg.num_clients)
        .map(|_| {
            let alpha = rng.random_range(a_lo..=a_hi);
            let beta = rng.random_range(b_lo..=b_hi);
            Ok(Profile::new(alpha, beta, cfg.initial_volume)?)
        })
        .collect()
}
