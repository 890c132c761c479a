//! Shared fixtures for the criterion benchmarks.

use cagru_core::data::SupervisedWindow;
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Deterministic pseudo-random series of a given length.
pub fn random_series(len: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
}

/// A bank of sequences drawn from a few planted shape families.
pub fn shaped_sequences(count: usize, len: usize, seed: u64) -> Vec<Vec<f64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|i| {
            let noise = 0.1;
            (0..len)
                .map(|t| {
                    let jitter = noise * (rng.random::<f64>() * 2.0 - 1.0);
                    match i % 3 {
                        0 => (t as f64 * 0.5).sin() + jitter,
                        1 => ((t / 7) % 2) as f64 + jitter,
                        _ => jitter,
                    }
                })
                .collect()
        })
        .collect()
}

/// Synthetic supervised windows for forward/backward benchmarks.
pub fn random_windows(
    count: usize,
    window_len: usize,
    feature_dim: usize,
    seed: u64,
) -> Vec<SupervisedWindow> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| SupervisedWindow {
            inputs: (0..window_len * feature_dim)
                .map(|_| rng.random::<f64>())
                .collect(),
            feature_dim,
            label: u8::from(rng.random::<f64>() < 0.3),
            customer: 0,
            end_day: 0,
        })
        .collect()
}
