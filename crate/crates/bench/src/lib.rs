//! Seeded inputs shared by the benchmarks.

use cdrscope_core::spatial::geometry::Point;
use cdrscope_core::synthgen::{generate, ScenarioConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn random_points(seed: u64, n: usize, extent_km: f64) -> Vec<Point> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| Point { x: rng.gen_range(-extent_km..extent_km), y: rng.gen_range(-extent_km..extent_km) })
        .collect()
}

/// Row-major table of `rows` random non-negative rows with 60 columns, and weights.
pub fn random_table(seed: u64, rows: usize) -> (Vec<Vec<f64>>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = (0..rows).map(|_| (0..60).map(|_| rng.gen::<f64>()).collect()).collect();
    let weights = (0..rows).map(|_| rng.gen_range(1.0..100.0)).collect();
    (table, weights)
}

/// A synthetic wide CDR file held in memory.
pub fn synthetic_cdr(n_subscribers: usize) -> Vec<u8> {
    let config = ScenarioConfig { seed: 7, n_sites: 60, n_subscribers, ..ScenarioConfig::default() };
    let mut buf = Vec::new();
    generate(&config, &mut buf).expect("default scenario is feasible");
    buf
}
