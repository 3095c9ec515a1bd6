//! Shared fixtures for the benchmarks in `benches/`.

use leadsim_core::rng::{stream, Stream};
use rand::Rng;

/// A follow-score series with lead mask, shaped like a real trial: long
/// stretches above and below threshold with short dips.
pub fn follow_series(len: usize, seed: u64) -> (Vec<f64>, Vec<bool>) {
    let mut rng = stream(seed, Stream::Fish);
    let mut follow = Vec::with_capacity(len);
    let mut lead = Vec::with_capacity(len);
    let (mut level, mut in_lead) = (0.5, false);
    for _ in 0..len {
        if rng.random::<f64>() < 0.01 {
            level = rng.random::<f64>();
        }
        if rng.random::<f64>() < 0.002 {
            in_lead = !in_lead;
        }
        follow.push(level);
        lead.push(in_lead);
    }
    (follow, lead)
}

/// Two samples of size `n` for rank tests.
pub fn samples(n: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = stream(seed, Stream::Personality);
    let x = (0..n).map(|_| rng.random::<f64>()).collect();
    let y = (0..n).map(|_| rng.random::<f64>() + 0.2).collect();
    (x, y)
}
