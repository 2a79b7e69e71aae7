//! Synthetic series with known structure for sanity checks and ablations.

use std::f64::consts::PI;

use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::features::TimeSeriesDataset;
use crate::numeric::Tensor;

fn dataset(names: &[&str], rows: usize, data: Vec<f64>) -> TimeSeriesDataset {
    let values = Tensor::new(vec![rows, names.len()], data).expect("generator produces full rows");
    TimeSeriesDataset::new(names.iter().map(|s| s.to_string()).collect(), values)
        .expect("names match columns")
}

/// Two noiseless channels, each a sum of two sines with periods dividing 24.
pub fn two_sine(rows: usize) -> TimeSeriesDataset {
    let mut data = Vec::with_capacity(rows * 2);
    for t in 0..rows {
        let x = t as f64;
        data.push((2.0 * PI * x / 24.0).sin() + 0.5 * (2.0 * PI * x / 8.0).sin());
        data.push((2.0 * PI * x / 12.0).cos() + 0.4 * (2.0 * PI * x / 6.0 + 0.3).sin());
    }
    dataset(&["a", "b"], rows, data)
}

/// A smooth random driver and a follower that repeats it `lag` steps later.
///
/// Columns are `[follower, driver]`. With `lag ≥ H`, the follower's next `H`
/// values are visible in the driver's history but not in its own.
pub fn lead_lag(rows: usize, lag: usize, seed: u64) -> TimeSeriesDataset {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let n = rows + lag;
    let mut driver = Vec::with_capacity(n);
    let mut state = 0.0;
    for _ in 0..n {
        state = 0.9 * state + 0.45 * noise.sample(&mut rng);
        driver.push(state);
    }
    let mut data = Vec::with_capacity(rows * 2);
    for t in 0..rows {
        data.push(driver[t]);
        data.push(driver[t + lag]);
    }
    dataset(&["follower", "driver"], rows, data)
}

/// A single-channel sum of sinusoids at distinct integer frequencies plus Gaussian noise.
#[derive(Debug, Clone)]
pub struct PeriodicSignal {
    pub values: Vec<f64>,
    pub frequencies: Vec<usize>,
    pub amplitudes: Vec<f64>,
}

/// Draws `1..=max_components` distinct frequencies in `1..=len/2 - 1`, amplitudes in
/// `[min_amplitude, 1]` and random phases.
pub fn random_periodic_signal<R: Rng>(
    len: usize,
    max_components: usize,
    noise_std: f64,
    min_amplitude: f64,
    rng: &mut R,
) -> PeriodicSignal {
    let count = rng.random_range(1..=max_components);
    let mut frequencies: Vec<usize> = sample(rng, len / 2 - 1, count)
        .into_iter()
        .map(|f| f + 1)
        .collect();
    frequencies.sort_unstable();
    let amplitudes: Vec<f64> = frequencies
        .iter()
        .map(|_| rng.random_range(min_amplitude..=1.0))
        .collect();
    let phases: Vec<f64> = frequencies
        .iter()
        .map(|_| rng.random_range(0.0..2.0 * PI))
        .collect();
    let noise = Normal::new(0.0, noise_std.max(0.0)).expect("finite std");
    let values = (0..len)
        .map(|t| {
            let clean: f64 = frequencies
                .iter()
                .zip(&amplitudes)
                .zip(&phases)
                .map(|((&f, a), ph)| a * (2.0 * PI * f as f64 * t as f64 / len as f64 + ph).sin())
                .sum();
            clean + noise.sample(rng)
        })
        .collect();
    PeriodicSignal {
        values,
        frequencies,
        amplitudes,
    }
}
