//! FFT-based period recognition: channel-averaged amplitude spectrum, top-k
//! frequency selection and per-sample period weights.

use log::warn;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{rfft_magnitudes, Tensor, TensorError};

/// Default number of periods.
pub const DEFAULT_TOP_K: usize = 6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SpectralError {
    #[error("series too short for period detection: need T >= {needed}, got {got}")]
    TooShort { needed: usize, got: usize },
    #[error("expected a [B, T, d] tensor, got {0:?}")]
    Shape(Vec<usize>),
    #[error("k must be in 1..={max}, got {k}")]
    InvalidK { k: usize, max: usize },
    #[error(transparent)]
    Tensor(#[from] TensorError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PeriodEntry {
    #[serde(rename = "f")]
    pub frequency: usize,
    #[serde(rename = "p")]
    pub period: usize,
    pub weight: f64,
}

/// The selected frequencies, sorted by descending weight.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PeriodSet {
    #[serde(rename = "T")]
    pub length: usize,
    pub k: usize,
    pub entries: Vec<PeriodEntry>,
}

impl PeriodSet {
    pub fn frequencies(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.frequency).collect()
    }

    pub fn periods(&self) -> Vec<usize> {
        self.entries.iter().map(|e| e.period).collect()
    }
}

fn dims(x: &Tensor) -> Result<(usize, usize, usize), SpectralError> {
    match *x.shape() {
        [b, t, d] => Ok((b, t, d)),
        _ => Err(SpectralError::Shape(x.shape().to_vec())),
    }
}

/// Magnitude spectrum of every (sample, channel) series: `[B][d][T/2+1]`.
fn channel_spectra(x: &Tensor) -> Result<Vec<Vec<Vec<f64>>>, SpectralError> {
    let (b, t, d) = dims(x)?;
    if t < 4 {
        return Err(SpectralError::TooShort { needed: 4, got: t });
    }
    let data = x.data();
    let mut out = Vec::with_capacity(b);
    let mut series = vec![0.0; t];
    for bi in 0..b {
        let mut per_channel = Vec::with_capacity(d);
        for j in 0..d {
            for (ti, s) in series.iter_mut().enumerate() {
                *s = data[(bi * t + ti) * d + j];
            }
            per_channel.push(rfft_magnitudes(&series)?);
        }
        out.push(per_channel);
    }
    Ok(out)
}

/// Amplitude `A(f)` averaged over batch and channels, with `A(0) = 0`.
pub fn amplitude_spectrum(x: &Tensor) -> Result<Vec<f64>, SpectralError> {
    let (b, t, d) = dims(x)?;
    let spectra = channel_spectra(x)?;
    let mut amp = vec![0.0; t / 2 + 1];
    for sample in &spectra {
        for chan in sample {
            for (a, m) in amp.iter_mut().zip(chan) {
                *a += m;
            }
        }
    }
    let n = (b * d) as f64;
    amp.iter_mut().for_each(|a| *a /= n);
    amp[0] = 0.0;
    Ok(amp)
}

/// Selects the `k` largest non-zero amplitudes over `f ≥ 1`, ties toward lower `f`.
///
/// Returns fewer than `k` entries (with a warning) when the spectrum has
/// fewer non-zero bins.
pub fn topk_periods(amp: &[f64], k: usize, length: usize) -> Result<PeriodSet, SpectralError> {
    let max = length / 2;
    if k == 0 || k > max {
        return Err(SpectralError::InvalidK { k, max });
    }
    let mut candidates: Vec<usize> = (1..amp.len().min(max + 1))
        .filter(|&f| amp[f] > 0.0 && length / f >= 2)
        .collect();
    candidates.sort_by(|&a, &b| amp[b].total_cmp(&amp[a]).then(a.cmp(&b)));
    if candidates.len() < k {
        warn!(
            "only {} non-zero frequency bins, reducing k from {k}",
            candidates.len()
        );
    }
    let entries = candidates
        .into_iter()
        .take(k)
        .map(|f| PeriodEntry {
            frequency: f,
            period: length / f,
            weight: amp[f],
        })
        .collect();
    Ok(PeriodSet { length, k, entries })
}

/// Per-sample channel-mean amplitude at the given frequencies: `[B, k]`.
pub fn per_sample_weights(x: &Tensor, freqs: &[usize]) -> Result<Tensor, SpectralError> {
    let (b, _, d) = dims(x)?;
    let spectra = channel_spectra(x)?;
    let mut out = Vec::with_capacity(b * freqs.len());
    for sample in &spectra {
        for &f in freqs {
            out.push(sample.iter().map(|chan| chan[f]).sum::<f64>() / d as f64);
        }
    }
    Ok(Tensor::new(vec![b, freqs.len()], out)?)
}

/// Spectrum plus top-k selection in one call.
pub fn detect_periods(x: &Tensor, k: usize) -> Result<PeriodSet, SpectralError> {
    let (_, t, _) = dims(x)?;
    let amp = amplitude_spectrum(x)?;
    topk_periods(&amp, k, t)
}
