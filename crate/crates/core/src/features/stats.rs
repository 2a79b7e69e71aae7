use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Quantile by linear interpolation between order statistics at position `(n−1)·q`.
///
/// `sorted` must be ascending and non-empty.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = (sorted.len() - 1) as f64 * q;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    let frac = pos - lo as f64;
    sorted[lo] + (sorted[hi] - sorted[lo]) * frac
}

fn sorted_copy(values: &[f64]) -> Vec<f64> {
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    s
}

/// Tukey fences `[Q1 − 1.5·IQR, Q3 + 1.5·IQR]` of a non-empty sample.
pub fn iqr_fences(values: &[f64]) -> (f64, f64) {
    let s = sorted_copy(values);
    let q1 = quantile_sorted(&s, 0.25);
    let q3 = quantile_sorted(&s, 0.75);
    let iqr = q3 - q1;
    (q1 - 1.5 * iqr, q3 + 1.5 * iqr)
}

/// Drops values outside the Tukey fences, preserving the order of the rest.
pub fn iqr_filter(values: &[f64]) -> Vec<f64> {
    if values.is_empty() {
        return Vec::new();
    }
    let (lo, hi) = iqr_fences(values);
    values
        .iter()
        .copied()
        .filter(|v| *v >= lo && *v <= hi)
        .collect()
}

pub fn mean(values: &[f64]) -> Option<f64> {
    (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
}

/// Population standard deviation.
pub fn population_std(values: &[f64]) -> Option<f64> {
    let m = mean(values)?;
    Some((values.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / values.len() as f64).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Bandwidth {
    /// `0.9 · min(σ, IQR/1.34) · n^(−1/5)`.
    Silverman,
    Fixed(f64),
}

impl Bandwidth {
    pub fn resolve(self, values: &[f64]) -> f64 {
        match self {
            Bandwidth::Fixed(h) => h,
            Bandwidth::Silverman => {
                let s = sorted_copy(values);
                let sigma = population_std(&s).unwrap_or(0.0);
                let iqr = quantile_sorted(&s, 0.75) - quantile_sorted(&s, 0.25);
                let spread = if iqr > 0.0 {
                    sigma.min(iqr / 1.34)
                } else {
                    sigma
                };
                0.9 * spread * (s.len() as f64).powf(-0.2)
            }
        }
    }
}

/// Gaussian kernel density estimate evaluated on `grid`.
pub fn kde_estimate(
    values: &[f64],
    grid: &[f64],
    bandwidth: Bandwidth,
) -> Result<Vec<f64>, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyInput("kde values"));
    }
    let h = bandwidth.resolve(values);
    if !(h > 0.0) {
        return Err(FeatureError::ZeroBandwidth);
    }
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * PI).sqrt());
    Ok(grid
        .iter()
        .map(|&x| {
            values
                .iter()
                .map(|v| {
                    let z = (x - v) / h;
                    (-0.5 * z * z).exp()
                })
                .sum::<f64>()
                * norm
        })
        .collect())
}

/// Descriptive statistics plus a density curve for one feature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Distribution {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub bandwidth: f64,
    pub grid: Vec<f64>,
    pub density: Vec<f64>,
}

/// Summarizes `values` and evaluates a Silverman-bandwidth KDE on `points`
/// evenly spaced points spanning the data range padded by three bandwidths.
pub fn describe(values: &[f64], points: usize) -> Result<Distribution, FeatureError> {
    if values.is_empty() {
        return Err(FeatureError::EmptyInput("describe values"));
    }
    let s = sorted_copy(values);
    let h = Bandwidth::Silverman.resolve(&s);
    let (lo, hi) = (s[0] - 3.0 * h, s[s.len() - 1] + 3.0 * h);
    let points = points.max(2);
    let grid: Vec<f64> = (0..points)
        .map(|i| lo + (hi - lo) * i as f64 / (points - 1) as f64)
        .collect();
    let density = kde_estimate(&s, &grid, Bandwidth::Fixed(h))?;
    Ok(Distribution {
        n: s.len(),
        mean: mean(&s).unwrap_or(0.0),
        std: population_std(&s).unwrap_or(0.0),
        min: s[0],
        q1: quantile_sorted(&s, 0.25),
        median: quantile_sorted(&s, 0.5),
        q3: quantile_sorted(&s, 0.75),
        max: s[s.len() - 1],
        bandwidth: h,
        grid,
        density,
    })
}
