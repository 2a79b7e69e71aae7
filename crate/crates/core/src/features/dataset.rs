use std::ops::Range;

use log::warn;
use serde::{Deserialize, Serialize};

use super::{Direction, FeatureError};
use crate::numeric::Tensor;

const CONSTANT_STD: f64 = 1e-12;

/// A multivariate series `[rows, features]` with optional provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesDataset {
    pub feature_names: Vec<String>,
    pub values: Tensor,
    pub direction: Option<Direction>,
    pub segment_id: Option<String>,
    /// Bins whose kinematics were carried over from a neighbour.
    pub gap_flags: Vec<bool>,
    /// Set when `values` are standardized.
    pub stats: Option<NormStats>,
}

/// Per-feature z-score statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl NormStats {
    /// Population mean and std over `rows` of a `[N, C]` tensor; columns
    /// with std below 1e-12 get mean 0 and std 1 so they pass through.
    pub fn fit(values: &Tensor, rows: Range<usize>) -> Result<Self, FeatureError> {
        let c = values.shape()[1];
        if rows.is_empty() || rows.end > values.shape()[0] {
            return Err(FeatureError::EmptyInput("statistics rows"));
        }
        let n = rows.len() as f64;
        let data = values.data();
        let mut mean = vec![0.0; c];
        for r in rows.clone() {
            for (m, v) in mean.iter_mut().zip(&data[r * c..(r + 1) * c]) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; c];
        for r in rows {
            for j in 0..c {
                let d = data[r * c + j] - mean[j];
                var[j] += d * d;
            }
        }
        let mut std: Vec<f64> = var.iter().map(|v| (v / n).sqrt()).collect();
        for j in 0..c {
            if std[j] < CONSTANT_STD {
                std[j] = 1.0;
                mean[j] = 0.0;
            }
        }
        Ok(NormStats { mean, std })
    }

    pub fn n_features(&self) -> usize {
        self.mean.len()
    }

    /// Standardizes a tensor whose last axis indexes features.
    pub fn apply(&self, x: &Tensor) -> Tensor {
        self.map_last_axis(x, |v, m, s| (v - m) / s)
    }

    pub fn invert(&self, x: &Tensor) -> Tensor {
        self.map_last_axis(x, |v, m, s| v * s + m)
    }

    fn map_last_axis(&self, x: &Tensor, f: impl Fn(f64, f64, f64) -> f64) -> Tensor {
        let c = self.n_features();
        let mut out = x.clone();
        for (i, v) in out.data_mut().iter_mut().enumerate() {
            let j = i % c;
            *v = f(*v, self.mean[j], self.std[j]);
        }
        out
    }
}

impl TimeSeriesDataset {
    pub fn new(feature_names: Vec<String>, values: Tensor) -> Result<Self, FeatureError> {
        match *values.shape() {
            [_, c] if c == feature_names.len() => {}
            _ => {
                return Err(FeatureError::InvalidWindow(format!(
                    "values {:?} do not match {} feature names",
                    values.shape(),
                    feature_names.len()
                )))
            }
        }
        let rows = values.shape()[0];
        Ok(TimeSeriesDataset {
            feature_names,
            values,
            direction: None,
            segment_id: None,
            gap_flags: vec![false; rows],
            stats: None,
        })
    }

    pub fn len(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn value(&self, row: usize, col: usize) -> f64 {
        self.values.data()[row * self.n_features() + col]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.len()).map(|r| self.value(r, col)).collect()
    }

    pub fn feature_index(&self, name: &str) -> Option<usize> {
        self.feature_names.iter().position(|n| n == name)
    }

    /// Rows `start..start + len` as a `[len, C]` tensor.
    pub fn rows(&self, start: usize, len: usize) -> Tensor {
        let c = self.n_features();
        Tensor::new(
            vec![len, c],
            self.values.data()[start * c..(start + len) * c].to_vec(),
        )
        .expect("row slice within bounds")
    }

    /// Keeps only the listed feature columns, in the given order.
    pub fn select_features(&self, cols: &[usize]) -> Result<Self, FeatureError> {
        let c = self.n_features();
        if cols.is_empty() || cols.iter().any(|&j| j >= c) {
            return Err(FeatureError::InvalidWindow(format!(
                "feature selection {cols:?} out of range for {c}"
            )));
        }
        let data = (0..self.len())
            .flat_map(|r| cols.iter().map(move |&j| (r, j)))
            .map(|(r, j)| self.value(r, j));
        let values = Tensor::new(vec![self.len(), cols.len()], data.collect())?;
        Ok(TimeSeriesDataset {
            feature_names: cols
                .iter()
                .map(|&j| self.feature_names[j].clone())
                .collect(),
            values,
            direction: self.direction,
            segment_id: self.segment_id.clone(),
            gap_flags: self.gap_flags.clone(),
            stats: self.stats.as_ref().map(|s| NormStats {
                mean: cols.iter().map(|&j| s.mean[j]).collect(),
                std: cols.iter().map(|&j| s.std[j]).collect(),
            }),
        })
    }

    pub fn standardize(&self, stats: &NormStats) -> Self {
        let mut out = self.clone();
        out.values = stats.apply(&self.values);
        out.stats = Some(stats.clone());
        out
    }

    pub fn destandardize(&self) -> Result<Self, FeatureError> {
        let stats = self.stats.as_ref().ok_or(FeatureError::NotStandardized)?;
        let mut out = self.clone();
        out.values = stats.invert(&self.values);
        out.stats = None;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSample {
    /// `[T, C]`
    pub input: Tensor,
    /// `[H, C]`
    pub target: Tensor,
    pub origin: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitCounts {
    pub train: usize,
    pub val: usize,
    pub test: usize,
    /// Windows removed because their span reached into the next split.
    pub dropped: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WindowSplit {
    pub lookback: usize,
    pub horizon: usize,
    pub train: Vec<WindowSample>,
    pub val: Vec<WindowSample>,
    pub test: Vec<WindowSample>,
    pub counts: SplitCounts,
}

impl WindowSplit {
    /// Rows covered by training windows, i.e. the rows statistics may be fitted on.
    pub fn train_rows(&self) -> Range<usize> {
        let end = self
            .train
            .iter()
            .map(|w| w.origin + self.lookback + self.horizon)
            .max()
            .unwrap_or(0);
        0..end
    }
}

fn check_window(
    rows: usize,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<(), FeatureError> {
    if horizon == 0 || lookback < horizon || stride == 0 {
        return Err(FeatureError::InvalidWindow(format!(
            "need T >= H >= 1 and stride >= 1, got T={lookback}, H={horizon}, stride={stride}"
        )));
    }
    if rows < lookback + horizon {
        return Err(FeatureError::TooShort {
            required: lookback + horizon,
            got: rows,
        });
    }
    Ok(())
}

/// All sliding windows with the given stride.
pub fn windows(
    ds: &TimeSeriesDataset,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<Vec<WindowSample>, FeatureError> {
    check_window(ds.len(), lookback, horizon, stride)?;
    Ok((0..=ds.len() - lookback - horizon)
        .step_by(stride)
        .map(|o| WindowSample {
            input: ds.rows(o, lookback),
            target: ds.rows(o + lookback, horizon),
            origin: o,
        })
        .collect())
}

/// Chronological 7:2:1 partition of window origins.
///
/// Origins are split by count; a window of an earlier split whose span
/// `[o, o + T + H)` reaches the first origin of the following split is
/// dropped so no row is shared across splits.
pub fn window_split(
    ds: &TimeSeriesDataset,
    lookback: usize,
    horizon: usize,
    stride: usize,
) -> Result<WindowSplit, FeatureError> {
    let all = windows(ds, lookback, horizon, stride)?;
    let n = all.len();
    let n_train = ((n as f64) * 0.7).round() as usize;
    let n_val = (((n as f64) * 0.2).round() as usize).min(n - n_train);
    let span = lookback + horizon;

    let mut iter = all.into_iter();
    let mut train: Vec<WindowSample> = iter.by_ref().take(n_train).collect();
    let mut val: Vec<WindowSample> = iter.by_ref().take(n_val).collect();
    let test: Vec<WindowSample> = iter.collect();

    let before = train.len() + val.len();
    if let Some(limit) = val.first().or(test.first()).map(|w| w.origin) {
        train.retain(|w| w.origin + span <= limit);
    }
    if let Some(limit) = test.first().map(|w| w.origin) {
        val.retain(|w| w.origin + span <= limit);
    }
    let dropped = before - train.len() - val.len();
    if train.is_empty() {
        return Err(FeatureError::TooShort {
            required: 3 * span,
            got: ds.len(),
        });
    }
    if val.is_empty() {
        warn!("validation split is empty");
    }
    let counts = SplitCounts {
        train: train.len(),
        val: val.len(),
        test: test.len(),
        dropped,
    };
    Ok(WindowSplit {
        lookback,
        horizon,
        train,
        val,
        test,
        counts,
    })
}
