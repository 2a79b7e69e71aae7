//! Trajectory-to-flow feature extraction, descriptive statistics and
//! windowed datasets.

mod dataset;
mod extract;
mod formulas;
pub mod io;
pub mod stats;

use thiserror::Error;

use crate::numeric::TensorError;

pub use dataset::{
    window_split, windows, NormStats, SplitCounts, TimeSeriesDataset, WindowSample, WindowSplit,
};
pub use extract::{build_timeseries, FrameRecord, VehicleTrack, FEATURE_NAMES};
pub use formulas::{
    equivalent_vehicles, lane_occupancy, traffic_density, Direction, SegmentMeta, VehicleClass,
    BUS_FACTOR, TRUCK_FACTOR,
};
pub use stats::{describe, iqr_filter, kde_estimate, Bandwidth, Distribution};

#[derive(Debug, Error)]
pub enum FeatureError {
    #[error("vehicle counts must be non-negative")]
    NegativeCount,
    #[error("invalid segment metadata: {0}")]
    InvalidMeta(String),
    #[error("vehicle length must be positive, got {0}")]
    InvalidLength(f64),
    #[error("lane occupancy {0} exceeds 1 (overlapping vehicle projections)")]
    OccupancyExceeded(f64),
    #[error("empty input: {0}")]
    EmptyInput(&'static str),
    #[error("kernel bandwidth must be positive")]
    ZeroBandwidth,
    #[error("no tracks in direction {0}")]
    EmptyDirection(&'static str),
    #[error("invalid track {id}: {reason}")]
    InvalidTrack { id: i64, reason: String },
    #[error("{file}: {message}")]
    Schema { file: String, message: String },
    #[error("series too short: need at least {required} rows, got {got}")]
    TooShort { required: usize, got: usize },
    #[error("invalid window configuration: {0}")]
    InvalidWindow(String),
    #[error("dataset is not standardized")]
    NotStandardized,
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
