use serde::{Deserialize, Serialize};

use super::FeatureError;

/// Passenger-car equivalence factor for buses.
pub const BUS_FACTOR: f64 = 2.0;
/// Passenger-car equivalence factor for trucks.
pub const TRUCK_FACTOR: f64 = 2.5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VehicleClass {
    Car,
    Bus,
    Truck,
}

impl VehicleClass {
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "car" => Some(VehicleClass::Car),
            "bus" => Some(VehicleClass::Bus),
            "truck" => Some(VehicleClass::Truck),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    PositiveX,
    NegativeX,
}

impl Direction {
    pub fn label(self) -> &'static str {
        match self {
            Direction::PositiveX => "positive",
            Direction::NegativeX => "negative",
        }
    }

    /// Accepts `positive`/`negative` (with optional `_x`) and the highD codes `2`/`1`.
    pub fn parse(s: &str) -> Option<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "positive" | "positive_x" | "2" => Some(Direction::PositiveX),
            "negative" | "negative_x" | "1" => Some(Direction::NegativeX),
            _ => None,
        }
    }
}

/// Recording-level constants of one road segment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegmentMeta {
    pub segment_id: String,
    pub frame_rate: f64,
    /// Recorded segment length `L` in meters.
    pub segment_length: f64,
    /// Lanes per travel direction `n`.
    pub lanes_per_direction: u32,
}

impl SegmentMeta {
    pub fn new(
        segment_id: impl Into<String>,
        frame_rate: f64,
        segment_length: f64,
        lanes_per_direction: u32,
    ) -> Result<Self, FeatureError> {
        if !(frame_rate > 0.0) || !(segment_length > 0.0) || lanes_per_direction == 0 {
            return Err(FeatureError::InvalidMeta(format!(
                "frame_rate={frame_rate}, segment_length={segment_length}, lanes={lanes_per_direction}"
            )));
        }
        Ok(SegmentMeta {
            segment_id: segment_id.into(),
            frame_rate,
            segment_length,
            lanes_per_direction,
        })
    }

    /// Directional lane length `n·L`.
    pub fn lane_length(&self) -> f64 {
        self.lanes_per_direction as f64 * self.segment_length
    }
}

/// Equivalent vehicle count `G = cars + 2.0·buses + 2.5·trucks`.
pub fn equivalent_vehicles(cars: i64, buses: i64, trucks: i64) -> Result<f64, FeatureError> {
    if cars < 0 || buses < 0 || trucks < 0 {
        return Err(FeatureError::NegativeCount);
    }
    Ok(cars as f64 + BUS_FACTOR * buses as f64 + TRUCK_FACTOR * trucks as f64)
}

/// Density `k = G / (n·L)` in equivalent vehicles per meter.
pub fn traffic_density(g: f64, meta: &SegmentMeta) -> f64 {
    g / meta.lane_length()
}

/// Lane space occupancy `R_s = Σ l_i / (n·L)`.
///
/// A ratio above 1 means the vehicle projections overlap, which is reported
/// as [`FeatureError::OccupancyExceeded`].
pub fn lane_occupancy(lengths: &[f64], meta: &SegmentMeta) -> Result<f64, FeatureError> {
    if let Some(&bad) = lengths.iter().find(|&&l| !(l > 0.0)) {
        return Err(FeatureError::InvalidLength(bad));
    }
    let ratio = lengths.iter().sum::<f64>() / meta.lane_length();
    if ratio > 1.0 {
        return Err(FeatureError::OccupancyExceeded(ratio));
    }
    Ok(ratio)
}
