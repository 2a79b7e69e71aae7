use std::collections::{BTreeMap, HashSet};

use log::warn;
use serde::{Deserialize, Serialize};

use super::formulas::{equivalent_vehicles, lane_occupancy, traffic_density};
use super::stats::{iqr_filter, mean};
use super::{Direction, FeatureError, SegmentMeta, TimeSeriesDataset, VehicleClass};
use crate::numeric::Tensor;

/// Column order of an extracted flow series.
pub const FEATURE_NAMES: [&str; 12] = [
    "second", "car", "bus", "truck", "G", "k", "q", "v_x", "v_y", "a_x", "a_y", "R_s",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FrameRecord {
    pub frame: i64,
    pub x: f64,
    pub y: f64,
    pub vx: f64,
    pub vy: f64,
    pub ax: f64,
    pub ay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VehicleTrack {
    pub id: i64,
    pub class: VehicleClass,
    pub direction: Direction,
    pub length: f64,
    pub records: Vec<FrameRecord>,
}

impl VehicleTrack {
    /// Validates that frames are strictly increasing and the length is positive.
    pub fn new(
        id: i64,
        class: VehicleClass,
        direction: Direction,
        length: f64,
        records: Vec<FrameRecord>,
    ) -> Result<Self, FeatureError> {
        if !(length > 0.0) {
            return Err(FeatureError::InvalidTrack {
                id,
                reason: format!("length {length} is not positive"),
            });
        }
        if let Some(w) = records.windows(2).find(|w| w[1].frame <= w[0].frame) {
            return Err(FeatureError::InvalidTrack {
                id,
                reason: format!(
                    "frames not strictly increasing at {} -> {}",
                    w[0].frame, w[1].frame
                ),
            });
        }
        Ok(VehicleTrack {
            id,
            class,
            direction,
            length,
            records,
        })
    }
}

fn bin_of(frame: i64, frame_rate: f64) -> i64 {
    (frame as f64 / frame_rate).floor() as i64
}

/// One vehicle's mean kinematics inside one bin.
struct Presence {
    id: i64,
    class: VehicleClass,
    length: f64,
    kin: [f64; 4],
}

/// Aggregates tracks of one direction into one-second bins.
///
/// Bins span every frame of every track (both directions), so series built
/// for the two directions of a recording share a time axis. Bins without
/// vehicles get zero counts and repeat the previous kinematics, with the
/// bin marked in `gap_flags`.
pub fn build_timeseries(
    tracks: &[VehicleTrack],
    meta: &SegmentMeta,
    direction: Direction,
) -> Result<TimeSeriesDataset, FeatureError> {
    let mut seen = HashSet::new();
    for t in tracks {
        if !seen.insert(t.id) {
            return Err(FeatureError::InvalidTrack {
                id: t.id,
                reason: "duplicate vehicle id".into(),
            });
        }
    }
    let frames = tracks
        .iter()
        .flat_map(|t| t.records.iter().map(|r| r.frame));
    let (first, last) = match (frames.clone().min(), frames.max()) {
        (Some(a), Some(b)) => (bin_of(a, meta.frame_rate), bin_of(b, meta.frame_rate)),
        _ => return Err(FeatureError::EmptyDirection(direction.label())),
    };

    let mut bins: BTreeMap<i64, Vec<Presence>> = BTreeMap::new();
    let mut any = false;
    for track in tracks.iter().filter(|t| t.direction == direction) {
        let mut per_bin: BTreeMap<i64, ([f64; 4], usize)> = BTreeMap::new();
        for r in &track.records {
            let e = per_bin
                .entry(bin_of(r.frame, meta.frame_rate))
                .or_insert(([0.0; 4], 0));
            for (acc, v) in e.0.iter_mut().zip([r.vx, r.vy, r.ax, r.ay]) {
                *acc += v;
            }
            e.1 += 1;
        }
        for (bin, (sums, n)) in per_bin {
            any = true;
            bins.entry(bin).or_default().push(Presence {
                id: track.id,
                class: track.class,
                length: track.length,
                kin: sums.map(|s| s / n as f64),
            });
        }
    }
    if !any {
        return Err(FeatureError::EmptyDirection(direction.label()));
    }

    let n_bins = (last - first + 1) as usize;
    let mut rows = Vec::with_capacity(n_bins * FEATURE_NAMES.len());
    let mut gap_flags = Vec::with_capacity(n_bins);
    let mut kinematics: Vec<Option<[f64; 4]>> = Vec::with_capacity(n_bins);
    for bin in first..=last {
        let mut present = bins.remove(&bin).unwrap_or_default();
        present.sort_by_key(|p| p.id);
        let count = |c| present.iter().filter(|p| p.class == c).count() as i64;
        let (cars, buses, trucks) = (
            count(VehicleClass::Car),
            count(VehicleClass::Bus),
            count(VehicleClass::Truck),
        );
        let g = equivalent_vehicles(cars, buses, trucks)?;
        let lengths: Vec<f64> = present.iter().map(|p| p.length).collect();
        let occupancy = match lane_occupancy(&lengths, meta) {
            Ok(r) => r,
            Err(FeatureError::OccupancyExceeded(r)) => {
                warn!(
                    "segment {} bin {bin}: occupancy {r:.4} > 1, clamped",
                    meta.segment_id
                );
                1.0
            }
            Err(e) => return Err(e),
        };
        let kin = (!present.is_empty()).then(|| {
            let mut out = [0.0; 4];
            for (j, o) in out.iter_mut().enumerate() {
                let vals: Vec<f64> = present.iter().map(|p| p.kin[j]).collect();
                *o = mean(&iqr_filter(&vals)).unwrap_or(0.0);
            }
            out
        });
        gap_flags.push(kin.is_none());
        kinematics.push(kin);
        rows.extend_from_slice(&[
            bin as f64,
            cars as f64,
            buses as f64,
            trucks as f64,
            g,
            traffic_density(g, meta),
            present.len() as f64,
            0.0,
            0.0,
            0.0,
            0.0,
            occupancy,
        ]);
    }

    // forward fill, with leading gaps taking the first observed bin
    let first_seen = kinematics
        .iter()
        .flatten()
        .next()
        .copied()
        .unwrap_or([0.0; 4]);
    let mut carry = first_seen;
    for (i, kin) in kinematics.iter().enumerate() {
        if let Some(k) = kin {
            carry = *k;
        }
        rows[i * FEATURE_NAMES.len() + 7..i * FEATURE_NAMES.len() + 11].copy_from_slice(&carry);
    }

    let values = Tensor::new(vec![n_bins, FEATURE_NAMES.len()], rows)?;
    let mut ds = TimeSeriesDataset::new(
        FEATURE_NAMES.iter().map(|s| s.to_string()).collect(),
        values,
    )?;
    ds.direction = Some(direction);
    ds.segment_id = Some(meta.segment_id.clone());
    ds.gap_flags = gap_flags;
    Ok(ds)
}
