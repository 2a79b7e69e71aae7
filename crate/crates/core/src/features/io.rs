//! CSV triples in, flow CSV plus JSON sidecar out.
//!
//! Input schema (comma separated, header row required):
//!
//! * `<id>_recordingMeta.csv`: `frameRate`, `segmentLength` and
//!   `lanesPerDirection`; when the lane count is absent it is derived from
//!   `upperLaneMarkings` (`;`-separated marking positions, lanes = markings − 1).
//! * `<id>_tracksMeta.csv`: `id`, `class` (car/bus/truck), `drivingDirection`
//!   (1 = negative x, 2 = positive x) and `length`, falling back to `width`
//!   (the along-road extent in highD-style files).
//! * `<id>_tracks.csv`: `frame`, `id`, `x`, `y`, `xVelocity`, `yVelocity`,
//!   `xAcceleration`, `yAcceleration`. Extra columns are ignored.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use csv::StringRecord;
use serde::{Deserialize, Serialize};

use super::{
    build_timeseries, Direction, FeatureError, FrameRecord, NormStats, SegmentMeta,
    TimeSeriesDataset, VehicleClass, VehicleTrack,
};
use crate::numeric::Tensor;

/// Writes `bytes` to a temporary file next to `path` and renames it into place.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> std::io::Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

struct Table {
    file: String,
    headers: StringRecord,
    rows: Vec<StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self, FeatureError> {
        let file = path.display().to_string();
        let mut reader = csv::ReaderBuilder::new()
            .trim(csv::Trim::All)
            .from_path(path)
            .map_err(|e| match e.into_kind() {
                csv::ErrorKind::Io(io) => FeatureError::Io(io),
                kind => FeatureError::Schema {
                    file: file.clone(),
                    message: format!("{kind:?}"),
                },
            })?;
        let headers = reader.headers()?.clone();
        let rows = reader.records().collect::<Result<Vec<_>, _>>()?;
        Ok(Table {
            file,
            headers,
            rows,
        })
    }

    fn schema(&self, message: impl Into<String>) -> FeatureError {
        FeatureError::Schema {
            file: self.file.clone(),
            message: message.into(),
        }
    }

    fn col(&self, name: &str) -> Result<usize, FeatureError> {
        self.opt_col(name)
            .ok_or_else(|| self.schema(format!("missing column `{name}`")))
    }

    fn opt_col(&self, name: &str) -> Option<usize> {
        self.headers.iter().position(|h| h == name)
    }

    fn num(&self, row: usize, col: usize) -> Result<f64, FeatureError> {
        let raw = &self.rows[row][col];
        raw.parse::<f64>().map_err(|_| {
            self.schema(format!(
                "row {}: column `{}` is not numeric: `{raw}`",
                row + 2,
                &self.headers[col]
            ))
        })
    }

    fn int(&self, row: usize, col: usize) -> Result<i64, FeatureError> {
        let v = self.num(row, col)?;
        if v.fract() != 0.0 {
            return Err(self.schema(format!(
                "row {}: column `{}` is not an integer",
                row + 2,
                &self.headers[col]
            )));
        }
        Ok(v as i64)
    }
}

/// Values that replace or supply recording metadata.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetaOverrides {
    pub segment_length: Option<f64>,
    pub lanes_per_direction: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Recording {
    pub meta: SegmentMeta,
    pub tracks: Vec<VehicleTrack>,
}

pub fn recording_paths(dir: &Path, id: &str) -> [PathBuf; 3] {
    [
        dir.join(format!("{id}_recordingMeta.csv")),
        dir.join(format!("{id}_tracksMeta.csv")),
        dir.join(format!("{id}_tracks.csv")),
    ]
}

fn read_meta(
    path: &Path,
    id: &str,
    overrides: &MetaOverrides,
) -> Result<SegmentMeta, FeatureError> {
    let t = Table::read(path)?;
    if t.rows.is_empty() {
        return Err(t.schema("no data row"));
    }
    let frame_rate = t.num(0, t.col("frameRate")?)?;
    let segment_length = match overrides.segment_length {
        Some(l) => l,
        None => t.num(0, t.col("segmentLength")?)?,
    };
    let lanes = match (
        overrides.lanes_per_direction,
        t.opt_col("lanesPerDirection"),
        t.opt_col("upperLaneMarkings"),
    ) {
        (Some(n), _, _) => n,
        (None, Some(c), _) => t.int(0, c)? as u32,
        (None, None, Some(c)) => {
            let markings = t.rows[0][c]
                .split(';')
                .filter(|s| !s.trim().is_empty())
                .count();
            markings.saturating_sub(1) as u32
        }
        _ => return Err(t.schema("missing column `lanesPerDirection`")),
    };
    SegmentMeta::new(id, frame_rate, segment_length, lanes)
}

/// Reads one recording's CSV triple from `dir`.
pub fn read_recording(
    dir: &Path,
    id: &str,
    overrides: &MetaOverrides,
) -> Result<Recording, FeatureError> {
    let [meta_path, tracks_meta_path, tracks_path] = recording_paths(dir, id);
    read_recording_files(&meta_path, &tracks_meta_path, &tracks_path, id, overrides)
}

/// Reads a recording from explicitly named metadata, tracks-metadata and tracks files.
pub fn read_recording_files(
    meta_path: &Path,
    tracks_meta_path: &Path,
    tracks_path: &Path,
    id: &str,
    overrides: &MetaOverrides,
) -> Result<Recording, FeatureError> {
    let meta = read_meta(meta_path, id, overrides)?;

    let tm = Table::read(tracks_meta_path)?;
    let (c_id, c_class, c_dir) = (tm.col("id")?, tm.col("class")?, tm.col("drivingDirection")?);
    let c_len = match tm.opt_col("length") {
        Some(c) => c,
        None => tm.col("width")?,
    };
    let mut vehicles = BTreeMap::new();
    for r in 0..tm.rows.len() {
        let vid = tm.int(r, c_id)?;
        let class = VehicleClass::parse(&tm.rows[r][c_class]).ok_or_else(|| {
            tm.schema(format!(
                "row {}: unknown class `{}`",
                r + 2,
                &tm.rows[r][c_class]
            ))
        })?;
        let direction = Direction::parse(&tm.rows[r][c_dir]).ok_or_else(|| {
            tm.schema(format!(
                "row {}: unknown direction `{}`",
                r + 2,
                &tm.rows[r][c_dir]
            ))
        })?;
        if vehicles
            .insert(vid, (class, direction, tm.num(r, c_len)?, Vec::new()))
            .is_some()
        {
            return Err(tm.schema(format!("duplicate vehicle id {vid}")));
        }
    }

    let tr = Table::read(tracks_path)?;
    let cols = [
        "frame",
        "id",
        "x",
        "y",
        "xVelocity",
        "yVelocity",
        "xAcceleration",
        "yAcceleration",
    ]
    .map(|name| tr.col(name));
    let [c_frame, c_vid, c_x, c_y, c_vx, c_vy, c_ax, c_ay] = match cols {
        [Ok(a), Ok(b), Ok(c), Ok(d), Ok(e), Ok(f), Ok(g), Ok(h)] => [a, b, c, d, e, f, g, h],
        other => {
            return Err(other
                .into_iter()
                .find_map(Result::err)
                .expect("one column missing"))
        }
    };
    for r in 0..tr.rows.len() {
        let vid = tr.int(r, c_vid)?;
        let entry = vehicles.get_mut(&vid).ok_or_else(|| {
            tr.schema(format!(
                "row {}: vehicle {vid} missing from tracks metadata",
                r + 2
            ))
        })?;
        entry.3.push(FrameRecord {
            frame: tr.int(r, c_frame)?,
            x: tr.num(r, c_x)?,
            y: tr.num(r, c_y)?,
            vx: tr.num(r, c_vx)?,
            vy: tr.num(r, c_vy)?,
            ax: tr.num(r, c_ax)?,
            ay: tr.num(r, c_ay)?,
        });
    }

    let mut tracks = Vec::with_capacity(vehicles.len());
    for (vid, (class, direction, length, mut records)) in vehicles {
        if records.is_empty() {
            continue;
        }
        records.sort_by_key(|r| r.frame);
        tracks.push(VehicleTrack::new(vid, class, direction, length, records)?);
    }
    Ok(Recording { meta, tracks })
}

/// Serializes a dataset as CSV with one header row of feature names.
pub fn flow_csv_string(ds: &TimeSeriesDataset) -> Result<String, FeatureError> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&ds.feature_names)?;
    for r in 0..ds.len() {
        w.write_record((0..ds.n_features()).map(|c| ds.value(r, c).to_string()))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| FeatureError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn write_flow_csv(path: &Path, ds: &TimeSeriesDataset) -> Result<(), FeatureError> {
    atomic_write(path, flow_csv_string(ds)?.as_bytes())?;
    Ok(())
}

/// Reads any all-numeric CSV with a header row as a dataset.
pub fn read_flow_csv(path: &Path) -> Result<TimeSeriesDataset, FeatureError> {
    let t = Table::read(path)?;
    let names: Vec<String> = t.headers.iter().map(str::to_string).collect();
    if names.is_empty() {
        return Err(t.schema("no columns"));
    }
    let mut data = Vec::with_capacity(t.rows.len() * names.len());
    for r in 0..t.rows.len() {
        if t.rows[r].len() != names.len() {
            return Err(t.schema(format!(
                "row {} has {} fields, expected {}",
                r + 2,
                t.rows[r].len(),
                names.len()
            )));
        }
        for c in 0..names.len() {
            data.push(t.num(r, c)?);
        }
    }
    let values =
        Tensor::new(vec![t.rows.len(), names.len()], data).map_err(|_| t.schema("no data rows"))?;
    TimeSeriesDataset::new(names, values)
}

/// Metadata written next to each flow CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowSidecar {
    pub segment: SegmentMeta,
    pub direction: Direction,
    pub feature_names: Vec<String>,
    pub rows: usize,
    /// Bins whose kinematics were filled from a neighbouring bin.
    pub gap_bins: Vec<usize>,
    /// Fraction of leading rows the normalization statistics were fitted on.
    pub train_fraction: f64,
    pub normalization: NormStats,
}

pub const TRAIN_FRACTION: f64 = 0.7;

pub fn flow_csv_path(out_dir: &Path, id: &str, direction: Direction) -> PathBuf {
    out_dir.join(format!("{id}_flow_{}.csv", direction.label()))
}

/// Writes one direction's flow CSV and its `.json` sidecar.
pub fn extract_direction(
    rec: &Recording,
    direction: Direction,
    csv_path: &Path,
) -> Result<FlowSidecar, FeatureError> {
    let ds = build_timeseries(&rec.tracks, &rec.meta, direction)?;
    let train_rows = ((ds.len() as f64 * TRAIN_FRACTION).round() as usize).clamp(1, ds.len());
    let sidecar = FlowSidecar {
        segment: rec.meta.clone(),
        direction,
        feature_names: ds.feature_names.clone(),
        rows: ds.len(),
        gap_bins: ds
            .gap_flags
            .iter()
            .enumerate()
            .filter(|(_, g)| **g)
            .map(|(i, _)| i)
            .collect(),
        train_fraction: TRAIN_FRACTION,
        normalization: NormStats::fit(&ds.values, 0..train_rows)?,
    };
    write_flow_csv(csv_path, &ds)?;
    atomic_write(
        &csv_path.with_extension("json"),
        serde_json::to_string_pretty(&sidecar)?.as_bytes(),
    )?;
    Ok(sidecar)
}

/// Extracts both directions of a recording into `out_dir`.
///
/// A direction without tracks is skipped. Returns the written CSV paths.
pub fn extract_recording(
    dir: &Path,
    id: &str,
    overrides: &MetaOverrides,
    out_dir: &Path,
) -> Result<Vec<PathBuf>, FeatureError> {
    let rec = read_recording(dir, id, overrides)?;
    let mut written = Vec::new();
    for direction in [Direction::PositiveX, Direction::NegativeX] {
        let csv_path = flow_csv_path(out_dir, id, direction);
        match extract_direction(&rec, direction, &csv_path) {
            Ok(_) => written.push(csv_path),
            Err(FeatureError::EmptyDirection(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if written.is_empty() {
        return Err(FeatureError::EmptyDirection("any"));
    }
    Ok(written)
}
