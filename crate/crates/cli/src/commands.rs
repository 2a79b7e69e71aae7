use std::path::{Path, PathBuf};

use log::info;
use serde_json::json;

use pptflow::features::io::{
    atomic_write, extract_direction, read_flow_csv, read_recording_files, MetaOverrides,
};
use pptflow::features::{window_split, Direction, NormStats, TimeSeriesDataset, WindowSample};
use pptflow::fuzzy::{congestion_series, CongestionSystem};
use pptflow::model::{CheckpointMeta, PPTNet};
use pptflow::numeric::Tensor;
use pptflow::spectral::detect_periods;
use pptflow::training::{compute_metrics, evaluate, train, MetricReport, TrainError};

use crate::config::RunConfig;
use crate::error::{CliError, ARTIFACT, NUMERIC};
use crate::svg::{self, Panel, Series};
use crate::table::{write_csv, Table};

/// Environment variable that overrides the configured seed.
pub const SEED_ENV: &str = "PPTFLOW_SEED";
/// Features reported as evaluation targets next to a forecast.
pub const EVALUATION_TARGETS: [&str; 2] = ["k", "v_x"];
const CHECKPOINT_FILE: &str = "model.ckpt";
const LOG_FILE: &str = "train_log.jsonl";

fn write_json(path: &Path, value: &serde_json::Value) -> Result<(), CliError> {
    atomic_write(
        path,
        format!("{}\n", serde_json::to_string_pretty(value)?).as_bytes(),
    )?;
    Ok(())
}

fn emit_json(out: Option<&Path>, value: &serde_json::Value) -> Result<String, CliError> {
    match out {
        Some(p) => {
            write_json(p, value)?;
            Ok(format!("wrote {}", p.display()))
        }
        None => Ok(serde_json::to_string_pretty(value)?),
    }
}

fn recording_id(meta: &Path) -> String {
    let stem = meta
        .file_stem()
        .and_then(|s| s.to_str())
        .unwrap_or("recording");
    stem.strip_suffix("_recordingMeta")
        .unwrap_or(stem)
        .to_string()
}

pub struct ExtractArgs {
    pub meta: PathBuf,
    pub tracks: PathBuf,
    pub tracks_meta: PathBuf,
    pub direction: Direction,
    pub out: PathBuf,
    pub id: Option<String>,
    pub overrides: MetaOverrides,
}

pub fn extract(a: &ExtractArgs) -> Result<String, CliError> {
    let id = a.id.clone().unwrap_or_else(|| recording_id(&a.meta));
    let rec = read_recording_files(&a.meta, &a.tracks_meta, &a.tracks, &id, &a.overrides)?;
    let side = extract_direction(&rec, a.direction, &a.out)?;
    Ok(format!(
        "wrote {} ({} rows, {} gap bins) and {}",
        a.out.display(),
        side.rows,
        side.gap_bins.len(),
        a.out.with_extension("json").display()
    ))
}

fn select_columns(
    ds: &TimeSeriesDataset,
    columns: Option<&[String]>,
) -> Result<TimeSeriesDataset, CliError> {
    let idx: Vec<usize> = match columns {
        Some(names) => names
            .iter()
            .map(|n| {
                ds.feature_index(n)
                    .ok_or_else(|| CliError::schema(format!("missing column `{n}`")))
            })
            .collect::<Result<_, _>>()?,
        None => (0..ds.n_features())
            .filter(|&c| ds.feature_names[c] != "second")
            .collect(),
    };
    if idx.is_empty() {
        return Err(CliError::domain("no columns selected"));
    }
    Ok(ds.select_features(&idx)?)
}

pub fn detect(
    data: &Path,
    k: usize,
    columns: Option<&[String]>,
    window: Option<usize>,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let ds = select_columns(&read_flow_csv(data)?, columns)?;
    let len = window.unwrap_or(ds.len()).min(ds.len());
    let start = ds.len() - len;
    let stats = NormStats::fit(&ds.values, start..ds.len())?;
    let x = Tensor::stack(&[stats.apply(&ds.rows(start, len))])
        .map_err(|e| CliError::domain(e.to_string()))?;
    let set = detect_periods(&x, k)?;
    emit_json(out, &serde_json::to_value(&set)?)
}

pub struct TrainArgs {
    pub data: PathBuf,
    pub config: Option<PathBuf>,
    pub out: PathBuf,
    pub horizon: Option<usize>,
    pub lookback: Option<usize>,
    pub epochs: Option<usize>,
    pub seed: Option<u64>,
}

/// Loads the config file and applies the seed variable and flag overrides, in that order.
pub fn resolve_config(a: &TrainArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(a.config.as_deref())?;
    if let Ok(seed) = std::env::var(SEED_ENV) {
        cfg.set("seed", seed.trim()).map_err(|_| {
            CliError::schema(format!("{SEED_ENV} must be an integer, got `{seed}`"))
        })?;
    }
    if let Some(h) = a.horizon {
        cfg.model.horizon = h;
    }
    if let Some(t) = a.lookback {
        cfg.model.lookback = t;
    }
    if let Some(e) = a.epochs {
        cfg.train.epochs = e;
    }
    if let Some(s) = a.seed {
        cfg.train.seed = s;
    }
    Ok(cfg)
}

pub fn train_cmd(a: &TrainArgs) -> Result<String, CliError> {
    let mut cfg = resolve_config(a)?;
    let ds = read_flow_csv(&a.data)?;
    let (t, h) = (cfg.model.lookback, cfg.model.horizon);
    let raw = window_split(&ds, t, h, cfg.stride)?;
    let stats = NormStats::fit(&ds.values, raw.train_rows())?;
    let split = window_split(&ds.standardize(&stats), t, h, cfg.stride)?;
    cfg.model.n_features = ds.n_features();
    cfg.train.target_mask = cfg.target_mask(&ds.feature_names)?;
    info!(
        "{} train / {} val / {} test windows",
        split.train.len(),
        split.val.len(),
        split.test.len()
    );

    let mut net = PPTNet::new(cfg.model.clone(), cfg.train.seed)?;
    let mut log = Vec::new();
    let result = train(&mut net, &split, &cfg.train, Some(&mut log));

    std::fs::create_dir_all(&a.out)?;
    let ckpt = a.out.join(CHECKPOINT_FILE);
    let mut extra = json!({
        "lookback": t,
        "horizon": h,
        "stride": cfg.stride,
        "batch_size": cfg.train.batch_size,
        "seed": cfg.train.seed,
    });
    if let Ok(outcome) = &result {
        extra["best_epoch"] = json!(outcome.best_epoch);
        extra["stop"] = json!(format!("{:?}", outcome.stop));
        extra["validation"] = serde_json::to_value(&outcome.best_val)?;
    }
    let meta = CheckpointMeta {
        feature_names: ds.feature_names.clone(),
        normalization: Some(stats),
        target_mask: cfg.train.target_mask.clone().unwrap_or_default(),
        extra,
    };
    atomic_write(&a.out.join(LOG_FILE), &log)?;
    match result {
        Ok(outcome) => {
            net.save(&ckpt, &meta)?;
            Ok(format!(
                "best epoch {} val MSE {:.6} MAE {:.6} ({:?}); checkpoint {}",
                outcome.best_epoch,
                outcome.best_val.mse,
                outcome.best_val.mae,
                outcome.stop,
                ckpt.display()
            ))
        }
        Err(e @ (TrainError::Diverged { .. } | TrainError::NonFiniteGradient(_))) => {
            net.save(&ckpt, &meta)?;
            Err(CliError::new(
                NUMERIC,
                format!("{e}; last good checkpoint: {}", ckpt.display()),
            ))
        }
        Err(e) => Err(e.into()),
    }
}

fn load_matching(
    checkpoint: &Path,
    data: &Path,
) -> Result<(PPTNet, CheckpointMeta, NormStats, TimeSeriesDataset), CliError> {
    let (net, meta) = PPTNet::load(checkpoint)?;
    let ds = read_flow_csv(data)?;
    if ds.feature_names != meta.feature_names {
        return Err(CliError::new(
            ARTIFACT,
            format!(
                "data columns {:?} do not match checkpoint features {:?}",
                ds.feature_names, meta.feature_names
            ),
        ));
    }
    let stats = meta
        .normalization
        .clone()
        .ok_or_else(|| CliError::new(ARTIFACT, "checkpoint carries no normalization statistics"))?;
    Ok((net, meta, stats, ds))
}

/// Forecasts the window ending at `origin`, batched with up to `batch_size - 1` preceding windows
/// so period selection sees the same batch statistics as training.
pub fn predict(
    checkpoint: &Path,
    data: &Path,
    out: &Path,
    origin: Option<usize>,
) -> Result<String, CliError> {
    let (net, meta, stats, ds) = load_matching(checkpoint, data)?;
    let (t, h) = (net.config.lookback, net.config.horizon);
    let origin = origin.unwrap_or(ds.len());
    if origin < t || origin > ds.len() {
        return Err(CliError::domain(format!(
            "forecast origin {origin} needs {t} rows of history within {} rows",
            ds.len()
        )));
    }
    let batch = meta
        .extra
        .get("batch_size")
        .and_then(|v| v.as_u64())
        .map_or(32, |v| v as usize)
        .max(1);
    let context: Vec<Tensor> = (0..batch.min(origin - t + 1))
        .map(|i| stats.apply(&ds.rows(origin - t - i, t)))
        .collect();
    let x = Tensor::stack(&context).map_err(|e| CliError::domain(e.to_string()))?;
    let y = stats.invert(&net.predict(&x)?.index_axis0(0));
    let c = ds.n_features();
    let headers: Vec<String> = std::iter::once("step".to_string())
        .chain(ds.feature_names.iter().cloned())
        .collect();
    let rows: Vec<Vec<String>> = (0..h)
        .map(|i| {
            std::iter::once((i + 1).to_string())
                .chain((0..c).map(|j| y.data()[i * c + j].to_string()))
                .collect()
        })
        .collect();
    write_csv(out, &headers, &rows)?;
    let targets: Vec<&str> = EVALUATION_TARGETS
        .iter()
        .copied()
        .filter(|n| ds.feature_index(n).is_some())
        .collect();
    write_json(
        &out.with_extension("json"),
        &json!({"origin": origin, "lookback": t, "horizon": h, "feature_names": ds.feature_names, "evaluation_targets": targets}),
    )?;
    Ok(format!(
        "wrote {h} forecast rows from origin {origin} to {}",
        out.display()
    ))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SplitPart {
    Train,
    Val,
    Test,
}

impl SplitPart {
    pub fn name(self) -> &'static str {
        match self {
            SplitPart::Train => "train",
            SplitPart::Val => "val",
            SplitPart::Test => "test",
        }
    }
}

fn physical_metrics(
    net: &PPTNet,
    stats: &NormStats,
    windows: &[WindowSample],
    mask: Option<&[bool]>,
    batch: usize,
) -> Result<MetricReport, CliError> {
    let (mut preds, mut targets) = (Vec::new(), Vec::new());
    let stack = |ts: Vec<Tensor>| Tensor::stack(&ts).map_err(|e| CliError::domain(e.to_string()));
    for chunk in windows.chunks(batch.max(1)) {
        let x = stack(chunk.iter().map(|w| w.input.clone()).collect())?;
        let p = net.predict(&x)?;
        for (i, w) in chunk.iter().enumerate() {
            preds.push(stats.invert(&p.index_axis0(i)));
            targets.push(stats.invert(&w.target));
        }
    }
    Ok(compute_metrics(&stack(preds)?, &stack(targets)?, mask)?)
}

pub fn evaluate_checkpoint(
    checkpoint: &Path,
    data: &Path,
    part: SplitPart,
    out: Option<&Path>,
) -> Result<String, CliError> {
    let (net, meta, stats, ds) = load_matching(checkpoint, data)?;
    let get = |key: &str, default: usize| {
        meta.extra
            .get(key)
            .and_then(|v| v.as_u64())
            .map_or(default, |v| v as usize)
    };
    let stride = get("stride", 1);
    let batch = get("batch_size", 32);
    let split = window_split(
        &ds.standardize(&stats),
        net.config.lookback,
        net.config.horizon,
        stride,
    )?;
    let windows = match part {
        SplitPart::Train => &split.train,
        SplitPart::Val => &split.val,
        SplitPart::Test => &split.test,
    };
    if windows.is_empty() {
        return Err(CliError::domain(format!(
            "the {} split has no windows",
            part.name()
        )));
    }
    let mask = (!meta.target_mask.is_empty()).then_some(meta.target_mask.as_slice());
    let standardized = evaluate(&net, windows, mask, batch)?;
    let physical = physical_metrics(&net, &stats, windows, mask, batch)?;
    let mut report = json!({
        "split": part.name(),
        "windows": windows.len(),
        "standardized": standardized,
        "physical": physical,
    });
    if let Some(v) = meta.extra.get("validation") {
        report["stored_validation"] = v.clone();
    }
    emit_json(out, &report)
}

pub fn evaluate_files(pred: &Path, truth: &Path, out: Option<&Path>) -> Result<String, CliError> {
    let (p, t) = (read_flow_csv(pred)?, read_flow_csv(truth)?);
    if p.feature_names != t.feature_names || p.len() != t.len() {
        return Err(CliError::schema(format!(
            "prediction {:?} x {} rows does not match truth {:?} x {} rows",
            p.feature_names,
            p.len(),
            t.feature_names,
            t.len()
        )));
    }
    let stats = NormStats::fit(&t.values, 0..t.len())?;
    let physical = compute_metrics(&p.values, &t.values, None)?;
    let standardized = compute_metrics(&stats.apply(&p.values), &stats.apply(&t.values), None)?;
    emit_json(
        out,
        &json!({"rows": t.len(), "standardized": standardized, "physical": physical}),
    )
}

fn density_speed(table: &Table) -> Result<(Vec<f64>, Vec<f64>), CliError> {
    let k = table.numeric(table.require(&["k"])?)?;
    let v = table.numeric(table.require(&["v", "v_x"])?)?;
    Ok((k, v))
}

pub fn congestion(
    input: &Path,
    out: &Path,
    calibration: Option<&Path>,
) -> Result<String, CliError> {
    let table = Table::read(input)?;
    let (k, v) = density_speed(&table)?;
    let system = match calibration {
        Some(c) => {
            let (ck, cv) = density_speed(&Table::read(c)?)?;
            CongestionSystem::calibrate(&ck, &cv)?
        }
        None => CongestionSystem::calibrate(&k, &v)?,
    };
    let series = congestion_series(&k, &v, &system)?;
    let times = match table.find(&["t", "second"]) {
        Some(c) => table.numeric(c)?,
        None => series.timestamps.clone(),
    };
    let rows: Vec<Vec<String>> = (0..series.len())
        .map(|i| {
            vec![
                times[i].to_string(),
                series.probability[i].to_string(),
                series.levels[i].to_string(),
            ]
        })
        .collect();
    write_csv(out, &["t".into(), "P".into(), "label".into()], &rows)?;
    Ok(serde_json::to_string_pretty(
        &json!({"calibration": system, "rows": series.len(), "output": out}),
    )?)
}

pub struct PlotArgs {
    pub input: PathBuf,
    pub out: PathBuf,
    pub columns: Option<Vec<String>>,
    pub overlay: Option<PathBuf>,
    pub title: Option<String>,
}

pub fn plot(a: &PlotArgs) -> Result<String, CliError> {
    let table = Table::read(&a.input)?;
    if table.is_empty() {
        return Err(CliError::domain(format!("{}: nothing to plot", table.file)));
    }
    let x_col = table.find(&["second", "t", "step"]);
    let xs = match x_col {
        Some(c) => table.numeric(c)?,
        None => (0..table.len()).map(|i| i as f64).collect(),
    };
    let columns: Vec<usize> = match &a.columns {
        Some(names) => names
            .iter()
            .map(|n| table.require(&[n.as_str()]))
            .collect::<Result<_, _>>()?,
        None => (0..table.headers.len())
            .filter(|&c| Some(c) != x_col && table.is_numeric(c))
            .collect(),
    };
    if columns.is_empty() {
        return Err(CliError::domain("no numeric columns to plot"));
    }
    let overlay = a.overlay.as_deref().map(Table::read).transpose()?;
    let last_x = *xs.last().expect("non-empty table");
    let mut panels = Vec::with_capacity(columns.len());
    for &c in &columns {
        let name = table.headers[c].clone();
        let mut series = vec![Series {
            name: "observed".into(),
            x: xs.clone(),
            y: table.numeric(c)?,
            dashed: false,
        }];
        if let Some(o) = &overlay {
            if let Some(oc) = o.find(&[name.as_str()]) {
                let ox = match o.find(&["step"]) {
                    Some(s) => o.numeric(s)?.into_iter().map(|s| last_x + s).collect(),
                    None => (0..o.len()).map(|i| last_x + 1.0 + i as f64).collect(),
                };
                series.push(Series {
                    name: "forecast".into(),
                    x: ox,
                    y: o.numeric(oc)?,
                    dashed: true,
                });
            }
        }
        let x_label = x_col.map_or("row".to_string(), |c| table.headers[c].clone());
        panels.push(Panel {
            title: name,
            x_label,
            series,
        });
    }
    let title = a
        .title
        .clone()
        .unwrap_or_else(|| a.input.display().to_string());
    atomic_write(&a.out, svg::render(&title, &panels).as_bytes())?;
    Ok(format!(
        "wrote {} panels to {}",
        panels.len(),
        a.out.display()
    ))
}
