//! Command-line front end: flow extraction, period reports, training,
//! forecasting, congestion scoring, evaluation and SVG plots.

mod commands;
mod config;
mod error;
mod svg;
mod table;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};

use commands::SplitPart;
use error::CliError;
use pptflow::features::io::MetaOverrides;
use pptflow::features::Direction;

#[derive(Parser)]
#[command(
    name = "pptflow",
    version,
    about = "Traffic flow forecasting and congestion scoring"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum DirectionArg {
    Positive,
    Negative,
}

#[derive(Clone, Copy, ValueEnum)]
enum SplitArg {
    Train,
    Val,
    Test,
}

#[derive(Subcommand)]
enum Command {
    /// Build a per-second flow feature CSV (plus a JSON sidecar) for one driving direction.
    Extract {
        /// Recording metadata CSV (frameRate, segmentLength, lanesPerDirection).
        #[arg(long)]
        meta: PathBuf,
        /// Per-frame tracks CSV.
        #[arg(long)]
        tracks: PathBuf,
        /// Per-vehicle tracks metadata CSV (id, class, drivingDirection, length).
        #[arg(long)]
        tracks_meta: PathBuf,
        /// Driving direction to aggregate.
        #[arg(long, value_enum)]
        direction: DirectionArg,
        /// Output flow CSV path; the sidecar is written next to it with a .json extension.
        #[arg(long)]
        out: PathBuf,
        /// Recording id; defaults to the metadata file name without `_recordingMeta`.
        #[arg(long)]
        id: Option<String>,
        /// Segment length in metres, overriding the metadata.
        #[arg(long)]
        segment_length: Option<f64>,
        /// Lanes per direction, overriding the metadata.
        #[arg(long)]
        lanes: Option<u32>,
    },
    /// Report the dominant periods of a flow CSV as JSON.
    DetectPeriods {
        /// Flow CSV.
        #[arg(long)]
        data: PathBuf,
        /// Number of periods.
        #[arg(long, default_value_t = 6)]
        k: usize,
        /// Comma-separated columns; defaults to every column except `second`.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        /// Use only the last N rows.
        #[arg(long)]
        window: Option<usize>,
        /// Output JSON path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a forecaster; writes model.ckpt and train_log.jsonl into the output directory.
    Train {
        /// Flow CSV.
        #[arg(long)]
        data: PathBuf,
        /// Forecast horizon in rows (15, 30 and 45 are the usual choices).
        #[arg(long)]
        horizon: Option<usize>,
        /// Lookback window in rows.
        #[arg(long)]
        lookback: Option<usize>,
        /// Flat key = value configuration file.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of epochs, overriding the configuration.
        #[arg(long)]
        epochs: Option<usize>,
        /// Random seed, overriding the configuration and PPTFLOW_SEED.
        #[arg(long)]
        seed: Option<u64>,
        /// Output directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Forecast the next horizon in physical units from a checkpoint.
    Predict {
        /// Checkpoint written by `train`.
        #[arg(long)]
        checkpoint: PathBuf,
        /// Flow CSV with the checkpoint's columns.
        #[arg(long)]
        data: PathBuf,
        /// Output forecast CSV; a .json sidecar lists the evaluation targets.
        #[arg(long)]
        out: PathBuf,
        /// Row index of the first forecast step; defaults to the end of the data.
        #[arg(long)]
        origin: Option<usize>,
    },
    /// Score congestion probability from a CSV with `k` and `v` (or `v_x`) columns.
    Congestion {
        /// Input CSV.
        #[arg(long)]
        input: PathBuf,
        /// Output CSV with columns t, P, label.
        #[arg(long)]
        out: PathBuf,
        /// Reference CSV whose ranges calibrate the memberships; defaults to the input.
        #[arg(long)]
        calibration: Option<PathBuf>,
    },
    /// Compute MAE, MSE and RMSE as JSON, either for a checkpoint on a data split or for two CSVs.
    Evaluate {
        /// Checkpoint written by `train`.
        #[arg(long, requires = "data", conflicts_with_all = ["pred", "truth"])]
        checkpoint: Option<PathBuf>,
        /// Flow CSV for checkpoint evaluation.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Split to score with a checkpoint.
        #[arg(long, value_enum, default_value = "val")]
        split: SplitArg,
        /// Predicted values CSV.
        #[arg(long, requires = "truth")]
        pred: Option<PathBuf>,
        /// True values CSV with the same columns and rows.
        #[arg(long, requires = "pred")]
        truth: Option<PathBuf>,
        /// Output JSON path; printed to stdout when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw every numeric column of a CSV as SVG line charts, optionally overlaying a forecast.
    Plot {
        /// Input CSV (flow series, forecast or congestion output).
        #[arg(long)]
        input: PathBuf,
        /// Output SVG.
        #[arg(long)]
        out: PathBuf,
        /// Comma-separated columns to draw.
        #[arg(long, value_delimiter = ',')]
        columns: Option<Vec<String>>,
        /// Forecast CSV from `predict`, drawn dashed after the last input row.
        #[arg(long)]
        overlay: Option<PathBuf>,
        /// Chart title.
        #[arg(long)]
        title: Option<String>,
    },
}

fn run(cli: Cli) -> Result<String, CliError> {
    match cli.command {
        Command::Extract {
            meta,
            tracks,
            tracks_meta,
            direction,
            out,
            id,
            segment_length,
            lanes,
        } => commands::extract(&commands::ExtractArgs {
            meta,
            tracks,
            tracks_meta,
            direction: match direction {
                DirectionArg::Positive => Direction::PositiveX,
                DirectionArg::Negative => Direction::NegativeX,
            },
            out,
            id,
            overrides: MetaOverrides {
                segment_length,
                lanes_per_direction: lanes,
            },
        }),
        Command::DetectPeriods {
            data,
            k,
            columns,
            window,
            out,
        } => commands::detect(&data, k, columns.as_deref(), window, out.as_deref()),
        Command::Train {
            data,
            horizon,
            lookback,
            config,
            epochs,
            seed,
            out,
        } => commands::train_cmd(&commands::TrainArgs {
            data,
            config,
            out,
            horizon,
            lookback,
            epochs,
            seed,
        }),
        Command::Predict {
            checkpoint,
            data,
            out,
            origin,
        } => commands::predict(&checkpoint, &data, &out, origin),
        Command::Congestion {
            input,
            out,
            calibration,
        } => commands::congestion(&input, &out, calibration.as_deref()),
        Command::Evaluate {
            checkpoint,
            data,
            split,
            pred,
            truth,
            out,
        } => match (checkpoint, data, pred, truth) {
            (Some(c), Some(d), _, _) => {
                let part = match split {
                    SplitArg::Train => SplitPart::Train,
                    SplitArg::Val => SplitPart::Val,
                    SplitArg::Test => SplitPart::Test,
                };
                commands::evaluate_checkpoint(&c, &d, part, out.as_deref())
            }
            (_, _, Some(p), Some(t)) => commands::evaluate_files(&p, &t, out.as_deref()),
            _ => Err(CliError::schema(
                "evaluate needs --checkpoint with --data, or --pred with --truth",
            )),
        },
        Command::Plot {
            input,
            out,
            columns,
            overlay,
            title,
        } => commands::plot(&commands::PlotArgs {
            input,
            out,
            columns,
            overlay,
            title,
        }),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(message) => {
            println!("{message}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code)
        }
    }
}
