use std::fmt;

use pptflow::features::FeatureError;
use pptflow::fuzzy::FuzzyError;
use pptflow::model::ModelError;
use pptflow::spectral::SpectralError;
use pptflow::training::TrainError;

pub const SCHEMA: u8 = 2;
pub const DOMAIN: u8 = 3;
pub const NUMERIC: u8 = 4;
pub const ARTIFACT: u8 = 5;
pub const MISSING_FILE: u8 = 66;

/// A failed command: process exit code plus message.
#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    pub fn new(code: u8, message: impl Into<String>) -> Self {
        CliError {
            code,
            message: message.into(),
        }
    }

    pub fn schema(message: impl Into<String>) -> Self {
        Self::new(SCHEMA, message)
    }

    pub fn domain(message: impl Into<String>) -> Self {
        Self::new(DOMAIN, message)
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.message)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::new(MISSING_FILE, e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::schema(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        match e.into_kind() {
            csv::ErrorKind::Io(io) => io.into(),
            kind => CliError::schema(format!("{kind:?}")),
        }
    }
}

impl From<FeatureError> for CliError {
    fn from(e: FeatureError) -> Self {
        let message = e.to_string();
        match e {
            FeatureError::Io(io) => io.into(),
            FeatureError::Schema { .. } | FeatureError::Csv(_) | FeatureError::Json(_) => {
                CliError::schema(message)
            }
            _ => CliError::domain(message),
        }
    }
}

impl From<SpectralError> for CliError {
    fn from(e: SpectralError) -> Self {
        CliError::domain(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        let message = e.to_string();
        match e {
            ModelError::Io(io) => io.into(),
            ModelError::Checkpoint(_) | ModelError::InputShape { .. } | ModelError::Json(_) => {
                CliError::new(ARTIFACT, message)
            }
            ModelError::NonFinite { .. } => CliError::new(NUMERIC, message),
            ModelError::Config(_) | ModelError::Tensor(_) | ModelError::Spectral(_) => {
                CliError::domain(message)
            }
        }
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        let message = e.to_string();
        match e {
            TrainError::Model(m) => m.into(),
            TrainError::Feature(f) => f.into(),
            TrainError::Io(io) => io.into(),
            TrainError::Diverged { .. } | TrainError::NonFiniteGradient(_) => {
                CliError::new(NUMERIC, message)
            }
            TrainError::Shape { .. } => CliError::new(ARTIFACT, message),
            _ => CliError::domain(message),
        }
    }
}

impl From<FuzzyError> for CliError {
    fn from(e: FuzzyError) -> Self {
        let message = e.to_string();
        match e {
            FuzzyError::LengthMismatch { .. } => CliError::schema(message),
            FuzzyError::NonFinite(_) => CliError::new(NUMERIC, message),
            _ => CliError::domain(message),
        }
    }
}
