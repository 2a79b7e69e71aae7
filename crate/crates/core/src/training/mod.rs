//! Loss, optimizer, learning-rate schedule, metrics and the training loop.

mod gradcheck;
mod metrics;
mod optim;
mod trainer;

use thiserror::Error;

use crate::features::FeatureError;
use crate::model::ModelError;
use crate::numeric::{Tape, Tensor, TensorError, Var};

pub use gradcheck::{grad_check, grad_check_linear, GRAD_CHECK_SAMPLES};
pub use metrics::{compute_metrics, FeatureMetric, MetricReport};
pub use optim::{cosine_lr, AdamW};
pub use trainer::{evaluate, train, EpochRecord, StopReason, TrainConfig, TrainOutcome};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("shape mismatch: prediction {pred:?} vs target {target:?}")]
    Shape {
        pred: Vec<usize>,
        target: Vec<usize>,
    },
    #[error("no entries to evaluate")]
    Empty,
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("training diverged at epoch {epoch}; parameters restored from the last good epoch")]
    Diverged { epoch: usize },
    #[error("invalid training configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Feature(#[from] FeatureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Mean squared error over the features selected by `mask` (all when `None`).
pub fn mse_loss(
    tape: &mut Tape,
    pred: Var,
    target: Var,
    mask: Option<&[bool]>,
) -> Result<Var, TrainError> {
    let (ps, ts) = (tape.shape(pred).to_vec(), tape.shape(target).to_vec());
    if ps != ts || ps.is_empty() {
        return Err(TrainError::Shape {
            pred: ps,
            target: ts,
        });
    }
    let c = ps[ps.len() - 1];
    let diff = tape.sub(pred, target)?;
    let sq = tape.mul(diff, diff)?;
    match mask {
        None => Ok(tape.mean(sq)),
        Some(m) => {
            if m.len() != c {
                return Err(TrainError::Shape {
                    pred: ps,
                    target: vec![m.len()],
                });
            }
            let active = m.iter().filter(|b| **b).count();
            if active == 0 {
                return Err(TrainError::Empty);
            }
            let weights = tape.constant(Tensor::new(
                vec![c],
                m.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect(),
            )?);
            let kept = tape.mul(sq, weights)?;
            let total = tape.sum(kept);
            let n = ps.iter().product::<usize>() / c * active;
            Ok(tape.scale(total, 1.0 / n as f64))
        }
    }
}
