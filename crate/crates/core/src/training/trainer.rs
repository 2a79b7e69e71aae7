use std::io::Write;

use log::{info, warn};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{compute_metrics, cosine_lr, mse_loss, AdamW, MetricReport, TrainError};
use crate::features::{WindowSample, WindowSplit};
use crate::model::{ModelError, PPTNet};
use crate::numeric::{ParamStore, Tape, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr_init: f64,
    pub lr_min: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Epochs without validation-MAE improvement before stopping.
    pub patience: usize,
    /// Output features included in the loss; all when `None`.
    pub target_mask: Option<Vec<bool>>,
    /// Stop once validation MSE falls below this value.
    pub target_val_mse: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr_init: 5e-3,
            lr_min: 1e-5,
            weight_decay: 1e-3,
            batch_size: 32,
            epochs: 100,
            seed: 0,
            patience: 20,
            target_mask: None,
            target_val_mse: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.lr_init > self.lr_min && self.lr_min >= 0.0) {
            return Err(TrainError::Config(format!(
                "need lr_init > lr_min >= 0, got {} and {}",
                self.lr_init, self.lr_min
            )));
        }
        if self.batch_size == 0 || self.epochs == 0 {
            return Err(TrainError::Config(
                "batch_size and epochs must be >= 1".into(),
            ));
        }
        if self.weight_decay < 0.0 {
            return Err(TrainError::Config("weight_decay must be >= 0".into()));
        }
        Ok(())
    }
}

/// One line of the JSON-lines training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_mse: f64,
    pub val_rmse: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    Completed,
    EarlyStopped,
    TargetReached,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainOutcome {
    pub records: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: MetricReport,
    pub stop: StopReason,
    pub steps: usize,
}

fn stack(windows: &[&WindowSample]) -> Result<(Tensor, Tensor), TrainError> {
    let inputs: Vec<Tensor> = windows.iter().map(|w| w.input.clone()).collect();
    let targets: Vec<Tensor> = windows.iter().map(|w| w.target.clone()).collect();
    Ok((Tensor::stack(&inputs)?, Tensor::stack(&targets)?))
}

/// Forecasts every window (in order, without dropout) and scores them.
pub fn evaluate(
    net: &PPTNet,
    windows: &[WindowSample],
    mask: Option<&[bool]>,
    batch_size: usize,
) -> Result<MetricReport, TrainError> {
    if windows.is_empty() {
        return Err(TrainError::Empty);
    }
    let mut preds = Vec::with_capacity(windows.len());
    let mut targets = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let refs: Vec<&WindowSample> = chunk.iter().collect();
        let (x, y) = stack(&refs)?;
        let p = net.predict(&x)?;
        for i in 0..chunk.len() {
            preds.push(p.index_axis0(i));
            targets.push(y.index_axis0(i));
        }
    }
    compute_metrics(&Tensor::stack(&preds)?, &Tensor::stack(&targets)?, mask)
}

/// Minimizes the masked MSE on the training windows.
///
/// The parameters with the lowest validation MAE are restored into `net` on
/// return. With a `log` writer, one JSON record per epoch is written.
pub fn train(
    net: &mut PPTNet,
    split: &WindowSplit,
    cfg: &TrainConfig,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(TrainError::Empty);
    }
    let mask = cfg.target_mask.as_deref();
    let val_set = if split.val.is_empty() {
        warn!("no validation windows, selecting on training windows");
        &split.train
    } else {
        &split.val
    };

    let n = split.train.len();
    let steps_per_epoch = n.div_ceil(cfg.batch_size);
    let total_steps = cfg.epochs * steps_per_epoch;
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut dropout_rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_add(0x5eed));
    let mut opt = AdamW::new(cfg.weight_decay);

    let mut records = Vec::new();
    let mut best: Option<(f64, usize, ParamStore, MetricReport)> = None;
    let mut stop = StopReason::Completed;
    let mut step = 0;
    let mut order: Vec<usize> = (0..n).collect();
    let initial = net.store.clone();

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut shuffle_rng);
        let epoch_lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_min);
        let mut loss_sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let lr = cosine_lr(step, total_steps, cfg.lr_init, cfg.lr_min);
            let refs: Vec<&WindowSample> = chunk.iter().map(|&i| &split.train[i]).collect();
            let (x, y) = stack(&refs)?;
            let mut tape = Tape::new();
            let (xv, yv) = (tape.constant(x), tape.constant(y));
            let outcome = net
                .forward(&mut tape, xv, Some(&mut dropout_rng))
                .map_err(TrainError::from)
                .and_then(|pred| mse_loss(&mut tape, pred, yv, mask));
            let loss = match outcome {
                Ok(l) if tape.value(l).item().is_finite() => l,
                Ok(_) | Err(TrainError::Model(ModelError::NonFinite { .. })) => {
                    return Err(diverged(net, best.map_or(initial, |b| b.2), epoch));
                }
                Err(e) => return Err(e),
            };
            loss_sum += tape.value(loss).item() * chunk.len() as f64;
            net.store.zero_grad();
            tape.backward(loss, &mut net.store)?;
            match opt.update(&mut net.store, lr) {
                Ok(()) => {}
                Err(TrainError::NonFiniteGradient(name)) => {
                    warn!("non-finite gradient in {name}");
                    return Err(diverged(net, best.map_or(initial, |b| b.2), epoch));
                }
                Err(e) => return Err(e),
            }
            step += 1;
        }

        let val = match evaluate(net, val_set, mask, cfg.batch_size) {
            Err(TrainError::Model(ModelError::NonFinite { .. })) => {
                return Err(diverged(net, best.map_or(initial, |b| b.2), epoch));
            }
            other => other?,
        };
        let record = EpochRecord {
            epoch,
            lr: epoch_lr,
            train_loss: loss_sum / n as f64,
            val_mae: val.mae,
            val_mse: val.mse,
            val_rmse: val.rmse,
        };
        info!(
            "epoch {epoch}: lr {:.3e} train {:.6} val mae {:.6} mse {:.6}",
            record.lr, record.train_loss, record.val_mae, record.val_mse
        );
        if let Some(w) = log.as_deref_mut() {
            serde_json::to_writer(&mut *w, &record)?;
            w.write_all(b"\n")?;
        }
        records.push(record);

        let improved = best.as_ref().is_none_or(|b| val.mae < b.0);
        if improved {
            best = Some((val.mae, epoch, net.store.clone(), val.clone()));
        }
        if cfg.target_val_mse.is_some_and(|t| val.mse < t) {
            stop = StopReason::TargetReached;
            break;
        }
        if let Some(b) = &best {
            if epoch - b.1 >= cfg.patience {
                stop = StopReason::EarlyStopped;
                break;
            }
        }
    }

    let (_, best_epoch, store, best_val) = best.expect("at least one epoch ran");
    net.store = store;
    Ok(TrainOutcome {
        records,
        best_epoch,
        best_val,
        stop,
        steps: step,
    })
}

fn diverged(net: &mut PPTNet, last_good: ParamStore, epoch: usize) -> TrainError {
    net.store = last_good;
    TrainError::Diverged { epoch }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::features::{window_split, TimeSeriesDataset};
    use crate::model::{ModelConfig, Variant};

    fn sine_split(rows: usize, t: usize, h: usize) -> WindowSplit {
        let data: Vec<f64> = (0..rows)
            .flat_map(|i| {
                let x = i as f64;
                [
                    (2.0 * std::f64::consts::PI * x / 8.0).sin(),
                    (2.0 * std::f64::consts::PI * x / 4.0).cos(),
                ]
            })
            .collect();
        let ds = TimeSeriesDataset::new(
            vec!["a".into(), "b".into()],
            Tensor::new(vec![rows, 2], data).unwrap(),
        )
        .unwrap();
        window_split(&ds, t, h, 1).unwrap()
    }

    fn tiny() -> ModelConfig {
        ModelConfig {
            n_features: 2,
            d_model: 8,
            d_ff: 16,
            heads: 2,
            top_k: 2,
            periodic_blocks: 1,
            decoder_layers: 1,
            lookback: 8,
            horizon: 4,
            kernel_sizes: vec![1, 3],
            dropout: 0.1,
            variant: Variant::Full,
        }
    }

    #[test]
    fn training_reduces_loss_and_logs() {
        let split = sine_split(80, 8, 4);
        let mut net = PPTNet::new(tiny(), 1).unwrap();
        let cfg = TrainConfig {
            epochs: 6,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let mut log = Vec::new();
        let out = train(&mut net, &split, &cfg, Some(&mut log)).unwrap();
        assert_eq!(out.records.len(), 6);
        assert!(out.records[5].train_loss < out.records[0].train_loss);
        let lines: Vec<&str> = std::str::from_utf8(&log).unwrap().lines().collect();
        assert_eq!(lines.len(), 6);
        let rec: EpochRecord = serde_json::from_str(lines[0]).unwrap();
        assert_eq!(rec, out.records[0]);
        assert_eq!(rec.lr, 5e-3);
        let val = evaluate(&net, &split.val, None, 8).unwrap();
        assert_eq!(val, out.best_val);
    }

    #[test]
    fn target_and_patience_stop() {
        let split = sine_split(60, 8, 4);
        let mut net = PPTNet::new(tiny(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            target_val_mse: Some(1e9),
            ..TrainConfig::default()
        };
        let out = train(&mut net, &split, &cfg, None).unwrap();
        assert_eq!(
            (out.stop, out.records.len()),
            (StopReason::TargetReached, 1)
        );

        let cfg = TrainConfig {
            epochs: 50,
            batch_size: 16,
            patience: 0,
            lr_init: 1e-9,
            lr_min: 0.0,
            ..TrainConfig::default()
        };
        let out = train(&mut net, &split, &cfg, None).unwrap();
        assert_eq!(out.stop, StopReason::EarlyStopped);
        assert!(out.records.len() < 50);
    }

    #[test]
    fn exploding_learning_rate_is_reported() {
        let split = sine_split(60, 8, 4);
        let mut net = PPTNet::new(tiny(), 3).unwrap();
        let cfg = TrainConfig {
            epochs: 30,
            batch_size: 8,
            lr_init: 1e300,
            weight_decay: 0.0,
            ..TrainConfig::default()
        };
        let before = net.store.clone();
        match train(&mut net, &split, &cfg, None) {
            Err(TrainError::Diverged { .. }) => {}
            other => panic!("expected divergence, got {other:?}"),
        }
        assert_eq!(net.store, before);
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig {
            lr_init: 1e-3,
            lr_min: 1e-3,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig {
            batch_size: 0,
            ..TrainConfig::default()
        }
        .validate()
        .is_err());
        assert!(TrainConfig::default().validate().is_ok());
    }
}
