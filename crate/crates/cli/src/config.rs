use std::collections::BTreeSet;
use std::path::Path;
use std::str::FromStr;

use pptflow::model::{ModelConfig, Variant};
use pptflow::training::TrainConfig;

use crate::error::CliError;

/// Accepted configuration keys.
pub const KEYS: &[&str] = &[
    "lookback",
    "horizon",
    "stride",
    "d_model",
    "d_ff",
    "heads",
    "top_k",
    "periodic_blocks",
    "decoder_layers",
    "kernel_sizes",
    "dropout",
    "variant",
    "lr_init",
    "lr_min",
    "weight_decay",
    "batch_size",
    "epochs",
    "patience",
    "seed",
    "targets",
    "target_val_mse",
];

/// Model and training settings read from a flat `key = value` file.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub stride: usize,
    /// Feature names the loss is restricted to; all features when empty.
    pub targets: Vec<String>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            stride: 1,
            targets: Vec::new(),
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::schema(format!("config key `{key}`: cannot parse `{value}`")))
}

fn parse_list<T: FromStr>(key: &str, value: &str) -> Result<Vec<T>, CliError> {
    value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect()
}

impl RunConfig {
    pub fn parse_str(text: &str) -> Result<Self, CliError> {
        let mut cfg = RunConfig::default();
        let mut seen = BTreeSet::new();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                CliError::schema(format!("config line {}: expected `key = value`", n + 1))
            })?;
            let (key, value) = (key.trim(), value.trim());
            if !seen.insert(key.to_string()) {
                return Err(CliError::schema(format!("config key `{key}` given twice")));
            }
            cfg.set(key, value)?;
        }
        Ok(cfg)
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            Some(p) => Self::parse_str(&std::fs::read_to_string(p)?),
            None => Ok(RunConfig::default()),
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        let (m, t) = (&mut self.model, &mut self.train);
        match key {
            "lookback" => m.lookback = parse(key, value)?,
            "horizon" => m.horizon = parse(key, value)?,
            "stride" => self.stride = parse(key, value)?,
            "d_model" => m.d_model = parse(key, value)?,
            "d_ff" => m.d_ff = parse(key, value)?,
            "heads" => m.heads = parse(key, value)?,
            "top_k" => m.top_k = parse(key, value)?,
            "periodic_blocks" => m.periodic_blocks = parse(key, value)?,
            "decoder_layers" => m.decoder_layers = parse(key, value)?,
            "kernel_sizes" => m.kernel_sizes = parse_list(key, value)?,
            "dropout" => m.dropout = parse(key, value)?,
            "variant" => {
                m.variant = match value {
                    "full" => Variant::Full,
                    "periodic_only" => Variant::PeriodicOnly,
                    "decoder_only" => Variant::DecoderOnly,
                    _ => {
                        return Err(CliError::schema(format!(
                            "config key `variant`: unknown variant `{value}`"
                        )))
                    }
                }
            }
            "lr_init" => t.lr_init = parse(key, value)?,
            "lr_min" => t.lr_min = parse(key, value)?,
            "weight_decay" => t.weight_decay = parse(key, value)?,
            "batch_size" => t.batch_size = parse(key, value)?,
            "epochs" => t.epochs = parse(key, value)?,
            "patience" => t.patience = parse(key, value)?,
            "seed" => t.seed = parse(key, value)?,
            "targets" => self.targets = parse_list(key, value)?,
            "target_val_mse" => t.target_val_mse = Some(parse(key, value)?),
            _ => {
                return Err(CliError::schema(format!(
                    "unknown config key `{key}`; accepted keys: {}",
                    KEYS.join(", ")
                )))
            }
        }
        Ok(())
    }

    /// Loss mask over `feature_names`, or `None` when every feature is a target.
    pub fn target_mask(&self, feature_names: &[String]) -> Result<Option<Vec<bool>>, CliError> {
        if self.targets.is_empty() {
            return Ok(None);
        }
        for t in &self.targets {
            if !feature_names.contains(t) {
                return Err(CliError::schema(format!(
                    "target feature `{t}` is not a data column"
                )));
            }
        }
        Ok(Some(
            feature_names
                .iter()
                .map(|n| self.targets.contains(n))
                .collect(),
        ))
    }
}
