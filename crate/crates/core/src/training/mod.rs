//! Optimizer, loss, and the training loop.

mod adam;
mod loss;
mod report;
mod trainer;

use std::fmt;
use std::str::FromStr;

pub use adam::Adam;
pub use loss::mse_loss;
pub use report::{EpochRecord, TrainReport};
pub use trainer::{train, train_step, EpochEvent, TrainOutcome};

use crate::config::parse_value;
use crate::error::{Error, Result};

/// How scores are mapped into network units for the loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum TargetMode {
    /// Regress the raw score.
    #[default]
    None,
    /// Map the training-split score range onto [0, 1].
    MinMax,
}

impl fmt::Display for TargetMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            TargetMode::None => "none",
            TargetMode::MinMax => "minmax",
        })
    }
}

impl FromStr for TargetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(TargetMode::None),
            "minmax" => Ok(TargetMode::MinMax),
            _ => Err(Error::Config(format!("unknown target scaling {s:?} (none, minmax)"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation RMSE; 0 disables.
    pub patience: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Save a checkpoint every this many epochs; 0 keeps only the best.
    pub checkpoint_every: usize,
    pub target_scaling: TargetMode,
    /// Start the output bias at the mean training target.
    pub init_output_bias: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 200,
            batch_size: 8,
            seed: 0,
            patience: 40,
            lr: 1e-3,
            weight_decay: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            checkpoint_every: 0,
            target_scaling: TargetMode::None,
            init_output_bias: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!(
                "train.batch_size must be at least 2 for batch norm, got {}",
                self.batch_size
            )));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("train.lr must be positive, got {}", self.lr)));
        }
        if !(self.weight_decay >= 0.0 && self.lr * self.weight_decay < 1.0) {
            return Err(Error::Config(format!(
                "train.weight_decay {} is out of range",
                self.weight_decay
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("train.{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.adam_eps > 0.0) {
            return Err(Error::Config(format!(
                "train.adam_eps must be positive, got {}",
                self.adam_eps
            )));
        }
        Ok(())
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let full = format!("train.{key}");
        let k = full.as_str();
        match key {
            "epochs" => self.epochs = parse_value(k, value)?,
            "batch_size" => self.batch_size = parse_value(k, value)?,
            "seed" => self.seed = parse_value(k, value)?,
            "patience" => self.patience = parse_value(k, value)?,
            "lr" => self.lr = parse_value(k, value)?,
            "weight_decay" => self.weight_decay = parse_value(k, value)?,
            "beta1" => self.beta1 = parse_value(k, value)?,
            "beta2" => self.beta2 = parse_value(k, value)?,
            "adam_eps" => self.adam_eps = parse_value(k, value)?,
            "checkpoint_every" => self.checkpoint_every = parse_value(k, value)?,
            "target_scaling" => self.target_scaling = value.parse()?,
            "init_output_bias" => self.init_output_bias = parse_value(k, value)?,
            _ => return Err(Error::Config(format!("unknown config key {full}"))),
        }
        Ok(())
    }

    pub fn entries(&self) -> Vec<(String, String)> {
        let e = |k: &str, v: String| (k.to_string(), v);
        vec![
            e("epochs", self.epochs.to_string()),
            e("batch_size", self.batch_size.to_string()),
            e("seed", self.seed.to_string()),
            e("patience", self.patience.to_string()),
            e("lr", self.lr.to_string()),
            e("weight_decay", self.weight_decay.to_string()),
            e("beta1", self.beta1.to_string()),
            e("beta2", self.beta2.to_string()),
            e("adam_eps", self.adam_eps.to_string()),
            e("checkpoint_every", self.checkpoint_every.to_string()),
            e("target_scaling", self.target_scaling.to_string()),
            e("init_output_bias", self.init_output_bias.to_string()),
        ]
    }

    pub fn optimizer(&self) -> Adam {
        let mut a = Adam::new(self.lr, self.weight_decay);
        a.beta1 = self.beta1;
        a.beta2 = self.beta2;
        a.eps = self.adam_eps;
        a
    }
}
