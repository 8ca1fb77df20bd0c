//! Experiment configuration: normalization axis and scaler, loss, training
//! hyperparameters, and U-Net size. This is the unit the CLI reads from JSON
//! and the weights file embeds, so a saved model can be applied without the
//! original config file.

use serde::{Deserialize, Serialize};

use crate::dataset::{NormAxis, NormalizationSpec, Scaler};
use crate::error::{Error, Result};
use crate::nn::{LossKind, UNetConfig};

fn default_epochs() -> usize {
    20
}
fn default_batch_size() -> usize {
    64
}
fn default_learning_rate() -> f64 {
    0.001
}
fn default_depth() -> usize {
    4
}
fn default_base_filters() -> usize {
    16
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Normalization axis: "frequency" or "time".
    pub axis: NormAxis,
    /// Scaler: "minmax" or "quantile".
    pub scaler: Scaler,
    /// Loss: "mae" or "mse".
    pub loss: LossKind,
    #[serde(default = "default_epochs")]
    pub epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_depth")]
    pub depth: usize,
    #[serde(default = "default_base_filters")]
    pub base_filters: usize,
}

impl ExperimentConfig {
    /// The paper's best configuration with default training parameters.
    pub fn example() -> Self {
        ExperimentConfig {
            axis: NormAxis::Frequency,
            scaler: Scaler::MinMax,
            loss: LossKind::Mae,
            epochs: default_epochs(),
            batch_size: default_batch_size(),
            learning_rate: default_learning_rate(),
            seed: 0,
            depth: default_depth(),
            base_filters: default_base_filters(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::invalid("epochs: must be at least 1"));
        }
        if self.batch_size == 0 {
            return Err(Error::invalid("batch_size: must be at least 1"));
        }
        if !(self.learning_rate > 0.0) {
            return Err(Error::invalid(format!(
                "learning_rate: {} must be positive",
                self.learning_rate
            )));
        }
        self.unet().validate()
    }

    pub fn norm_spec(&self) -> NormalizationSpec {
        NormalizationSpec {
            scaler: self.scaler,
            axis: self.axis,
        }
    }

    pub fn unet(&self) -> UNetConfig {
        UNetConfig::for_patches(self.depth, self.base_filters)
    }

    /// Stable slug for file names, e.g. `frequency_minmax_mae`.
    pub fn label(&self) -> String {
        let axis = match self.axis {
            NormAxis::Frequency => "frequency",
            NormAxis::Time => "time",
        };
        let scaler = match self.scaler {
            Scaler::MinMax => "minmax",
            Scaler::Robust => "quantile",
        };
        let loss = match self.loss {
            LossKind::Mae => "mae",
            LossKind::Mse => "mse",
        };
        format!("{axis}_{scaler}_{loss}")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_round_trip() {
        let cfg = ExperimentConfig::example();
        let json = serde_json::to_string(&cfg).unwrap();
        let back: ExperimentConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn unknown_scaler_rejected_with_alternatives() {
        let json = r#"{"axis":"time","scaler":"zscore","loss":"mae"}"#;
        let err = serde_json::from_str::<ExperimentConfig>(json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("zscore"), "{msg}");
        assert!(msg.contains("minmax"), "{msg}");
        assert!(msg.contains("quantile"), "{msg}");
    }

    #[test]
    fn defaults_fill_in() {
        let json = r#"{"axis":"frequency","scaler":"minmax","loss":"mae"}"#;
        let cfg: ExperimentConfig = serde_json::from_str(json).unwrap();
        assert_eq!(cfg.epochs, 20);
        assert_eq!(cfg.batch_size, 64);
        assert_eq!(cfg.learning_rate, 0.001);
        assert_eq!(cfg.depth, 4);
        assert_eq!(cfg.base_filters, 16);
    }

    #[test]
    fn validation_names_field() {
        let mut cfg = ExperimentConfig::example();
        cfg.epochs = 0;
        let msg = cfg.validate().unwrap_err().to_string();
        assert!(msg.contains("epochs"), "{msg}");
    }
}
