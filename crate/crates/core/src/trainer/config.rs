use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Label-guessing weights and sharpening temperature.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GuessConfig {
    /// Augmentations per unlabeled example.
    pub k: usize,
    #[serde(default = "one")]
    pub w_ori: f64,
    /// One weight per augmentation; defaults to all ones.
    #[serde(default)]
    pub w_aug: Option<Vec<f64>>,
    pub temperature: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for GuessConfig {
    fn default() -> Self {
        Self {
            k: 2,
            w_ori: 1.0,
            w_aug: None,
            temperature: 0.5,
        }
    }
}

impl GuessConfig {
    pub fn aug_weights(&self) -> Vec<f64> {
        self.w_aug.clone().unwrap_or_else(|| vec![1.0; self.k])
    }

    pub fn validate(&self) -> Result<()> {
        let w = self.aug_weights();
        if w.len() != self.k {
            return Err(Error::Config(format!(
                "w_aug has {} weights but k = {}",
                w.len(),
                self.k
            )));
        }
        if self.w_ori < 0.0
            || w.iter().any(|x| *x < 0.0 || !x.is_finite())
            || !self.w_ori.is_finite()
        {
            return Err(Error::Config("guess weights must be nonnegative".into()));
        }
        if self.w_ori + w.iter().sum::<f64>() <= 0.0 {
            return Err(Error::Config("guess weights are all zero".into()));
        }
        if !(self.temperature > 0.0) {
            return Err(Error::Config(format!(
                "temperature must be positive, got {}",
                self.temperature
            )));
        }
        Ok(())
    }
}

/// Which data the trainer mixes over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    /// Labeled, unlabeled and augmented rows with guessed labels.
    Mixtext,
    /// Labeled rows only.
    Tmix,
    /// Labeled rows with one-hot targets and no mixing.
    Supervised,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub mode: TrainMode,
    #[serde(default = "default_labeled_batch")]
    pub labeled_batch: usize,
    #[serde(default = "default_unlabeled_batch")]
    pub unlabeled_batch: usize,
    #[serde(default = "default_lr_encoder")]
    pub lr_encoder: f64,
    #[serde(default = "default_lr_head")]
    pub lr_head: f64,
    pub epochs: usize,
    /// Defaults to one pass over the labeled split.
    #[serde(default)]
    pub steps_per_epoch: Option<usize>,
    pub gamma: f64,
    pub gamma_m: f64,
    /// Leading epochs that train on labeled rows only.
    #[serde(default)]
    pub warmup_epochs: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_adam_eps")]
    pub adam_eps: f64,
}

fn default_labeled_batch() -> usize {
    4
}
fn default_unlabeled_batch() -> usize {
    8
}
fn default_lr_encoder() -> f64 {
    1e-4
}
fn default_lr_head() -> f64 {
    1e-3
}
fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_adam_eps() -> f64 {
    1e-8
}

impl TrainConfig {
    pub fn new(mode: TrainMode, epochs: usize) -> Self {
        Self {
            mode,
            labeled_batch: default_labeled_batch(),
            unlabeled_batch: default_unlabeled_batch(),
            lr_encoder: default_lr_encoder(),
            lr_head: default_lr_head(),
            epochs,
            steps_per_epoch: None,
            gamma: 0.7,
            gamma_m: 1.0,
            warmup_epochs: 0,
            seed: 0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            adam_eps: default_adam_eps(),
        }
    }

    /// Defaults to one pass over the labeled split.
    pub fn steps_per_epoch(&self, n_labeled: usize) -> usize {
        self.steps_per_epoch
            .unwrap_or_else(|| n_labeled.div_ceil(self.labeled_batch).max(1))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: &str| Err(Error::Config(m.into()));
        if self.labeled_batch == 0 || self.unlabeled_batch == 0 {
            return fail("batch sizes must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return fail("gamma must be in (0, 1]");
        }
        if !(self.gamma_m >= 0.0) {
            return fail("gamma_m must be nonnegative");
        }
        if !(self.lr_encoder > 0.0 && self.lr_head > 0.0) {
            return fail("learning rates must be positive");
        }
        if self.epochs == 0 || self.steps_per_epoch == Some(0) {
            return fail("epochs and steps_per_epoch must be positive");
        }
        if self.warmup_epochs >= self.epochs && self.warmup_epochs > 0 {
            return fail("warmup_epochs must be shorter than training");
        }
        if !(0.0..1.0).contains(&self.beta1)
            || !(0.0..1.0).contains(&self.beta2)
            || !(self.adam_eps > 0.0)
        {
            return fail("invalid optimizer moment coefficients");
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn guess_config_checks() {
        assert!(GuessConfig::default().validate().is_ok());
        let zero = GuessConfig {
            w_ori: 0.0,
            w_aug: Some(vec![0.0, 0.0]),
            ..GuessConfig::default()
        };
        assert!(matches!(zero.validate(), Err(Error::Config(_))));
        let wrong_len = GuessConfig {
            w_aug: Some(vec![1.0]),
            ..GuessConfig::default()
        };
        assert!(wrong_len.validate().is_err());
        let cold = GuessConfig {
            temperature: 0.0,
            ..GuessConfig::default()
        };
        assert!(cold.validate().is_err());
    }

    #[test]
    fn train_config_defaults_from_toml() {
        let c: TrainConfig =
            toml::from_str("mode = \"mixtext\"\nepochs = 3\ngamma = 0.7\ngamma_m = 1.0\n").unwrap();
        assert_eq!(c, TrainConfig::new(TrainMode::Mixtext, 3));
        assert!(c.validate().is_ok());
        let mut bad = c.clone();
        bad.gamma = 1.5;
        assert!(bad.validate().is_err());
        bad = c;
        bad.labeled_batch = 0;
        assert!(bad.validate().is_err());
    }
}
