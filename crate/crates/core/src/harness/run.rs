use std::fs;
use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{prepare_run, Prepared, RunConfig};
use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::trainer::{evaluate, train, EncodedExample, EpochMetrics, TrainResult, TrainSettings};

/// Fraction of `examples` whose argmax prediction (lowest index on ties)
/// matches the label.
pub fn evaluate_accuracy(model: &Model, examples: &[EncodedExample]) -> Result<f64> {
    evaluate(model, examples).map(|e| e.accuracy)
}

/// The outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub label: String,
    pub config_hash: String,
    pub seed: u64,
    pub test_acc: f64,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    /// Absent when read back from CSV.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub wall_clock_secs: Option<f64>,
}

impl RunRecord {
    pub fn without_timing(&self) -> Self {
        Self {
            wall_clock_secs: None,
            ..self.clone()
        }
    }
}

/// An augmentation that bypassed its primary augmenter.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FallbackNote {
    pub parent: String,
    pub k: usize,
    pub reason: String,
}

/// Enough to reproduce a run: the resolved config plus the hashes and
/// seeds derived from it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub label: String,
    pub seed: u64,
    pub config_hash: String,
    pub settings_hash: String,
    pub split_hash: String,
    pub vocab_size: usize,
    /// Class names in index order.
    pub labels: Vec<String>,
    pub fallbacks: Vec<FallbackNote>,
    pub config: RunConfig,
}

impl RunManifest {
    /// The settings the run trained with.
    pub fn settings(&self) -> TrainSettings {
        self.config.settings(self.vocab_size, self.labels.len())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

pub struct RunOutcome {
    pub record: RunRecord,
    pub manifest: RunManifest,
    pub settings: TrainSettings,
    pub result: TrainResult,
}

pub fn run_experiment(cfg: &RunConfig, label: &str) -> Result<RunOutcome> {
    let start = Instant::now();
    let prepared = prepare_run(cfg)?;
    run_prepared(cfg, label, &prepared, start)
}

/// Trains on already prepared data; `start` marks the beginning of the
/// timed section.
pub fn run_prepared(
    cfg: &RunConfig,
    label: &str,
    prepared: &Prepared,
    start: Instant,
) -> Result<RunOutcome> {
    let settings = cfg.settings(prepared.vocab.len(), prepared.data.num_classes);
    let result = train(&prepared.data, settings.clone())?;
    let test_acc = match result.test {
        Some(t) => t.accuracy,
        None => return Err(Error::Validation("run has no test split".into())),
    };
    let config_hash = cfg.hash();
    let record = RunRecord {
        label: label.to_string(),
        config_hash: config_hash.clone(),
        seed: cfg.seed,
        test_acc,
        best_epoch: result.best_epoch,
        metrics: result.metrics.clone(),
        wall_clock_secs: Some(start.elapsed().as_secs_f64()),
    };
    let manifest = RunManifest {
        label: label.to_string(),
        seed: cfg.seed,
        config_hash,
        settings_hash: settings.hash(),
        split_hash: cfg.split_spec().hash(),
        vocab_size: prepared.vocab.len(),
        labels: prepared.splits.labels.names().to_vec(),
        fallbacks: prepared
            .augmentations
            .iter()
            .filter_map(|a| {
                a.fallback.as_ref().map(|r| FallbackNote {
                    parent: a.parent.clone(),
                    k: a.k,
                    reason: r.clone(),
                })
            })
            .collect(),
        config: cfg.clone(),
    };
    Ok(RunOutcome {
        record,
        manifest,
        settings,
        result,
    })
}
