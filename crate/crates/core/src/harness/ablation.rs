use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{run_experiment, RunConfig, RunRecord};
use crate::error::{Error, Result};
use crate::tmix::MixLayers;
use crate::trainer::TrainMode;

/// A part of the full method that an ablation cell removes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Component {
    /// Guess from the original unlabeled text only.
    WeightedAverage,
    /// Train directly on superset rows without interpolation.
    Tmix,
    /// Interpolate labeled rows only.
    UnlabeledData,
    /// Plain supervised training.
    All,
}

impl Component {
    pub const ALL: [Component; 4] = [
        Self::WeightedAverage,
        Self::Tmix,
        Self::UnlabeledData,
        Self::All,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::WeightedAverage => "weighted_average",
            Self::Tmix => "tmix",
            Self::UnlabeledData => "unlabeled_data",
            Self::All => "all",
        }
    }

    /// `base` with this component removed.
    pub fn strip(self, base: &RunConfig) -> RunConfig {
        let mut c = base.clone();
        match self {
            Self::WeightedAverage => c.guess.w_aug = Some(vec![0.0; c.guess.k]),
            Self::Tmix => c.mix.mix_layers = MixLayers::Off,
            Self::UnlabeledData => c.train.mode = TrainMode::Tmix,
            Self::All => c.train.mode = TrainMode::Supervised,
        }
        c
    }
}

impl fmt::Display for Component {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Component {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown component {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    MixLayerSweep,
    StripComponent,
    LabeledSweep,
    UnlabeledSweep,
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mix_layer_sweep" => Ok(Self::MixLayerSweep),
            "strip_component" => Ok(Self::StripComponent),
            "labeled_sweep" => Ok(Self::LabeledSweep),
            "unlabeled_sweep" => Ok(Self::UnlabeledSweep),
            other => Err(Error::Config(format!("unknown ablation mode {other:?}"))),
        }
    }
}

/// The varied axis and its grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", content = "grid", rename_all = "snake_case")]
pub enum Sweep {
    MixLayerSweep(Vec<MixLayers>),
    StripComponent(Vec<Component>),
    LabeledSweep(Vec<usize>),
    UnlabeledSweep(Vec<usize>),
}

impl Sweep {
    /// No mixing, the lowest layers, then the default deep set.
    pub fn default_for(mode: AblationMode, base: &RunConfig) -> Self {
        match mode {
            AblationMode::MixLayerSweep => Self::MixLayerSweep(vec![
                MixLayers::Off,
                MixLayers::Set(vec![0, 1]),
                MixLayers::default_for_depth(base.encoder.num_layers),
            ]),
            AblationMode::StripComponent => Self::StripComponent(Component::ALL.to_vec()),
            AblationMode::LabeledSweep => Self::LabeledSweep(vec![2, 5, 10]),
            AblationMode::UnlabeledSweep => Self::UnlabeledSweep(vec![0, 50, 200]),
        }
    }

    fn len(&self) -> usize {
        match self {
            Self::MixLayerSweep(g) => g.len(),
            Self::StripComponent(g) => g.len(),
            Self::LabeledSweep(g) | Self::UnlabeledSweep(g) => g.len(),
        }
    }

    /// Label and config of grid point `i`.
    fn point(&self, i: usize, base: &RunConfig) -> (String, RunConfig) {
        let mut c = base.clone();
        match self {
            Self::MixLayerSweep(g) => {
                c.mix.mix_layers = g[i].clone();
                (format!("mix={}", g[i]), c)
            }
            Self::StripComponent(g) => (format!("strip={}", g[i]), g[i].strip(base)),
            Self::LabeledSweep(g) => {
                c.data.labeled_per_class = g[i];
                (format!("labeled={}", g[i]), c)
            }
            Self::UnlabeledSweep(g) => {
                c.data.unlabeled_per_class = g[i];
                (format!("unlabeled={}", g[i]), c)
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationSpec {
    pub sweep: Sweep,
    #[serde(default = "three")]
    pub repetitions: usize,
    pub base: RunConfig,
}

fn three() -> usize {
    3
}

/// One (grid point, repetition) run.
#[derive(Debug, Clone, PartialEq)]
pub struct Cell {
    pub label: String,
    pub repetition: usize,
    pub config: RunConfig,
}

impl AblationSpec {
    pub fn new(mode: AblationMode, repetitions: usize, base: RunConfig) -> Self {
        Self {
            sweep: Sweep::default_for(mode, &base),
            repetitions,
            base,
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        if self.repetitions == 0 {
            return Err(Error::Config("repetitions must be at least 1".into()));
        }
        if self.sweep.len() == 0 {
            return Err(Error::Config("ablation grid is empty".into()));
        }
        Ok(())
    }

    /// Grid-major cells; repetition `r` runs with seed `base.seed + r`.
    pub fn cells(&self) -> Result<Vec<Cell>> {
        self.validate()?;
        let mut out = Vec::with_capacity(self.sweep.len() * self.repetitions);
        for i in 0..self.sweep.len() {
            let (label, config) = self.sweep.point(i, &self.base);
            config.validate()?;
            for r in 0..self.repetitions {
                out.push(Cell {
                    label: label.clone(),
                    repetition: r,
                    config: config.with_seed(self.base.seed + r as u64),
                });
            }
        }
        Ok(out)
    }
}

/// Runs every cell, concurrently where threads allow; records come back in
/// cell order.
pub fn run_ablation(spec: &AblationSpec) -> Result<Vec<RunRecord>> {
    spec.cells()?
        .par_iter()
        .map(|c| run_experiment(&c.config, &c.label).map(|o| o.record))
        .collect()
}

/// Mean and sample standard deviation of test accuracy per label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellSummary {
    pub label: String,
    pub runs: usize,
    pub mean_test_acc: f64,
    pub std_test_acc: f64,
}

/// Groups by label in first-seen order.
pub fn summarize(records: &[RunRecord]) -> Vec<CellSummary> {
    let mut labels: Vec<&str> = Vec::new();
    for r in records {
        if !labels.contains(&r.label.as_str()) {
            labels.push(&r.label);
        }
    }
    labels
        .into_iter()
        .map(|label| {
            let accs: Vec<f64> = records
                .iter()
                .filter(|r| r.label == label)
                .map(|r| r.test_acc)
                .collect();
            let (mean, std) = mean_std(&accs);
            CellSummary {
                label: label.to_string(),
                runs: accs.len(),
                mean_test_acc: mean,
                std_test_acc: std,
            }
        })
        .collect()
}

/// Mean and sample (n - 1) standard deviation; the deviation of a single
/// value is 0.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, acc: f64) -> RunRecord {
        RunRecord {
            label: label.into(),
            config_hash: "h".into(),
            seed: 0,
            test_acc: acc,
            best_epoch: 1,
            metrics: Vec::new(),
            wall_clock_secs: None,
        }
    }

    #[test]
    fn strip_semantics() {
        let base = RunConfig::desk(0);
        assert_eq!(
            Component::WeightedAverage.strip(&base).guess.w_aug,
            Some(vec![0.0, 0.0])
        );
        assert_eq!(Component::Tmix.strip(&base).mix.mix_layers, MixLayers::Off);
        assert_eq!(
            Component::UnlabeledData.strip(&base).train.mode,
            TrainMode::Tmix
        );
        assert_eq!(
            Component::All.strip(&base).train.mode,
            TrainMode::Supervised
        );
        for c in Component::ALL {
            assert_eq!(c.as_str().parse::<Component>().unwrap(), c);
            c.strip(&base).validate().unwrap();
        }
        assert!(matches!(
            "entropy".parse::<Component>(),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn cells_are_grid_major_with_offset_seeds() {
        let spec = AblationSpec::new(AblationMode::StripComponent, 3, RunConfig::desk(10));
        let cells = spec.cells().unwrap();
        assert_eq!(cells.len(), 12);
        assert_eq!(cells[0].label, "strip=weighted_average");
        assert_eq!(cells[11].label, "strip=all");
        let seeds: Vec<u64> = cells[..3].iter().map(|c| c.config.seed).collect();
        assert_eq!(seeds, [10, 11, 12]);
    }

    #[test]
    fn invalid_specs_are_config_errors() {
        let mut spec = AblationSpec::new(AblationMode::LabeledSweep, 0, RunConfig::smoke(0));
        assert!(matches!(spec.cells(), Err(Error::Config(_))));
        spec.repetitions = 1;
        spec.sweep = Sweep::UnlabeledSweep(Vec::new());
        assert!(matches!(spec.cells(), Err(Error::Config(_))));
        spec.sweep = Sweep::MixLayerSweep(vec![MixLayers::Set(vec![9])]);
        assert!(matches!(spec.cells(), Err(Error::Config(_))));
    }

    #[test]
    fn spec_file_round_trip() {
        let spec = AblationSpec::new(AblationMode::MixLayerSweep, 2, RunConfig::smoke(1));
        let text = toml::to_string(&spec).unwrap();
        assert!(text.contains("mode = \"mix_layer_sweep\""));
        assert_eq!(toml::from_str::<AblationSpec>(&text).unwrap(), spec);
        let bad = text.replace("mix_layer_sweep", "dropout_sweep");
        assert!(toml::from_str::<AblationSpec>(&bad).is_err());
    }

    #[test]
    fn summary_statistics() {
        let recs = [
            record("a", 0.5),
            record("b", 1.0),
            record("a", 0.7),
            record("a", 0.6),
        ];
        let s = summarize(&recs);
        assert_eq!(s.len(), 2);
        assert_eq!((s[0].label.as_str(), s[0].runs), ("a", 3));
        assert!((s[0].mean_test_acc - 0.6).abs() < 1e-12);
        assert!((s[0].std_test_acc - 0.1).abs() < 1e-12);
        assert_eq!(s[1].std_test_acc, 0.0);
    }

    #[test]
    fn small_strip_ablation_runs_every_cell() {
        let mut base = RunConfig::smoke(0);
        base.train.epochs = 3;
        base.train.warmup_epochs = 1;
        let spec = AblationSpec {
            sweep: Sweep::StripComponent(vec![Component::UnlabeledData, Component::All]),
            repetitions: 2,
            base,
        };
        let recs = run_ablation(&spec).unwrap();
        let labels: Vec<&str> = recs.iter().map(|r| r.label.as_str()).collect();
        assert_eq!(
            labels,
            [
                "strip=unlabeled_data",
                "strip=unlabeled_data",
                "strip=all",
                "strip=all"
            ]
        );
        assert_eq!((recs[0].seed, recs[1].seed), (0, 1));
        assert!(recs.iter().all(|r| (0.0..=1.0).contains(&r.test_acc)));
    }
}
