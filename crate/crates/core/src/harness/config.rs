use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::SyntheticTask;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::rng;
use crate::text::{CorpusFormat, SplitSpec, TestSource};
use crate::tmix::{MixConfig, MixLayers};
use crate::trainer::{AugmenterSpec, GuessConfig, TrainConfig, TrainMode, TrainSettings};

/// Where a run's examples come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic {
        #[serde(default)]
        task: SyntheticTask,
        per_class: usize,
    },
    Corpus {
        path: PathBuf,
        /// Guessed from the extension when absent.
        #[serde(default)]
        format: Option<CorpusFormat>,
        #[serde(default)]
        labels: Option<Vec<String>>,
    },
    /// Output of `prepare`; the split budgets below are not used.
    Prepared { dir: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub source: DataSource,
    pub labeled_per_class: usize,
    pub unlabeled_per_class: usize,
    pub dev_per_class: usize,
    pub test: TestSource,
    pub max_len: usize,
    #[serde(default = "one")]
    pub min_count: usize,
    /// Synonym groups for the synonym augmenter, one group per line.
    #[serde(default)]
    pub synonyms: Option<PathBuf>,
}

fn one() -> usize {
    1
}

/// Everything one experiment needs. The top-level seed drives every random
/// stream: splits, synthetic corpus, augmentation, initialization, batches
/// and mixing.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub data: DataConfig,
    pub encoder: EncoderConfig,
    pub mix: MixConfig,
    pub train: TrainConfig,
    pub guess: GuessConfig,
    #[serde(default)]
    pub augment: Vec<AugmenterSpec>,
    #[serde(default)]
    pub cache_dir: Option<PathBuf>,
}

impl RunConfig {
    /// The desk-scale synthetic task: 10 labeled, 200 unlabeled and 200 test
    /// sentences per class on a four-layer, 32-wide encoder.
    pub fn desk(seed: u64) -> Self {
        let mut train = TrainConfig::new(TrainMode::Mixtext, 30);
        train.steps_per_epoch = Some(10);
        train.lr_encoder = 1e-3;
        train.warmup_epochs = 10;
        Self {
            seed,
            data: DataConfig {
                source: DataSource::Synthetic {
                    task: SyntheticTask::default(),
                    per_class: 460,
                },
                labeled_per_class: 10,
                unlabeled_per_class: 200,
                dev_per_class: 50,
                test: TestSource::PerClass(200),
                max_len: 16,
                min_count: 1,
                synonyms: None,
            },
            encoder: EncoderConfig {
                d_model: 32,
                ff_width: 64,
                max_len: 16,
                ..EncoderConfig::desk(0, 0)
            },
            mix: MixConfig {
                alpha: 16.0,
                mix_layers: MixLayers::default_for_depth(4),
                mix_seed: 0,
                force_lambda: None,
            },
            train,
            guess: GuessConfig::default(),
            augment: vec![
                AugmenterSpec::Synonym {
                    prob: 0.5,
                    dictionary: None,
                },
                AugmenterSpec::Synonym {
                    prob: 0.3,
                    dictionary: None,
                },
            ],
            cache_dir: None,
        }
    }

    /// A seconds-long version of the desk task.
    pub fn smoke(seed: u64) -> Self {
        let mut c = Self::desk(seed);
        c.data.source = DataSource::Synthetic {
            task: SyntheticTask::default(),
            per_class: 80,
        };
        c.data.unlabeled_per_class = 30;
        c.data.dev_per_class = 20;
        c.data.test = TestSource::PerClass(20);
        c.encoder.num_layers = 2;
        c.encoder.d_model = 16;
        c.encoder.ff_width = 32;
        c.encoder.head_hidden = 32;
        c.mix.mix_layers = MixLayers::default_for_depth(2);
        c.train.epochs = 8;
        c.train.steps_per_epoch = Some(20);
        c.train.warmup_epochs = 2;
        c
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_toml()?).map_err(|e| Error::io(path, e))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn with_seed(&self, seed: u64) -> Self {
        Self {
            seed,
            ..self.clone()
        }
    }

    pub fn split_spec(&self) -> SplitSpec {
        SplitSpec {
            labeled_per_class: self.data.labeled_per_class,
            unlabeled_per_class: self.data.unlabeled_per_class,
            dev_per_class: self.data.dev_per_class,
            test: self.data.test,
            seed: self.seed,
        }
    }

    /// Training settings with the seed applied and the vocabulary and class
    /// counts filled in.
    pub fn settings(&self, vocab_size: usize, num_classes: usize) -> TrainSettings {
        let mut encoder = self.encoder.clone();
        encoder.vocab_size = vocab_size;
        encoder.num_classes = num_classes;
        encoder.seed = self.seed;
        let mut train = self.train.clone();
        train.seed = self.seed;
        TrainSettings {
            encoder,
            mix: self.mix.clone(),
            train,
            guess: self.guess.clone(),
        }
    }

    /// Checks everything that does not depend on the data.
    pub fn validate(&self) -> Result<()> {
        if self.encoder.max_len != self.data.max_len {
            return Err(Error::Config(format!(
                "encoder.max_len {} differs from data.max_len {}",
                self.encoder.max_len, self.data.max_len
            )));
        }
        if self.train.mode == TrainMode::Mixtext && self.guess.k > 0 && self.augment.is_empty() {
            return Err(Error::Config(
                "guess.k > 0 but no augmenter is configured".into(),
            ));
        }
        self.mix.validate(self.encoder.num_layers)?;
        self.train.validate()?;
        self.guess.validate()
    }

    pub fn hash(&self) -> String {
        rng::hash_hex(&serde_json::to_vec(self).expect("run config serializes"))
    }

    pub fn cache_dir(&self) -> PathBuf {
        self.cache_dir
            .clone()
            .unwrap_or_else(|| PathBuf::from("cache"))
    }
}
