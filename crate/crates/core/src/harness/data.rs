use std::fs;
use std::path::Path;

use super::{DataSource, RunConfig};
use crate::error::{Error, Result};
use crate::text::{
    load_corpus, make_splits, write_jsonl, CorpusFormat, Example, LabelSet, SealedLabels,
    SplitManifest, SplitSpec, Splits, Vocab,
};
use crate::trainer::{materialize, AugmentedExample, Augmenter, SynonymDict, TrainData, TrainMode};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const SPLITS_FILE: &str = "splits.json";
pub const SEALED_FILE: &str = "unlabeled_truth.sealed.json";
pub const SYNONYMS_FILE: &str = "synonyms.txt";
pub const AUGMENTATIONS_FILE: &str = "augmentations.jsonl";

/// Splits, vocabulary, augmentations and encoded data for one run.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vocab: Vocab,
    pub splits: Splits,
    pub augmentations: Vec<AugmentedExample>,
    pub data: TrainData,
}

/// Vocabulary over the labeled and unlabeled splits.
pub fn build_vocab(splits: &Splits, min_count: usize) -> Result<Vocab> {
    let visible: Vec<Example> = splits
        .labeled
        .iter()
        .chain(&splits.unlabeled)
        .cloned()
        .collect();
    Vocab::build(&visible, min_count, None)
}

pub fn prepare(
    corpus: &[Example],
    spec: &SplitSpec,
    augmenters: &[Box<dyn Augmenter>],
    k: usize,
    max_len: usize,
) -> Result<Prepared> {
    let splits = make_splits(corpus, spec)?;
    let vocab = build_vocab(&splits, 1)?;
    let augmentations = materialize(&splits.unlabeled, augmenters, k, spec.seed)?;
    let data = TrainData::new(&splits, &augmentations, k, &vocab, max_len)?;
    Ok(Prepared {
        vocab,
        splits,
        augmentations,
        data,
    })
}

/// Splits and vocabulary before augmentation, plus the synonym dictionary
/// the source provides, if any.
#[derive(Debug, Clone)]
pub struct Staged {
    pub splits: Splits,
    pub vocab: Vocab,
    pub spec: SplitSpec,
    pub synonyms: Option<SynonymDict>,
    /// Augmentations stored alongside a prepared directory.
    pub augmentations: Option<Vec<AugmentedExample>>,
}

pub fn stage(cfg: &RunConfig) -> Result<Staged> {
    let d = &cfg.data;
    let mut synonyms = d.synonyms.as_deref().map(SynonymDict::load).transpose()?;
    let corpus = match &d.source {
        DataSource::Synthetic { task, per_class } => {
            let task = super::SyntheticTask {
                seed: cfg.seed,
                ..task.clone()
            };
            synonyms.get_or_insert_with(|| task.synonyms());
            task.generate(*per_class)?
        }
        DataSource::Corpus {
            path,
            format,
            labels,
        } => {
            let format = match format {
                Some(f) => *f,
                None => CorpusFormat::from_path(path).ok_or_else(|| {
                    Error::Config(format!(
                        "cannot infer the corpus format of {}",
                        path.display()
                    ))
                })?,
            };
            load_corpus(path, format, labels.as_deref())?
        }
        DataSource::Prepared { dir } => {
            let mut staged = load_prepared(dir)?;
            if synonyms.is_some() {
                staged.synonyms = synonyms;
            }
            return Ok(staged);
        }
    };
    let spec = cfg.split_spec();
    let splits = make_splits(&corpus, &spec)?;
    let vocab = build_vocab(&splits, d.min_count)?;
    Ok(Staged {
        splits,
        vocab,
        spec,
        synonyms,
        augmentations: None,
    })
}

/// Builds the configured augmenters.
pub fn augmenters(
    cfg: &RunConfig,
    synonyms: Option<&SynonymDict>,
) -> Result<Vec<Box<dyn Augmenter>>> {
    let cache = cfg.cache_dir();
    cfg.augment
        .iter()
        .map(|a| a.build(synonyms, &cache))
        .collect()
}

/// Stages the data and materializes augmentations when the mode uses them.
pub fn prepare_run(cfg: &RunConfig) -> Result<Prepared> {
    cfg.validate()?;
    let staged = stage(cfg)?;
    let k = if cfg.train.mode == TrainMode::Mixtext {
        cfg.guess.k
    } else {
        0
    };
    let augmentations = match (&staged.augmentations, k) {
        (_, 0) => Vec::new(),
        (Some(stored), _) => stored.clone(),
        (None, _) => {
            let augs = augmenters(cfg, staged.synonyms.as_ref())?;
            materialize(&staged.splits.unlabeled, &augs, k, staged.spec.seed)?
        }
    };
    let data = TrainData::new(
        &staged.splits,
        &augmentations,
        k,
        &staged.vocab,
        cfg.data.max_len,
    )?;
    Ok(Prepared {
        vocab: staged.vocab,
        splits: staged.splits,
        augmentations,
        data,
    })
}

/// Writes the vocabulary, split manifest, one JSONL file per split and the
/// sealed unlabeled labels into `dir`.
pub fn save_prepared(dir: &Path, staged: &Staged) -> Result<SplitManifest> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    staged.vocab.save(&dir.join(VOCAB_FILE))?;
    let manifest = SplitManifest::new(&staged.splits, &staged.spec);
    manifest.save(&dir.join(SPLITS_FILE))?;
    let s = &staged.splits;
    for (name, rows) in [
        ("labeled", &s.labeled),
        ("unlabeled", &s.unlabeled),
        ("dev", &s.dev),
        ("test", &s.test),
    ] {
        write_jsonl(&dir.join(format!("{name}.jsonl")), rows)?;
    }
    s.sealed.save(&dir.join(SEALED_FILE))?;
    if let Some(syn) = &staged.synonyms {
        syn.save(&dir.join(SYNONYMS_FILE))?;
    }
    Ok(manifest)
}

pub fn load_prepared(dir: &Path) -> Result<Staged> {
    let manifest = SplitManifest::load(&dir.join(SPLITS_FILE))?;
    let labels = LabelSet::new(manifest.labels.clone())?;
    let read = |name: &str| {
        load_corpus(
            &dir.join(format!("{name}.jsonl")),
            CorpusFormat::Jsonl,
            Some(labels.names()),
        )
    };
    let sealed_path = dir.join(SEALED_FILE);
    let sealed = if sealed_path.exists() {
        SealedLabels::load(&sealed_path)?
    } else {
        SealedLabels::default()
    };
    let splits = Splits {
        labeled: read("labeled")?,
        unlabeled: read("unlabeled")?,
        dev: read("dev")?,
        test: read("test")?,
        labels,
        sealed,
    };
    let syn_path = dir.join(SYNONYMS_FILE);
    let aug_path = dir.join(AUGMENTATIONS_FILE);
    Ok(Staged {
        vocab: Vocab::load(&dir.join(VOCAB_FILE))?,
        spec: manifest.spec,
        synonyms: syn_path
            .exists()
            .then(|| SynonymDict::load(&syn_path))
            .transpose()?,
        augmentations: aug_path
            .exists()
            .then(|| read_augmentations(&aug_path))
            .transpose()?,
        splits,
    })
}

pub fn write_augmentations(path: &Path, augs: &[AugmentedExample]) -> Result<()> {
    let mut text = String::new();
    for a in augs {
        text.push_str(&serde_json::to_string(a)?);
        text.push('\n');
    }
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn read_augmentations(path: &Path) -> Result<Vec<AugmentedExample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prepared_directory_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = RunConfig::smoke(4);
        let staged = stage(&cfg).unwrap();
        save_prepared(dir.path(), &staged).unwrap();
        let back = load_prepared(dir.path()).unwrap();
        assert_eq!(back.splits, staged.splits);
        assert_eq!(back.vocab, staged.vocab);
        assert_eq!(back.spec, staged.spec);
        assert_eq!(back.synonyms, staged.synonyms);
        assert!(back.augmentations.is_none());

        let from_dir = RunConfig {
            data: super::super::DataConfig {
                source: DataSource::Prepared {
                    dir: dir.path().into(),
                },
                ..cfg.data.clone()
            },
            ..cfg.clone()
        };
        let a = prepare_run(&cfg).unwrap();
        let b = prepare_run(&from_dir).unwrap();
        assert_eq!(a.augmentations, b.augmentations);
        assert_eq!(a.data.unlabeled, b.data.unlabeled);

        let p = dir.path().join(AUGMENTATIONS_FILE);
        write_augmentations(&p, &a.augmentations).unwrap();
        assert_eq!(read_augmentations(&p).unwrap(), a.augmentations);
    }

    #[test]
    fn supervised_modes_skip_augmentation() {
        let mut cfg = RunConfig::smoke(0);
        cfg.train.mode = TrainMode::Tmix;
        let p = prepare_run(&cfg).unwrap();
        assert!(p.augmentations.is_empty());
        assert!(p.data.augmented.iter().all(Vec::is_empty));
    }

    #[test]
    fn corpus_source_needs_a_known_format() {
        let mut cfg = RunConfig::smoke(0);
        cfg.data.source = DataSource::Corpus {
            path: "data.txt".into(),
            format: None,
            labels: None,
        };
        assert!(matches!(stage(&cfg), Err(Error::Config(_))));
    }
}
