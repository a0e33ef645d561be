use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::{Example, LabelSet};
use crate::error::{Error, Result};
use crate::rng;

/// Where the test split comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestSource {
    /// Every labeled example not drawn into another split.
    Remaining,
    /// A fixed number per class, drawn after the other splits.
    PerClass(usize),
    /// Supplied separately by the caller; nothing is drawn.
    External,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub labeled_per_class: usize,
    pub unlabeled_per_class: usize,
    pub dev_per_class: usize,
    pub test: TestSource,
    pub seed: u64,
}

impl SplitSpec {
    pub fn hash(&self) -> String {
        rng::hash_hex(&serde_json::to_vec(self).expect("split spec serializes"))
    }
}

/// True labels of the unlabeled split, kept apart from training data so guess
/// quality can be audited.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealedLabels(BTreeMap<String, String>);

impl SealedLabels {
    pub fn get(&self, id: &str) -> Option<&str> {
        self.0.get(id).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub labels: LabelSet,
    pub labeled: Vec<Example>,
    /// Labels stripped.
    pub unlabeled: Vec<Example>,
    pub dev: Vec<Example>,
    pub test: Vec<Example>,
    pub sealed: SealedLabels,
}

/// Per-class stratified sampling. Dev and fixed-size test splits are drawn
/// first, then labeled, then unlabeled, so growing one budget leaves the
/// earlier splits unchanged. Corpus examples without a label join the
/// unlabeled split.
pub fn make_splits(corpus: &[Example], spec: &SplitSpec) -> Result<Splits> {
    let labels = LabelSet::from_examples(corpus)?;
    let mut by_class: Vec<Vec<&Example>> = vec![Vec::new(); labels.len()];
    for ex in corpus {
        if let Some(l) = &ex.label {
            by_class[labels.index_of(l)?].push(ex);
        }
    }

    let per_test = match spec.test {
        TestSource::PerClass(n) => n,
        _ => 0,
    };
    let needed = spec.labeled_per_class + spec.unlabeled_per_class + spec.dev_per_class + per_test;
    let mut rng = rng::stream(spec.seed, &["splits"]);
    let mut out = Splits {
        labels: labels.clone(),
        labeled: Vec::new(),
        unlabeled: Vec::new(),
        dev: Vec::new(),
        test: Vec::new(),
        sealed: SealedLabels::default(),
    };
    for (class, members) in labels.names().iter().zip(&mut by_class) {
        if members.len() < needed {
            return Err(Error::Validation(format!(
                "class {class:?} has {} examples but the split needs {needed}",
                members.len()
            )));
        }
        members.shuffle(&mut rng);
        let mut it = members.iter().copied();
        out.dev
            .extend(it.by_ref().take(spec.dev_per_class).cloned());
        if let TestSource::PerClass(n) = spec.test {
            out.test.extend(it.by_ref().take(n).cloned());
        }
        out.labeled
            .extend(it.by_ref().take(spec.labeled_per_class).cloned());
        for ex in it.by_ref().take(spec.unlabeled_per_class) {
            out.sealed.0.insert(ex.id.clone(), class.clone());
            out.unlabeled.push(Example {
                label: None,
                ..ex.clone()
            });
        }
        if spec.test == TestSource::Remaining {
            out.test.extend(it.cloned());
        }
    }
    out.unlabeled
        .extend(corpus.iter().filter(|e| e.label.is_none()).cloned());
    Ok(out)
}

/// Ids per split plus the seed and spec hash that produced them.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub seed: u64,
    pub spec_hash: String,
    pub spec: SplitSpec,
    pub labels: Vec<String>,
    pub labeled: Vec<String>,
    pub unlabeled: Vec<String>,
    pub dev: Vec<String>,
    pub test: Vec<String>,
}

impl SplitManifest {
    pub fn new(splits: &Splits, spec: &SplitSpec) -> Self {
        let ids = |v: &[Example]| v.iter().map(|e| e.id.clone()).collect();
        Self {
            seed: spec.seed,
            spec_hash: spec.hash(),
            spec: spec.clone(),
            labels: splits.labels.names().to_vec(),
            labeled: ids(&splits.labeled),
            unlabeled: ids(&splits.unlabeled),
            dev: ids(&splits.dev),
            test: ids(&splits.test),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Ok(serde_json::from_slice(&bytes)?)
    }
}
