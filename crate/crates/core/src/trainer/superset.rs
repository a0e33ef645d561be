use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::TokenSeq;
use crate::tmix::ProbLabel;

/// An encoded example; `label` is a class index when known.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedExample {
    pub id: String,
    pub seq: TokenSeq,
    pub label: Option<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedRow {
    pub parent: String,
    pub k: usize,
    pub seq: TokenSeq,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Labeled,
    Unlabeled,
    Augmented,
}

/// Rows of `X_l ∪ X_u ∪ X_a` with their (true or guessed) labels.
#[derive(Debug, Clone, PartialEq)]
pub struct SupersetBatch {
    pub ids: Vec<String>,
    pub inputs: Vec<TokenSeq>,
    pub labels: Vec<ProbLabel>,
    pub origin: Vec<Origin>,
}

impl SupersetBatch {
    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }
}

/// Labeled rows get one-hot labels; unlabeled rows and their augmentations
/// share the parent's guess.
pub fn build_superset(
    labeled: &[&EncodedExample],
    unlabeled: &[&EncodedExample],
    augmented: &[&AugmentedRow],
    guesses: &HashMap<&str, ProbLabel>,
    num_classes: usize,
) -> Result<SupersetBatch> {
    let n = labeled.len() + unlabeled.len() + augmented.len();
    let mut out = SupersetBatch {
        ids: Vec::with_capacity(n),
        inputs: Vec::with_capacity(n),
        labels: Vec::with_capacity(n),
        origin: Vec::with_capacity(n),
    };
    let guess = |id: &str| {
        guesses
            .get(id)
            .cloned()
            .ok_or_else(|| Error::Contract(format!("no guessed label for {id:?}")))
    };
    for ex in labeled {
        let class = ex
            .label
            .ok_or_else(|| Error::Contract(format!("labeled row {:?} has no label", ex.id)))?;
        out.ids.push(ex.id.clone());
        out.inputs.push(ex.seq.clone());
        out.labels.push(ProbLabel::one_hot(class, num_classes)?);
        out.origin.push(Origin::Labeled);
    }
    for ex in unlabeled {
        out.ids.push(ex.id.clone());
        out.inputs.push(ex.seq.clone());
        out.labels.push(guess(&ex.id)?);
        out.origin.push(Origin::Unlabeled);
    }
    for a in augmented {
        out.ids.push(format!("{}#{}", a.parent, a.k));
        out.inputs.push(a.seq.clone());
        out.labels.push(guess(&a.parent)?);
        out.origin.push(Origin::Augmented);
    }
    Ok(out)
}

/// Epoch-style sampling without replacement: a fresh shuffle whenever the
/// current order is used up.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    order: Vec<usize>,
    pos: usize,
    batch: usize,
    rng: ChaCha8Rng,
}

impl BatchSampler {
    pub fn new(n: usize, batch: usize, rng: ChaCha8Rng) -> Self {
        Self {
            order: (0..n).collect(),
            pos: n,
            batch,
            rng,
        }
    }

    pub fn next_batch(&mut self) -> Vec<usize> {
        if self.order.is_empty() {
            return Vec::new();
        }
        if self.pos >= self.order.len() {
            self.order.shuffle(&mut self.rng);
            self.pos = 0;
        }
        let end = (self.pos + self.batch).min(self.order.len());
        let out = self.order[self.pos..end].to_vec();
        self.pos = end;
        out
    }
}
