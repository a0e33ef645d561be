//! A two-class keyword-plus-distractor corpus. Each sentence carries a few
//! class keywords among neutral distractor words; keywords come in synonym
//! clusters so a small labeled sample leaves many of them unseen.

use rand::seq::IndexedRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::Example;
use crate::trainer::SynonymDict;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticTask {
    pub num_classes: usize,
    pub keywords_per_class: usize,
    /// Keywords per synonym cluster.
    pub cluster_size: usize,
    pub distractors: usize,
    pub keywords_per_sentence: usize,
    pub min_distractors: usize,
    pub max_distractors: usize,
    pub seed: u64,
}

impl Default for SyntheticTask {
    fn default() -> Self {
        Self {
            num_classes: 2,
            keywords_per_class: 16,
            cluster_size: 4,
            distractors: 60,
            keywords_per_sentence: 2,
            min_distractors: 2,
            max_distractors: 5,
            seed: 0,
        }
    }
}

impl SyntheticTask {
    pub fn class_name(c: usize) -> String {
        format!("class{c}")
    }

    fn keyword(c: usize, i: usize) -> String {
        format!("c{c}w{i}")
    }

    fn distractor(i: usize) -> String {
        format!("d{i}")
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2
            || self.keywords_per_class == 0
            || self.cluster_size == 0
            || self.distractors == 0
            || self.min_distractors > self.max_distractors
        {
            return Err(Error::Config("invalid synthetic task parameters".into()));
        }
        Ok(())
    }

    /// `per_class` labeled sentences for each class, interleaved by class.
    pub fn generate(&self, per_class: usize) -> Result<Vec<Example>> {
        self.validate()?;
        let mut r = rng::stream(self.seed, &["synthetic"]);
        let distractors: Vec<String> = (0..self.distractors).map(Self::distractor).collect();
        let mut out = Vec::with_capacity(per_class * self.num_classes);
        for i in 0..per_class {
            for c in 0..self.num_classes {
                let mut words: Vec<String> = (0..self.keywords_per_sentence)
                    .map(|_| Self::keyword(c, r.random_range(0..self.keywords_per_class)))
                    .collect();
                let n = r.random_range(self.min_distractors..=self.max_distractors);
                words.extend((0..n).map(|_| distractors.choose(&mut r).expect("nonempty").clone()));
                // keywords land at random positions
                for j in (1..words.len()).rev() {
                    let k = r.random_range(0..=j);
                    words.swap(j, k);
                }
                let name = Self::class_name(c);
                out.push(Example::new(
                    format!("s{c}-{i}"),
                    words.join(" "),
                    Some(&name),
                ));
            }
        }
        Ok(out)
    }

    /// Keyword clusters plus distractor pairs.
    pub fn synonyms(&self) -> SynonymDict {
        let mut groups: Vec<Vec<String>> = Vec::new();
        for c in 0..self.num_classes {
            let words: Vec<String> = (0..self.keywords_per_class)
                .map(|i| Self::keyword(c, i))
                .collect();
            groups.extend(words.chunks(self.cluster_size).map(<[_]>::to_vec));
        }
        let d: Vec<String> = (0..self.distractors).map(Self::distractor).collect();
        groups.extend(d.chunks(2).map(<[_]>::to_vec));
        SynonymDict::from_groups(&groups)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generation_is_seeded_and_balanced() {
        let t = SyntheticTask::default();
        let a = t.generate(30).unwrap();
        assert_eq!(a, t.generate(30).unwrap());
        assert_eq!(a.len(), 60);
        assert_eq!(
            a.iter()
                .filter(|e| e.label.as_deref() == Some("class1"))
                .count(),
            30
        );
        for e in &a {
            let c = &e.label.as_ref().unwrap()[5..];
            let kw = e
                .text
                .split(' ')
                .filter(|w| w.starts_with(&format!("c{c}w")))
                .count();
            assert_eq!(kw, 2, "{}", e.text);
        }
        let other = SyntheticTask { seed: 1, ..t };
        assert_ne!(a, other.generate(30).unwrap());
    }

    #[test]
    fn synonyms_stay_within_class_clusters() {
        let s = SyntheticTask::default().synonyms();
        assert_eq!(s.get("c0w0").unwrap(), &["c0w1", "c0w2", "c0w3"]);
        assert_eq!(s.get("c1w5").unwrap(), &["c1w4", "c1w6", "c1w7"]);
        assert_eq!(s.get("d3").unwrap(), &["d2"]);
    }
}
