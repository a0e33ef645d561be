//! Paraphrase-style augmentation of unlabeled text: local token-level
//! augmenters and an optional back-translation client with an on-disk cache.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Duration;

use rand::seq::IndexedRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng;
use crate::text::Example;

/// One augmentation of an unlabeled example.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedExample {
    pub parent: String,
    /// 1-based augmentation index.
    pub k: usize,
    pub text: String,
    pub provenance: String,
    /// Why the primary augmenter was bypassed, if it was.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Augmented {
    pub text: String,
    pub provenance: String,
    pub fallback: Option<String>,
}

pub trait Augmenter: Send + Sync {
    fn name(&self) -> String;
    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented>;
}

fn words(text: &str) -> Vec<&str> {
    text.split_whitespace().collect()
}

fn local(name: String, text: String) -> Augmented {
    Augmented {
        text,
        provenance: name,
        fallback: None,
    }
}

/// Word → interchangeable alternatives. Lookups are lowercase.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SynonymDict(BTreeMap<String, Vec<String>>);

impl SynonymDict {
    /// Every word in a group becomes a synonym of every other.
    pub fn from_groups<S: AsRef<str>>(groups: &[Vec<S>]) -> Self {
        let mut map: BTreeMap<String, Vec<String>> = BTreeMap::new();
        for g in groups {
            for w in g {
                let others = g
                    .iter()
                    .map(|o| o.as_ref().to_lowercase())
                    .filter(|o| *o != w.as_ref().to_lowercase());
                map.entry(w.as_ref().to_lowercase())
                    .or_default()
                    .extend(others);
            }
        }
        for v in map.values_mut() {
            v.sort();
            v.dedup();
        }
        Self(map)
    }

    /// One group per line, words separated by whitespace.
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let groups: Vec<Vec<&str>> = text
            .lines()
            .map(|l| l.split_whitespace().collect::<Vec<_>>())
            .filter(|g| g.len() > 1)
            .collect();
        Ok(Self::from_groups(&groups))
    }

    /// Writes each group once, in the format `load` reads.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut groups: BTreeSet<Vec<&str>> = BTreeSet::new();
        for (w, others) in &self.0 {
            let mut g: Vec<&str> = others.iter().map(String::as_str).collect();
            g.push(w);
            g.sort_unstable();
            groups.insert(g);
        }
        let text: String = groups.iter().map(|g| g.join(" ") + "\n").collect();
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn get(&self, word: &str) -> Option<&[String]> {
        self.0.get(&word.to_lowercase()).map(Vec::as_slice)
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Replaces each word that has synonyms with probability `prob`.
#[derive(Debug, Clone)]
pub struct SynonymReplace {
    pub dict: SynonymDict,
    pub prob: f64,
}

impl Augmenter for SynonymReplace {
    fn name(&self) -> String {
        format!("synonym(p={})", self.prob)
    }

    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented> {
        let out: Vec<String> = words(text)
            .into_iter()
            .map(|w| match self.dict.get(w) {
                Some(alts) if !alts.is_empty() && rng.random::<f64>() < self.prob => {
                    alts.choose(rng).expect("nonempty").clone()
                }
                _ => w.to_string(),
            })
            .collect();
        Ok(local(self.name(), out.join(" ")))
    }
}

/// Swaps the words at positions `i` and `j`.
pub fn swap_tokens(text: &str, i: usize, j: usize) -> Result<String> {
    let mut w = words(text);
    let n = w.len();
    if i >= n || j >= n {
        return Err(Error::Index {
            index: i.max(j),
            size: n,
        });
    }
    w.swap(i, j);
    Ok(w.join(" "))
}

/// `swaps` random transpositions of word positions.
#[derive(Debug, Clone)]
pub struct RandomSwap {
    pub swaps: usize,
}

impl Augmenter for RandomSwap {
    fn name(&self) -> String {
        format!("swap(n={})", self.swaps)
    }

    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented> {
        let mut w = words(text);
        if w.len() > 1 {
            for _ in 0..self.swaps {
                let i = rng.random_range(0..w.len());
                let j = rng.random_range(0..w.len());
                w.swap(i, j);
            }
        }
        Ok(local(self.name(), w.join(" ")))
    }
}

/// Drops each word with probability `prob`, keeping at least one.
#[derive(Debug, Clone)]
pub struct RandomDeletion {
    pub prob: f64,
}

impl Augmenter for RandomDeletion {
    fn name(&self) -> String {
        format!("delete(p={})", self.prob)
    }

    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented> {
        let w = words(text);
        if self.prob <= 0.0 || w.is_empty() {
            return Ok(local(self.name(), w.join(" ")));
        }
        let mut kept: Vec<&str> = w
            .iter()
            .copied()
            .filter(|_| rng.random::<f64>() >= self.prob)
            .collect();
        if kept.is_empty() {
            kept.push(w[rng.random_range(0..w.len())]);
        }
        Ok(local(self.name(), kept.join(" ")))
    }
}

/// Applies each augmenter in turn.
pub struct Chain(pub Vec<Box<dyn Augmenter>>);

impl Augmenter for Chain {
    fn name(&self) -> String {
        let parts: Vec<String> = self.0.iter().map(|a| a.name()).collect();
        parts.join("+")
    }

    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented> {
        let mut current = text.to_string();
        for a in &self.0 {
            current = a.augment(&current, rng)?.text;
        }
        Ok(local(self.name(), current))
    }
}

/// `<dir>/<route>/<sha256(text)>.txt`.
#[derive(Debug, Clone)]
pub struct AugmentCache {
    dir: PathBuf,
}

impl AugmentCache {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        Self { dir: dir.into() }
    }

    pub fn path_for(&self, route: &str, text: &str) -> PathBuf {
        self.dir
            .join(route)
            .join(format!("{}.txt", rng::hash_hex(text.as_bytes())))
    }

    pub fn get(&self, route: &str, text: &str) -> Option<String> {
        fs::read_to_string(self.path_for(route, text)).ok()
    }

    pub fn put(&self, route: &str, text: &str, translated: &str) -> Result<()> {
        let path = self.path_for(route, text);
        let parent = path.parent().expect("cache path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        fs::write(&path, translated).map_err(|e| Error::io(&path, e))
    }
}

#[derive(Serialize)]
struct TranslateRequest<'a> {
    text: &'a str,
    route: &'a str,
}

#[derive(Deserialize)]
struct TranslateResponse {
    text: String,
}

/// Round-trip translation through an external service:
/// `POST {"text", "route"}` → `{"text"}`. Results are cached; on any
/// failure the local fallback is used and the reason recorded.
pub struct BackTranslator {
    pub endpoint: Option<String>,
    pub route: String,
    pub cache: AugmentCache,
    pub timeout: Duration,
    pub fallback: Box<dyn Augmenter>,
}

impl BackTranslator {
    fn request(&self, endpoint: &str, text: &str) -> std::result::Result<String, String> {
        let agent: ureq::Agent = ureq::Agent::config_builder()
            .timeout_global(Some(self.timeout))
            .build()
            .into();
        let body = serde_json::to_string(&TranslateRequest {
            text,
            route: &self.route,
        })
        .map_err(|e| e.to_string())?;
        let mut resp = agent
            .post(endpoint)
            .header("Content-Type", "application/json")
            .send(body)
            .map_err(|e| e.to_string())?;
        let raw = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| e.to_string())?;
        let parsed: TranslateResponse = serde_json::from_str(&raw).map_err(|e| e.to_string())?;
        if parsed.text.trim().is_empty() {
            return Err("empty translation".into());
        }
        Ok(parsed.text)
    }
}

impl Augmenter for BackTranslator {
    fn name(&self) -> String {
        format!("backtranslate({})", self.route)
    }

    fn augment(&self, text: &str, rng: &mut ChaCha8Rng) -> Result<Augmented> {
        if let Some(hit) = self.cache.get(&self.route, text) {
            return Ok(local(self.name(), hit));
        }
        let reason = match &self.endpoint {
            None => "no endpoint configured and no cache entry".to_string(),
            Some(ep) => match self.request(ep, text) {
                Ok(out) => {
                    self.cache.put(&self.route, text, &out)?;
                    return Ok(local(self.name(), out));
                }
                Err(e) => e,
            },
        };
        let fb = self.fallback.augment(text, rng)?;
        Ok(Augmented {
            text: fb.text,
            provenance: fb.provenance,
            fallback: Some(format!("{}: {reason}", self.name())),
        })
    }
}

/// Augmenter settings as they appear in a run config.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AugmenterSpec {
    /// `dictionary` is a synonym-group file; without it the task's own
    /// dictionary is used.
    Synonym {
        prob: f64,
        #[serde(default)]
        dictionary: Option<PathBuf>,
    },
    Swap {
        swaps: usize,
    },
    Delete {
        prob: f64,
    },
    Chain {
        steps: Vec<AugmenterSpec>,
    },
    BackTranslate {
        #[serde(default)]
        endpoint: Option<String>,
        route: String,
        #[serde(default = "default_timeout")]
        timeout_secs: u64,
        fallback: Box<AugmenterSpec>,
    },
}

fn default_timeout() -> u64 {
    10
}

impl AugmenterSpec {
    pub fn build(
        &self,
        synonyms: Option<&SynonymDict>,
        cache_dir: &Path,
    ) -> Result<Box<dyn Augmenter>> {
        Ok(match self {
            Self::Synonym { prob, dictionary } => {
                check_prob(*prob)?;
                let dict = match (dictionary, synonyms) {
                    (Some(p), _) => SynonymDict::load(p)?,
                    (None, Some(d)) => d.clone(),
                    (None, None) => {
                        return Err(Error::Config("synonym augmenter needs a dictionary".into()))
                    }
                };
                Box::new(SynonymReplace { dict, prob: *prob })
            }
            Self::Swap { swaps } => Box::new(RandomSwap { swaps: *swaps }),
            Self::Delete { prob } => {
                check_prob(*prob)?;
                Box::new(RandomDeletion { prob: *prob })
            }
            Self::Chain { steps } => Box::new(Chain(
                steps
                    .iter()
                    .map(|s| s.build(synonyms, cache_dir))
                    .collect::<Result<_>>()?,
            )),
            Self::BackTranslate {
                endpoint,
                route,
                timeout_secs,
                fallback,
            } => {
                if route.is_empty() || route.contains(['/', '\\']) {
                    return Err(Error::Config(format!(
                        "invalid translation route {route:?}"
                    )));
                }
                Box::new(BackTranslator {
                    endpoint: endpoint.clone(),
                    route: route.clone(),
                    cache: AugmentCache::new(cache_dir),
                    timeout: Duration::from_secs(*timeout_secs),
                    fallback: fallback.build(synonyms, cache_dir)?,
                })
            }
        })
    }
}

fn check_prob(p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(Error::Config(format!("probability {p} not in [0, 1]")))
    }
}

/// Augmentation `k` of `example`, seeded by `(seed, id, k)`.
pub fn augment(
    example: &Example,
    k: usize,
    augmenter: &dyn Augmenter,
    seed: u64,
) -> Result<AugmentedExample> {
    if k == 0 {
        return Err(Error::Augment("augmentation index starts at 1".into()));
    }
    let mut r = rng::stream(seed, &["augment", &example.id, &k.to_string()]);
    let out = augmenter.augment(&example.text, &mut r)?;
    Ok(AugmentedExample {
        parent: example.id.clone(),
        k,
        text: out.text,
        provenance: out.provenance,
        fallback: out.fallback,
    })
}

/// `k` augmentations of every example, augmentation `k` using
/// `augmenters[(k - 1) % len]`. Ordered by example, then `k`.
pub fn materialize(
    examples: &[Example],
    augmenters: &[Box<dyn Augmenter>],
    k: usize,
    seed: u64,
) -> Result<Vec<AugmentedExample>> {
    if k > 0 && augmenters.is_empty() {
        return Err(Error::Config(
            "augmentation requested but no augmenter configured".into(),
        ));
    }
    let mut out = Vec::with_capacity(examples.len() * k);
    for ex in examples {
        for ki in 1..=k {
            out.push(augment(
                ex,
                ki,
                augmenters[(ki - 1) % augmenters.len()].as_ref(),
                seed,
            )?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::thread;

    use super::*;

    fn ex(id: &str, text: &str) -> Example {
        Example::new(id, text, None)
    }

    #[test]
    fn no_op_configurations_are_identity() {
        let e = ex("a", "the market rallied today");
        for a in [
            Box::new(RandomSwap { swaps: 0 }) as Box<dyn Augmenter>,
            Box::new(RandomDeletion { prob: 0.0 }),
        ] {
            assert_eq!(augment(&e, 1, a.as_ref(), 3).unwrap().text, e.text);
        }
    }

    #[test]
    fn seeded_swap_fixture() {
        assert_eq!(swap_tokens("a b c d", 1, 3).unwrap(), "a d c b");
        assert!(swap_tokens("a b", 0, 2).is_err());
    }

    #[test]
    fn augmentation_is_deterministic_per_id_and_k() {
        let e = ex("u7", "one two three four five six seven eight");
        let a = RandomSwap { swaps: 3 };
        let x = augment(&e, 1, &a, 9).unwrap();
        assert_eq!(x, augment(&e, 1, &a, 9).unwrap());
        assert_eq!(x.parent, "u7");
        let others: Vec<String> = (2..6)
            .map(|k| augment(&e, k, &a, 9).unwrap().text)
            .collect();
        assert!(others.iter().any(|t| *t != x.text));
        assert!(augment(&e, 0, &a, 9).is_err());
    }

    #[test]
    fn deletion_keeps_one_word() {
        let e = ex("x", "alpha beta gamma");
        let out = augment(&e, 1, &RandomDeletion { prob: 1.0 }, 0).unwrap();
        assert_eq!(out.text.split_whitespace().count(), 1);
    }

    #[test]
    fn synonym_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let dict = SynonymDict::from_groups(&[vec!["a", "b", "c"], vec!["x", "y"]]);
        let p = dir.path().join("syn.txt");
        dict.save(&p).unwrap();
        assert_eq!(fs::read_to_string(&p).unwrap(), "a b c\nx y\n");
        assert_eq!(SynonymDict::load(&p).unwrap(), dict);
    }

    #[test]
    fn synonyms_replace_within_groups() {
        let dict = SynonymDict::from_groups(&[vec!["stock", "share", "equity"]]);
        assert_eq!(dict.get("Stock").unwrap(), &["equity", "share"]);
        let s = SynonymReplace { dict, prob: 1.0 };
        let out = augment(&ex("a", "stock up"), 1, &s, 1).unwrap();
        let first = out.text.split_whitespace().next().unwrap().to_string();
        assert!(first == "share" || first == "equity");
        assert!(out.text.ends_with(" up"));
    }

    #[test]
    fn materialize_cycles_augmenters() {
        let augs: Vec<Box<dyn Augmenter>> = vec![
            Box::new(RandomSwap { swaps: 1 }),
            Box::new(RandomDeletion { prob: 0.5 }),
        ];
        let out = materialize(&[ex("a", "p q r"), ex("b", "s t")], &augs, 3, 1).unwrap();
        assert_eq!(out.len(), 6);
        assert_eq!(out[0].provenance, "swap(n=1)");
        assert_eq!(out[1].provenance, "delete(p=0.5)");
        assert_eq!(out[2].provenance, "swap(n=1)");
        assert_eq!((out[3].parent.as_str(), out[3].k), ("b", 1));
    }

    /// Serves `responses` one connection each and returns the request bodies.
    fn mock_server(responses: Vec<(u16, String)>) -> (String, thread::JoinHandle<Vec<String>>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/translate", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let mut bodies = Vec::new();
            for (status, body) in responses {
                let (stream, _) = listener.accept().unwrap();
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut len = 0;
                loop {
                    let mut line = String::new();
                    reader.read_line(&mut line).unwrap();
                    if line == "\r\n" || line.is_empty() {
                        break;
                    }
                    if let Some(v) = line.to_lowercase().strip_prefix("content-length:") {
                        len = v.trim().parse().unwrap();
                    }
                }
                let mut buf = vec![0; len];
                reader.read_exact(&mut buf).unwrap();
                bodies.push(String::from_utf8(buf).unwrap());
                let mut stream = stream;
                write!(
                    stream,
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                    body.len()
                )
                .unwrap();
            }
            bodies
        });
        (url, handle)
    }

    fn translator(endpoint: Option<String>, dir: &Path) -> BackTranslator {
        BackTranslator {
            endpoint,
            route: "de".into(),
            cache: AugmentCache::new(dir),
            timeout: Duration::from_secs(5),
            fallback: Box::new(RandomSwap { swaps: 0 }),
        }
    }

    #[test]
    fn back_translation_caches_responses() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = mock_server(vec![(200, "{\"text\":\"stocks climbed today\"}".into())]);
        let bt = translator(Some(url), dir.path());
        let e = ex("a", "shares rose today");
        let out = augment(&e, 1, &bt, 0).unwrap();
        assert_eq!(out.text, "stocks climbed today");
        assert_eq!(out.provenance, "backtranslate(de)");
        assert!(out.fallback.is_none());
        let bodies = server.join().unwrap();
        let req: serde_json::Value = serde_json::from_str(&bodies[0]).unwrap();
        assert_eq!(req["text"], "shares rose today");
        assert_eq!(req["route"], "de");

        let cached = bt.cache.path_for("de", "shares rose today");
        assert!(cached.starts_with(dir.path().join("de")));
        assert_eq!(fs::read_to_string(cached).unwrap(), "stocks climbed today");
        // served from cache even with the server gone
        let offline = translator(None, dir.path());
        assert_eq!(
            augment(&e, 1, &offline, 0).unwrap().text,
            "stocks climbed today"
        );
    }

    #[test]
    fn failures_fall_back_and_are_recorded() {
        let dir = tempfile::tempdir().unwrap();
        let (url, server) = mock_server(vec![(500, "{}".into()), (200, "{\"nope\":1}".into())]);
        let bt = translator(Some(url), dir.path());
        for id in ["a", "b"] {
            let out = augment(&ex(id, &format!("text {id}")), 1, &bt, 0).unwrap();
            assert_eq!(out.text, format!("text {id}"));
            assert_eq!(out.provenance, "swap(n=0)");
            assert!(out.fallback.unwrap().starts_with("backtranslate(de)"));
        }
        server.join().unwrap();
        let offline = translator(None, dir.path());
        assert!(augment(&ex("c", "x"), 1, &offline, 0)
            .unwrap()
            .fallback
            .is_some());
    }

    #[test]
    fn spec_parsing_and_building() {
        #[derive(Deserialize)]
        struct W {
            augment: Vec<AugmenterSpec>,
        }
        let w: W = toml::from_str(
            "[[augment]]\nkind = \"swap\"\nswaps = 2\n\n[[augment]]\nkind = \"back_translate\"\nroute = \"fr\"\nfallback = { kind = \"delete\", prob = 0.1 }\n",
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let built: Vec<_> = w
            .augment
            .iter()
            .map(|s| s.build(None, dir.path()).unwrap())
            .collect();
        assert_eq!(built[1].name(), "backtranslate(fr)");
        let syn = AugmenterSpec::Synonym {
            prob: 0.3,
            dictionary: None,
        };
        assert!(syn.build(None, dir.path()).is_err());
        assert!(AugmenterSpec::Delete { prob: 2.0 }
            .build(None, dir.path())
            .is_err());
    }
}
