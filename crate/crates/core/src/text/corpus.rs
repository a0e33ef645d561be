use std::collections::HashSet;
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One raw text with an optional class label.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Example {
    pub id: String,
    pub text: String,
    pub label: Option<String>,
}

impl Example {
    pub fn new(id: impl Into<String>, text: impl Into<String>, label: Option<&str>) -> Self {
        Self {
            id: id.into(),
            text: text.into(),
            label: label.map(str::to_string),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CorpusFormat {
    /// `{"id": str, "text": str, "label": str | null}` per line.
    Jsonl,
    /// Headerless `label,title,body` rows (AG News layout).
    Csv,
}

impl CorpusFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "jsonl" | "json" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

impl std::str::FromStr for CorpusFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            other => Err(Error::Config(format!("unknown corpus format {other:?}"))),
        }
    }
}

#[derive(Deserialize)]
struct JsonRecord {
    id: Option<String>,
    text: Option<String>,
    #[serde(default)]
    label: Option<String>,
}

/// Reads a corpus file. When `label_set` is given, every present label must
/// belong to it.
pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    label_set: Option<&[String]>,
) -> Result<Vec<Example>> {
    let parse_err = |line: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut examples = Vec::new();
    match format {
        CorpusFormat::Jsonl => {
            let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            for (i, line) in text.lines().enumerate() {
                let line_no = i + 1;
                if line.trim().is_empty() {
                    continue;
                }
                let rec: JsonRecord =
                    serde_json::from_str(line).map_err(|e| parse_err(line_no, e.to_string()))?;
                let id = rec
                    .id
                    .ok_or_else(|| parse_err(line_no, "missing id".into()))?;
                let text = rec
                    .text
                    .ok_or_else(|| parse_err(line_no, "missing text".into()))?;
                examples.push((
                    line_no,
                    Example {
                        id,
                        text,
                        label: rec.label,
                    },
                ));
            }
        }
        CorpusFormat::Csv => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = csv::ReaderBuilder::new()
                .has_headers(false)
                .flexible(true)
                .from_reader(file);
            for rec in reader.records() {
                let rec = rec.map_err(|e| {
                    let line = e.position().map_or(0, |p| p.line() as usize);
                    parse_err(line, e.to_string())
                })?;
                let line_no = rec.position().map_or(0, |p| p.line() as usize);
                if rec.len() != 3 {
                    return Err(parse_err(
                        line_no,
                        format!(
                            "expected 3 fields (label, title, body), found {}",
                            rec.len()
                        ),
                    ));
                }
                let (label, title, body) = (rec[0].trim(), rec[1].trim(), rec[2].trim());
                if title.is_empty() && body.is_empty() {
                    return Err(parse_err(line_no, "missing text".into()));
                }
                let text = match (title.is_empty(), body.is_empty()) {
                    (false, false) => format!("{title} {body}"),
                    (false, true) => title.to_string(),
                    _ => body.to_string(),
                };
                let label = (!label.is_empty()).then(|| label.to_string());
                examples.push((
                    line_no,
                    Example {
                        id: format!("row{line_no}"),
                        text,
                        label,
                    },
                ));
            }
        }
    }

    let mut seen = HashSet::new();
    for (line, ex) in &examples {
        if !seen.insert(ex.id.as_str()) {
            return Err(parse_err(*line, format!("duplicate id {:?}", ex.id)));
        }
        if let (Some(set), Some(label)) = (label_set, &ex.label) {
            if !set.contains(label) {
                return Err(Error::Validation(format!(
                    "{}:{line}: label {label:?} is not in the declared label set",
                    path.display()
                )));
            }
        }
    }
    Ok(examples.into_iter().map(|(_, e)| e).collect())
}

pub fn write_jsonl(path: &Path, examples: &[Example]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for ex in examples {
        serde_json::to_writer(&mut w, ex)?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

/// Ordered class names; a label's index is its position.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    names: Vec<String>,
}

impl LabelSet {
    pub fn new(names: Vec<String>) -> Result<Self> {
        if names.is_empty() {
            return Err(Error::Config("label set is empty".into()));
        }
        let unique: HashSet<_> = names.iter().collect();
        if unique.len() != names.len() {
            return Err(Error::Config("label set contains duplicates".into()));
        }
        Ok(Self { names })
    }

    /// Sorted distinct labels present in `examples`.
    pub fn from_examples(examples: &[Example]) -> Result<Self> {
        let mut names: Vec<String> = examples
            .iter()
            .filter_map(|e| e.label.clone())
            .collect::<HashSet<_>>()
            .into_iter()
            .collect();
        names.sort();
        Self::new(names)
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn index_of(&self, label: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == label)
            .ok_or_else(|| Error::Validation(format!("unknown label {label:?}")))
    }
}
