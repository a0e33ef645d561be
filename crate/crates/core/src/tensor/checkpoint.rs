//! Plain-text parameter checkpoints.
//!
//! ```text
//! mixtext-checkpoint 1
//! config-hash <hex digest>
//! params <count>
//! <name> <dim>x<dim>...
//! <value> <value> ...
//! ```
//!
//! One name/shape line and one value line per parameter, in model order.
//! Scalars use `-` as their shape. Values are printed with the shortest
//! representation that round-trips exactly.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use super::{ParamStore, Tensor};
use crate::error::{Error, Result};

const MAGIC: &str = "mixtext-checkpoint 1";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config_hash: String,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore, config_hash: impl Into<String>) -> Self {
        Self {
            config_hash: config_hash.into(),
            params: store
                .iter()
                .map(|p| (p.name.clone(), p.value.clone()))
                .collect(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC}");
        let _ = writeln!(out, "config-hash {}", self.config_hash);
        let _ = writeln!(out, "params {}", self.params.len());
        for (name, t) in &self.params {
            let shape = if t.shape().is_empty() {
                "-".to_string()
            } else {
                t.shape()
                    .iter()
                    .map(usize::to_string)
                    .collect::<Vec<_>>()
                    .join("x")
            };
            let _ = writeln!(out, "{name} {shape}");
            let values: Vec<String> = t.data().iter().map(|v| format!("{v:?}")).collect();
            let _ = writeln!(out, "{}", values.join(" "));
        }
        out
    }

    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let err = |line: usize, message: String| Error::Parse {
            path: origin.to_path_buf(),
            line,
            message,
        };
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines
                .next()
                .ok_or_else(|| err(0, format!("unexpected end of file, expected {what}")))
        };

        let (n, magic) = next("header")?;
        if magic != MAGIC {
            return Err(err(n, format!("bad header {magic:?}")));
        }
        let (n, hash_line) = next("config hash")?;
        let config_hash = hash_line
            .strip_prefix("config-hash ")
            .ok_or_else(|| err(n, "expected `config-hash <hex>`".into()))?
            .to_string();
        let (n, count_line) = next("parameter count")?;
        let count: usize = count_line
            .strip_prefix("params ")
            .and_then(|c| c.parse().ok())
            .ok_or_else(|| err(n, "expected `params <count>`".into()))?;

        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            let (n, header) = next("parameter header")?;
            let (name, shape_text) = header
                .split_once(' ')
                .ok_or_else(|| err(n, "expected `<name> <shape>`".into()))?;
            let shape: Vec<usize> = if shape_text == "-" {
                Vec::new()
            } else {
                shape_text
                    .split('x')
                    .map(|d| {
                        d.parse()
                            .map_err(|_| err(n, format!("bad dimension {d:?}")))
                    })
                    .collect::<Result<_>>()?
            };
            let (n, values_line) = next("parameter values")?;
            let data: Vec<f64> = values_line
                .split_whitespace()
                .map(|v| v.parse().map_err(|_| err(n, format!("bad value {v:?}"))))
                .collect::<Result<_>>()?;
            let t = Tensor::new(shape, data).map_err(|e| err(n, e.to_string()))?;
            params.push((name.to_string(), t));
        }
        Ok(Self {
            config_hash,
            params,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    /// Copies the stored values into `store` after checking the config hash,
    /// parameter names and shapes.
    pub fn restore_into(&self, store: &mut ParamStore, config_hash: &str) -> Result<()> {
        if self.config_hash != config_hash {
            return Err(Error::Validation(format!(
                "checkpoint config hash {} does not match model config {config_hash}",
                self.config_hash
            )));
        }
        store.load_values(&self.params)
    }
}
