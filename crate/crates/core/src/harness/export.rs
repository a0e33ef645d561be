//! Record export. The CSV layout has one row per run:
//!
//! `label,config_hash,seed,test_acc,best_epoch,epoch,step,l_tmix,l_margin,total,dev_loss,dev_acc`
//!
//! where the last seven columns hold the per-epoch curves joined with `;`.
//! Wall-clock time is left out of the CSV so reruns compare byte for byte;
//! the JSON form is the full record list.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::{summarize, RunRecord};
use crate::error::{Error, Result};
use crate::trainer::EpochMetrics;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ExportFormat {
    Csv,
    Json,
}

impl ExportFormat {
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()? {
            "csv" => Some(Self::Csv),
            "json" => Some(Self::Json),
            _ => None,
        }
    }
}

impl FromStr for ExportFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            other => Err(Error::Config(format!("unknown export format {other:?}"))),
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct CsvRow {
    label: String,
    config_hash: String,
    seed: u64,
    test_acc: f64,
    best_epoch: usize,
    epoch: String,
    step: String,
    l_tmix: String,
    l_margin: String,
    total: String,
    dev_loss: String,
    dev_acc: String,
}

fn join<T: ToString>(xs: impl Iterator<Item = T>) -> String {
    xs.map(|x| x.to_string()).collect::<Vec<_>>().join(";")
}

fn split<T: FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    if s.is_empty() {
        return Ok(Vec::new());
    }
    s.split(';')
        .map(|x| x.parse::<T>().map_err(|e| format!("{x:?}: {e}")))
        .collect()
}

impl CsvRow {
    fn new(r: &RunRecord) -> Self {
        let m = &r.metrics;
        Self {
            label: r.label.clone(),
            config_hash: r.config_hash.clone(),
            seed: r.seed,
            test_acc: r.test_acc,
            best_epoch: r.best_epoch,
            epoch: join(m.iter().map(|x| x.epoch)),
            step: join(m.iter().map(|x| x.step)),
            l_tmix: join(m.iter().map(|x| x.l_tmix)),
            l_margin: join(m.iter().map(|x| x.l_margin)),
            total: join(m.iter().map(|x| x.total)),
            dev_loss: join(m.iter().map(|x| x.dev_loss)),
            dev_acc: join(m.iter().map(|x| x.dev_acc)),
        }
    }

    fn into_record(self) -> std::result::Result<RunRecord, String> {
        let epoch: Vec<usize> = split(&self.epoch)?;
        let step: Vec<usize> = split(&self.step)?;
        let cols: [Vec<f64>; 5] = [
            split(&self.l_tmix)?,
            split(&self.l_margin)?,
            split(&self.total)?,
            split(&self.dev_loss)?,
            split(&self.dev_acc)?,
        ];
        let n = epoch.len();
        if step.len() != n || cols.iter().any(|c| c.len() != n) {
            return Err("curve columns differ in length".into());
        }
        let metrics = (0..n)
            .map(|i| EpochMetrics {
                epoch: epoch[i],
                step: step[i],
                l_tmix: cols[0][i],
                l_margin: cols[1][i],
                total: cols[2][i],
                dev_loss: cols[3][i],
                dev_acc: cols[4][i],
                test_acc: (i + 1 == n).then_some(self.test_acc),
            })
            .collect();
        Ok(RunRecord {
            label: self.label,
            config_hash: self.config_hash,
            seed: self.seed,
            test_acc: self.test_acc,
            best_epoch: self.best_epoch,
            metrics,
            wall_clock_secs: None,
        })
    }
}

pub fn export_metrics(records: &[RunRecord], path: &Path, format: ExportFormat) -> Result<()> {
    if records.is_empty() {
        return Err(Error::Validation("no records to export".into()));
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    match format {
        ExportFormat::Json => {
            fs::write(path, serde_json::to_vec_pretty(records)?).map_err(|e| Error::io(path, e))
        }
        ExportFormat::Csv => write_csv(path, records.iter().map(CsvRow::new)),
    }
}

pub fn read_records(path: &Path, format: ExportFormat) -> Result<Vec<RunRecord>> {
    match format {
        ExportFormat::Json => {
            let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
            Ok(serde_json::from_slice(&bytes)?)
        }
        ExportFormat::Csv => {
            let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, io(e)))?;
            r.deserialize::<CsvRow>()
                .enumerate()
                .map(|(i, row)| {
                    row.map_err(|e| e.to_string())
                        .and_then(CsvRow::into_record)
                        .map_err(|message| Error::Parse {
                            path: path.to_path_buf(),
                            line: i + 2,
                            message,
                        })
                })
                .collect()
        }
    }
}

/// `label,runs,mean_test_acc,std_test_acc` per label.
pub fn write_summary_csv(records: &[RunRecord], path: &Path) -> Result<()> {
    write_csv(path, summarize(records).into_iter())
}

fn write_csv<T: Serialize>(path: &Path, rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, io(e)))?;
    for row in rows {
        w.serialize(row).map_err(|e| Error::io(path, io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(label: &str, epochs: usize) -> RunRecord {
        let metrics: Vec<EpochMetrics> = (1..=epochs)
            .map(|e| EpochMetrics {
                epoch: e,
                step: 10 * e,
                l_tmix: 1.0 / e as f64,
                l_margin: 0.1 / 3.0,
                total: 1.0 / e as f64 + 0.1 / 3.0,
                dev_loss: 0.7 - 0.01 * e as f64,
                dev_acc: 0.5 + 0.125 * e as f64 / 7.0,
                test_acc: (e == epochs).then_some(0.8125),
            })
            .collect();
        RunRecord {
            label: label.into(),
            config_hash: "abc".into(),
            seed: 3,
            test_acc: 0.8125,
            best_epoch: epochs,
            metrics,
            wall_clock_secs: Some(1.5),
        }
    }

    #[test]
    fn one_record_is_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        export_metrics(&[record("full", 3)], &p, ExportFormat::Csv).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(
            lines[0],
            "label,config_hash,seed,test_acc,best_epoch,epoch,step,l_tmix,l_margin,total,dev_loss,dev_acc"
        );
        assert!(lines[1].starts_with("full,abc,3,0.8125,3,1;2;3,10;20;30,"));
    }

    #[test]
    fn csv_and_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let recs = vec![
            record("full", 4),
            record("strip=all", 2),
            record("empty", 0),
        ];
        let csv_path = dir.path().join("out/r.csv");
        export_metrics(&recs, &csv_path, ExportFormat::Csv).unwrap();
        let back = read_records(&csv_path, ExportFormat::Csv).unwrap();
        let expected: Vec<RunRecord> = recs.iter().map(RunRecord::without_timing).collect();
        assert_eq!(back, expected);

        let json_path = dir.path().join("r.json");
        export_metrics(&recs, &json_path, ExportFormat::Json).unwrap();
        assert_eq!(read_records(&json_path, ExportFormat::Json).unwrap(), recs);
    }

    #[test]
    fn empty_export_and_unwritable_path_fail() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("r.csv");
        assert!(matches!(
            export_metrics(&[], &p, ExportFormat::Csv),
            Err(Error::Validation(_))
        ));
        let blocked = dir.path().join("file");
        fs::write(&blocked, "x").unwrap();
        let under_file = blocked.join("r.csv");
        assert!(matches!(
            export_metrics(&[record("a", 1)], &under_file, ExportFormat::Csv),
            Err(Error::Io { .. })
        ));
    }

    #[test]
    fn summary_file() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        write_summary_csv(&[record("a", 1), record("a", 1)], &p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        assert_eq!(
            text,
            "label,runs,mean_test_acc,std_test_acc\na,2,0.8125,0.0\n"
        );
    }
}
