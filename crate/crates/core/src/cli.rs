//! The `mixtext` command line.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::encoder::Model;
use crate::error::{Error, Result};
use crate::harness::{
    augmenters, export_metrics, load_prepared, prepare_run, read_records, run_ablation,
    run_prepared, save_prepared, stage, summarize, write_augmentations, write_summary_csv,
    AblationMode, AblationSpec, DataConfig, DataSource, ExportFormat, RunConfig, RunManifest,
    RunRecord, AUGMENTATIONS_FILE,
};
use crate::text::{encode, load_corpus, CorpusFormat, LabelSet, TestSource, Vocab};
use crate::trainer::{evaluate, materialize, write_metrics_csv, EncodedExample, TrainMode};

/// Overrides the augmentation cache directory of every loaded config.
pub const CACHE_ENV: &str = "MIXTEXT_CACHE_DIR";

pub const METRICS_FILE: &str = "metrics.csv";
pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const RECORD_FILE: &str = "record.json";
pub const RUN_VOCAB_FILE: &str = "vocab.txt";

#[derive(Parser, Debug)]
#[command(
    name = "mixtext",
    version,
    about = "Semi-supervised text classification with hidden-space mixing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Split a corpus and build the vocabulary.
    Prepare(PrepareArgs),
    /// Materialize augmentations of the unlabeled split.
    AugmentCache(AugmentArgs),
    /// Train one model.
    Train(TrainArgs),
    /// Score a trained model.
    Eval(EvalArgs),
    /// Run an ablation grid.
    Ablate(AblateArgs),
    /// Convert run records to plot data.
    Export(ExportArgs),
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Run config file (TOML).
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Built-in config: desk or smoke.
    #[arg(long)]
    preset: Option<String>,
    /// Replaces the config's seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        let mut cfg = match (&self.config, self.preset.as_deref()) {
            (Some(p), _) => RunConfig::load(p)?,
            (None, None | Some("desk")) => RunConfig::desk(0),
            (None, Some("smoke")) => RunConfig::smoke(0),
            (None, Some(other)) => return Err(Error::Config(format!("unknown preset {other:?}"))),
        };
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(dir) = std::env::var_os(CACHE_ENV) {
            cfg.cache_dir = Some(dir.into());
        }
        Ok(cfg)
    }
}

#[derive(Args, Debug)]
struct PrepareArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Corpus file (.jsonl or .csv); replaces the config's data source.
    #[arg(long)]
    corpus: Option<PathBuf>,
    #[arg(long)]
    format: Option<CorpusFormat>,
    #[arg(long)]
    labeled_per_class: Option<usize>,
    #[arg(long)]
    unlabeled_per_class: Option<usize>,
    #[arg(long)]
    dev_per_class: Option<usize>,
    /// Test examples per class; the rest of the corpus when absent.
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long, default_value = "prepared")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct AugmentArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Prepared directory; augmentations are written into it.
    #[arg(long)]
    prepared: Option<PathBuf>,
    /// Output file when no prepared directory is given.
    #[arg(long, default_value = AUGMENTATIONS_FILE)]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct TrainArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// mixtext, tmix or supervised; replaces the config's mode.
    #[arg(long)]
    mode: Option<String>,
    /// Prepared directory; replaces the config's data source.
    #[arg(long)]
    prepared: Option<PathBuf>,
    #[arg(long, default_value = "run")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    /// Directory written by `train`.
    #[arg(long)]
    run: PathBuf,
    /// Labeled JSONL file; the run's own test split when absent.
    #[arg(long)]
    data: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct AblateArgs {
    #[command(flatten)]
    cfg: ConfigArgs,
    /// Ablation spec file; overrides --mode and the base config.
    #[arg(long, conflicts_with = "mode")]
    spec: Option<PathBuf>,
    /// mix_layer_sweep, strip_component, labeled_sweep or unlabeled_sweep.
    #[arg(long)]
    mode: Option<AblationMode>,
    #[arg(long, default_value_t = 3)]
    reps: usize,
    #[arg(long, default_value = "ablation.json")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct ExportArgs {
    /// Records written by `ablate` or `train` (JSON).
    #[arg(long, required = true, num_args = 1..)]
    records: Vec<PathBuf>,
    #[arg(long)]
    out: PathBuf,
    /// csv or json; taken from the extension when absent.
    #[arg(long)]
    format: Option<ExportFormat>,
    /// Per-label mean and standard deviation of test accuracy.
    #[arg(long)]
    summary: Option<PathBuf>,
}

/// Parses `argv` (program name first) and runs the command. Returns the
/// process exit code: 0 on success, 2 on usage errors, 1 otherwise.
pub fn main<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match run(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Prepare(a) => prepare(a),
        Command::AugmentCache(a) => augment_cache(a),
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Ablate(a) => ablate(a),
        Command::Export(a) => export(a),
    }
}

fn say(line: impl AsRef<str>) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(out, "{}", line.as_ref());
}

fn prepare(a: PrepareArgs) -> Result<()> {
    let mut cfg = a.cfg.load()?;
    if let Some(corpus) = a.corpus {
        cfg.data = DataConfig {
            source: DataSource::Corpus {
                path: corpus,
                format: a.format,
                labels: None,
            },
            labeled_per_class: 0,
            unlabeled_per_class: 0,
            dev_per_class: 0,
            test: TestSource::Remaining,
            synonyms: None,
            ..cfg.data
        };
    }
    let d = &mut cfg.data;
    for (slot, v) in [
        (&mut d.labeled_per_class, a.labeled_per_class),
        (&mut d.unlabeled_per_class, a.unlabeled_per_class),
        (&mut d.dev_per_class, a.dev_per_class),
    ] {
        if let Some(v) = v {
            *slot = v;
        }
    }
    if let Some(n) = a.test_per_class {
        d.test = TestSource::PerClass(n);
    }
    let staged = stage(&cfg)?;
    let manifest = save_prepared(&a.out, &staged)?;
    say(format!(
        "prepared {}: {} labeled, {} unlabeled, {} dev, {} test, vocabulary {} (split hash {})",
        a.out.display(),
        manifest.labeled.len(),
        manifest.unlabeled.len(),
        manifest.dev.len(),
        manifest.test.len(),
        staged.vocab.len(),
        manifest.spec_hash
    ));
    Ok(())
}

fn augment_cache(a: AugmentArgs) -> Result<()> {
    let cfg = a.cfg.load()?;
    let (staged, out) = match &a.prepared {
        Some(dir) => (load_prepared(dir)?, dir.join(AUGMENTATIONS_FILE)),
        None => (stage(&cfg)?, a.out.clone()),
    };
    let synonyms = match &cfg.data.synonyms {
        Some(p) => Some(crate::trainer::SynonymDict::load(p)?),
        None => staged.synonyms.clone(),
    };
    let augs = augmenters(&cfg, synonyms.as_ref())?;
    let rows = materialize(
        &staged.splits.unlabeled,
        &augs,
        cfg.guess.k,
        staged.spec.seed,
    )?;
    write_augmentations(&out, &rows)?;
    let fallbacks = rows.iter().filter(|r| r.fallback.is_some()).count();
    say(format!(
        "{} augmentations of {} examples written to {} ({fallbacks} fell back)",
        rows.len(),
        staged.splits.unlabeled.len(),
        out.display()
    ));
    Ok(())
}

fn parse_mode(s: &str) -> Result<TrainMode> {
    match s {
        "mixtext" => Ok(TrainMode::Mixtext),
        "tmix" => Ok(TrainMode::Tmix),
        "supervised" => Ok(TrainMode::Supervised),
        other => Err(Error::Config(format!("unknown train mode {other:?}"))),
    }
}

fn train(a: TrainArgs) -> Result<()> {
    let mut cfg = a.cfg.load()?;
    if let Some(m) = &a.mode {
        cfg.train.mode = parse_mode(m)?;
    }
    if let Some(dir) = a.prepared {
        cfg.data.source = DataSource::Prepared { dir };
    }
    let label = format!("{:?}", cfg.train.mode).to_lowercase();
    let start = std::time::Instant::now();
    let prepared = prepare_run(&cfg)?;
    let out = run_prepared(&cfg, &label, &prepared, start)?;
    let dir = &a.out;
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_metrics_csv(&dir.join(METRICS_FILE), &out.record.metrics)?;
    out.result.best.save(&dir.join(CHECKPOINT_FILE))?;
    out.manifest.save(&dir.join(MANIFEST_FILE))?;
    write_json(&dir.join(RECORD_FILE), std::slice::from_ref(&out.record))?;
    prepared.vocab.save(&dir.join(RUN_VOCAB_FILE))?;
    say(format!(
        "{label}: test accuracy {:.4} (best epoch {}), written to {}",
        out.record.test_acc,
        out.record.best_epoch,
        dir.display()
    ));
    Ok(())
}

fn write_json(path: &Path, records: &[RunRecord]) -> Result<()> {
    export_metrics(records, path, ExportFormat::Json)
}

fn eval(a: EvalArgs) -> Result<()> {
    let manifest = RunManifest::load(&a.run.join(MANIFEST_FILE))?;
    let model = Model::load(manifest.settings().encoder, &a.run.join(CHECKPOINT_FILE))?;
    let vocab = Vocab::load(&a.run.join(RUN_VOCAB_FILE))?;
    let labels = LabelSet::new(manifest.labels.clone())?;
    let examples = match &a.data {
        Some(p) => load_corpus(
            p,
            CorpusFormat::from_path(p).unwrap_or(CorpusFormat::Jsonl),
            Some(labels.names()),
        )?,
        None => stage(&manifest.config)?.splits.test,
    };
    let max_len = manifest.config.data.max_len;
    let encoded = examples
        .iter()
        .map(|e| {
            let label = e
                .label
                .as_deref()
                .ok_or_else(|| Error::Validation(format!("example {:?} has no label", e.id)))?;
            Ok(EncodedExample {
                id: e.id.clone(),
                seq: encode(&e.text, &vocab, max_len)?,
                label: Some(labels.index_of(label)?),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let ev = evaluate(&model, &encoded)?;
    say(format!(
        "accuracy {:.4} loss {:.4} on {} examples",
        ev.accuracy,
        ev.loss,
        encoded.len()
    ));
    Ok(())
}

fn ablate(a: AblateArgs) -> Result<()> {
    let spec = match &a.spec {
        Some(p) => AblationSpec::load(p)?,
        None => {
            let mode = a
                .mode
                .ok_or_else(|| Error::Config("ablate needs --mode or --spec".into()))?;
            AblationSpec::new(mode, a.reps, a.cfg.load()?)
        }
    };
    let records = run_ablation(&spec)?;
    write_json(&a.out, &records)?;
    for s in summarize(&records) {
        say(format!(
            "{:<28} runs {} mean {:.4} std {:.4}",
            s.label, s.runs, s.mean_test_acc, s.std_test_acc
        ));
    }
    say(format!(
        "{} records written to {}",
        records.len(),
        a.out.display()
    ));
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let mut records = Vec::new();
    for p in &a.records {
        records.extend(read_records(
            p,
            ExportFormat::from_path(p).unwrap_or(ExportFormat::Json),
        )?);
    }
    let format = match a.format {
        Some(f) => f,
        None => ExportFormat::from_path(&a.out).ok_or_else(|| {
            Error::Config(format!(
                "cannot infer the export format of {}",
                a.out.display()
            ))
        })?,
    };
    export_metrics(&records, &a.out, format)?;
    if let Some(s) = &a.summary {
        write_summary_csv(&records, s)?;
    }
    say(format!(
        "{} records exported to {}",
        records.len(),
        a.out.display()
    ));
    Ok(())
}
