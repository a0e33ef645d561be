//! Evaluation, the synthetic desk task, run configs, ablations and metric
//! export.

mod ablation;
mod config;
mod data;
mod export;
mod run;
mod synthetic;

pub use ablation::{
    mean_std, run_ablation, summarize, AblationMode, AblationSpec, Cell, CellSummary, Component,
    Sweep,
};
pub use config::{DataConfig, DataSource, RunConfig};
pub use data::{
    augmenters, build_vocab, load_prepared, prepare, prepare_run, read_augmentations,
    save_prepared, stage, write_augmentations, Prepared, Staged, AUGMENTATIONS_FILE, SEALED_FILE,
    SPLITS_FILE, SYNONYMS_FILE, VOCAB_FILE,
};
pub use export::{export_metrics, read_records, write_summary_csv, ExportFormat};
pub use run::{
    evaluate_accuracy, run_experiment, run_prepared, FallbackNote, RunManifest, RunOutcome,
    RunRecord,
};
pub use synthetic::SyntheticTask;
