//! Semi-supervised training: augmentation, label guessing, superset
//! construction, the combined objective and the optimisation loop.

mod augment;
mod config;
mod guess;
mod optim;
mod run;
mod superset;


pub use augment::{
    augment, materialize, swap_tokens, AugmentCache, Augmented, AugmentedExample, Augmenter,
    AugmenterSpec, BackTranslator, Chain, RandomDeletion, RandomSwap, SynonymDict, SynonymReplace,
};
pub use config::{GuessConfig, TrainConfig, TrainMode};
pub use guess::{guess_label, margin_loss, sharpen, weighted_average};
pub use optim::Adam;
pub use run::{
    evaluate, fit, mixtext_objective, read_metrics_csv, train, train_supervised, write_metrics_csv,
    EpochMetrics, Evaluation, MarginInputs, ObjectiveVars, StepLosses, Stepper, SupervisedTrainer,
    TrainData, TrainResult, TrainSettings, Trainer,
};
pub use superset::{
    build_superset, AugmentedRow, BatchSampler, EncodedExample, Origin, SupersetBatch,
};
