use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::guess::{guess_batch, guess_on_tape, margin_loss};
use super::{
    build_superset, Adam, AugmentedExample, AugmentedRow, BatchSampler, EncodedExample,
    GuessConfig, SupersetBatch, TrainConfig, TrainMode,
};
use crate::encoder::{Bound, EncoderConfig, Model, TokenBatch};
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};
use crate::text::{encode, Example, LabelSet, Splits, TokenSeq, Vocab};
use crate::tmix::{kl_loss, mix_labels, tmix_forward_paired, MixConfig, MixDraw, ProbLabel};

/// Encoded splits ready for training.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub num_classes: usize,
    pub labeled: Vec<EncodedExample>,
    pub unlabeled: Vec<EncodedExample>,
    /// `augmented[i]` holds the augmentations of `unlabeled[i]`, ordered by k.
    pub augmented: Vec<Vec<AugmentedRow>>,
    pub dev: Vec<EncodedExample>,
    pub test: Vec<EncodedExample>,
}

fn encode_all(
    examples: &[Example],
    labels: &LabelSet,
    vocab: &Vocab,
    max_len: usize,
) -> Result<Vec<EncodedExample>> {
    examples
        .iter()
        .map(|e| {
            Ok(EncodedExample {
                id: e.id.clone(),
                seq: encode(&e.text, vocab, max_len)?,
                label: e.label.as_deref().map(|l| labels.index_of(l)).transpose()?,
            })
        })
        .collect()
}

impl TrainData {
    /// Encodes `splits`, attaching exactly `k` augmentations to every
    /// unlabeled example.
    pub fn new(
        splits: &Splits,
        augmentations: &[AugmentedExample],
        k: usize,
        vocab: &Vocab,
        max_len: usize,
    ) -> Result<Self> {
        let mut by_parent: HashMap<&str, Vec<&AugmentedExample>> = HashMap::new();
        for a in augmentations {
            by_parent.entry(a.parent.as_str()).or_default().push(a);
        }
        let unlabeled = encode_all(&splits.unlabeled, &splits.labels, vocab, max_len)?;
        let mut augmented = Vec::with_capacity(unlabeled.len());
        for u in &unlabeled {
            let mut rows = by_parent.remove(u.id.as_str()).unwrap_or_default();
            rows.sort_by_key(|a| a.k);
            if rows.len() < k || rows.iter().take(k).enumerate().any(|(i, a)| a.k != i + 1) {
                return Err(Error::Contract(format!(
                    "unlabeled example {:?} needs augmentations 1..={k}",
                    u.id
                )));
            }
            augmented.push(
                rows.into_iter()
                    .take(k)
                    .map(|a| {
                        Ok(AugmentedRow {
                            parent: a.parent.clone(),
                            k: a.k,
                            seq: encode(&a.text, vocab, max_len)?,
                        })
                    })
                    .collect::<Result<Vec<_>>>()?,
            );
        }
        if let Some(orphan) = by_parent.keys().next() {
            return Err(Error::Contract(format!(
                "augmentation parent {orphan:?} is not in the unlabeled split"
            )));
        }
        Ok(Self {
            num_classes: splits.labels.len(),
            labeled: encode_all(&splits.labeled, &splits.labels, vocab, max_len)?,
            unlabeled,
            augmented,
            dev: encode_all(&splits.dev, &splits.labels, vocab, max_len)?,
            test: encode_all(&splits.test, &splits.labels, vocab, max_len)?,
        })
    }

    /// The same data without the unlabeled pool.
    pub fn labeled_only(&self) -> Self {
        Self {
            unlabeled: Vec::new(),
            augmented: Vec::new(),
            ..self.clone()
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSettings {
    pub encoder: EncoderConfig,
    pub mix: MixConfig,
    pub train: TrainConfig,
    pub guess: GuessConfig,
}

impl TrainSettings {
    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.mix.validate(self.encoder.num_layers)?;
        self.train.validate()?;
        self.guess.validate()
    }

    pub fn hash(&self) -> String {
        rng::hash_hex(&serde_json::to_vec(self).expect("settings serialize"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepLosses {
    pub l_tmix: f64,
    pub l_margin: f64,
    pub total: f64,
    pub draw: Option<MixDraw>,
}

/// One metric-log row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    pub epoch: usize,
    pub step: usize,
    pub l_tmix: f64,
    pub l_margin: f64,
    pub total: f64,
    pub dev_loss: f64,
    pub dev_acc: f64,
    /// Test accuracy of the selected checkpoint; only on the last row.
    pub test_acc: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    /// Mean cross-entropy against the true labels.
    pub loss: f64,
    pub accuracy: f64,
}

/// Loss and accuracy (argmax, lowest index on ties) over labeled examples.
pub fn evaluate(model: &Model, examples: &[EncodedExample]) -> Result<Evaluation> {
    if examples.is_empty() {
        return Err(Error::Validation(
            "cannot evaluate on an empty dataset".into(),
        ));
    }
    let seqs: Vec<TokenSeq> = examples.iter().map(|e| e.seq.clone()).collect();
    let probs = model.predict_proba(&seqs)?;
    let (mut loss, mut correct) = (0.0, 0usize);
    for (e, p) in examples.iter().zip(&probs) {
        let y = e
            .label
            .ok_or_else(|| Error::Validation(format!("example {:?} has no label", e.id)))?;
        loss -= p.probs()[y].max(f64::MIN_POSITIVE).ln();
        correct += usize::from(p.argmax() == y);
    }
    let n = examples.len() as f64;
    Ok(Evaluation {
        loss: loss / n,
        accuracy: correct as f64 / n,
    })
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    /// Parameters from the epoch with the best dev accuracy.
    pub best: Model,
    pub best_epoch: usize,
    pub metrics: Vec<EpochMetrics>,
    pub steps: Vec<StepLosses>,
    pub test: Option<Evaluation>,
}

pub fn write_metrics_csv(path: &Path, metrics: &[EpochMetrics]) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::io(path, csv_io(e)))?;
    for m in metrics {
        w.serialize(m).map_err(|e| Error::io(path, csv_io(e)))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<EpochMetrics>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::io(path, csv_io(e)))?;
    r.deserialize()
        .enumerate()
        .map(|(i, row)| {
            row.map_err(|e| Error::Parse {
                path: path.to_path_buf(),
                line: i + 2,
                message: e.to_string(),
            })
        })
        .collect()
}

pub(crate) fn csv_io(e: csv::Error) -> std::io::Error {
    std::io::Error::other(e.to_string())
}

/// Inputs for the margin term: the unlabeled rows and the (constant)
/// predictions on their augmentations, one `[m, C]` tensor per k.
pub struct MarginInputs<'a> {
    pub x_u: &'a TokenBatch,
    pub aug_probs: &'a [Tensor],
    pub guess: &'a GuessConfig,
    pub gamma: f64,
    pub gamma_m: f64,
}

pub struct ObjectiveVars {
    pub l_tmix: Var,
    pub l_margin: Option<Var>,
    pub total: Var,
}

/// `L_TMix + γ_m·L_margin` for one superset batch. Targets are constants;
/// the margin term is differentiable through the predictions on `x_u`.
pub fn mixtext_objective(
    tape: &mut Tape,
    bound: &Bound<'_>,
    batch: &SupersetBatch,
    mix: Option<(MixDraw, &[usize])>,
    margin: Option<MarginInputs<'_>>,
) -> Result<ObjectiveVars> {
    let x = TokenBatch::new(&batch.inputs)?;
    let (logits, targets) = match mix {
        Some((draw, partner)) => {
            let logits = tmix_forward_paired(tape, bound, &x, partner, draw)?;
            let targets = partner
                .iter()
                .enumerate()
                .map(|(r, &p)| mix_labels(&batch.labels[r], &batch.labels[p], draw.lambda))
                .collect::<Result<Vec<_>>>()?;
            (logits, targets)
        }
        None => (bound.logits(tape, &x)?, batch.labels.clone()),
    };
    let l_tmix = kl_loss(tape, &ProbLabel::stack(&targets)?, logits)?;
    let Some(m) = margin.filter(|m| m.gamma_m > 0.0) else {
        return Ok(ObjectiveVars {
            l_tmix,
            l_margin: None,
            total: l_tmix,
        });
    };
    let logits_u = bound.logits(tape, m.x_u)?;
    let p_u = tape.softmax(logits_u, 1)?;
    let y_u = guess_on_tape(tape, p_u, m.aug_probs, m.guess)?;
    let l_margin = margin_loss(tape, y_u, m.gamma)?;
    let weighted = tape.scale(l_margin, m.gamma_m);
    let total = tape.add(l_tmix, weighted)?;
    Ok(ObjectiveVars {
        l_tmix,
        l_margin: Some(l_margin),
        total,
    })
}

/// A trainer that can take single optimisation steps.
pub trait Stepper {
    fn step(&mut self) -> Result<StepLosses>;
    fn model(&self) -> &Model;
    fn data(&self) -> &TrainData;
    fn train_config(&self) -> &TrainConfig;
}

/// Runs the epoch loop, evaluating on dev after each epoch and keeping the
/// best-dev parameters.
pub fn fit<S: Stepper>(mut s: S) -> Result<TrainResult> {
    let cfg = s.train_config().clone();
    let per_epoch = cfg.steps_per_epoch(s.data().labeled.len());
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut steps = Vec::with_capacity(cfg.epochs * per_epoch);
    let mut best: Option<(f64, usize, Model)> = None;
    for epoch in 1..=cfg.epochs {
        let mut sums = [0.0; 3];
        for _ in 0..per_epoch {
            let l = s.step()?;
            sums[0] += l.l_tmix;
            sums[1] += l.l_margin;
            sums[2] += l.total;
            steps.push(l);
        }
        let n = per_epoch as f64;
        let (dev_loss, dev_acc) = if s.data().dev.is_empty() {
            (f64::NAN, f64::NAN)
        } else {
            let e = evaluate(s.model(), &s.data().dev)?;
            (e.loss, e.accuracy)
        };
        if best.as_ref().is_none_or(|(acc, _, _)| dev_acc > *acc) {
            best = Some((dev_acc, epoch, s.model().clone()));
        }
        metrics.push(EpochMetrics {
            epoch,
            step: steps.len(),
            l_tmix: sums[0] / n,
            l_margin: sums[1] / n,
            total: sums[2] / n,
            dev_loss,
            dev_acc,
            test_acc: None,
        });
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    let test = if s.data().test.is_empty() {
        None
    } else {
        Some(evaluate(&best, &s.data().test)?)
    };
    if let (Some(t), Some(last)) = (test, metrics.last_mut()) {
        last.test_acc = Some(t.accuracy);
    }
    Ok(TrainResult {
        best,
        best_epoch,
        metrics,
        steps,
        test,
    })
}

fn adam_for(model: &Model, cfg: &TrainConfig) -> Adam {
    Adam::new(
        model.params(),
        cfg.lr_encoder,
        cfg.lr_head,
        cfg.beta1,
        cfg.beta2,
        cfg.adam_eps,
    )
}

fn bind_for_step<'m>(model: &'m Model, tape: &mut Tape, seed: u64, step: usize) -> Bound<'m> {
    model
        .bind(tape, true)
        .with_dropout(rng::stream(seed, &["dropout", &step.to_string()]))
}

fn apply(model: &mut Model, adam: &mut Adam, tape: &Tape, vars: &[Var], total: Var) -> Result<()> {
    let grads = tape.backward(total)?;
    let store = model.params_mut();
    store.zero_grad();
    store.accumulate(vars, &grads);
    adam.step(store);
    Ok(())
}

/// TMix / MixText training.
pub struct Trainer<'d> {
    data: &'d TrainData,
    settings: TrainSettings,
    model: Model,
    adam: Adam,
    labeled: BatchSampler,
    unlabeled: BatchSampler,
    mix_rng: ChaCha8Rng,
    steps: usize,
    warmup_steps: usize,
}

impl<'d> Trainer<'d> {
    pub fn new(data: &'d TrainData, settings: TrainSettings) -> Result<Self> {
        settings.validate()?;
        if settings.train.mode == TrainMode::Supervised {
            return Err(Error::Config(
                "supervised mode runs through SupervisedTrainer".into(),
            ));
        }
        if data.labeled.is_empty() {
            return Err(Error::Validation("no labeled examples".into()));
        }
        if data.num_classes != settings.encoder.num_classes {
            return Err(Error::Config(format!(
                "data has {} classes, encoder expects {}",
                data.num_classes, settings.encoder.num_classes
            )));
        }
        let use_unlabeled = settings.train.mode == TrainMode::Mixtext;
        if use_unlabeled && data.augmented.iter().any(|a| a.len() != settings.guess.k) {
            return Err(Error::Contract(format!(
                "every unlabeled example needs {} augmentations",
                settings.guess.k
            )));
        }
        let model = Model::new(settings.encoder.clone())?;
        let t = &settings.train;
        let seed = t.seed;
        Ok(Self {
            data,
            adam: adam_for(&model, t),
            labeled: BatchSampler::new(
                data.labeled.len(),
                t.labeled_batch,
                rng::stream(seed, &["batches", "labeled"]),
            ),
            unlabeled: BatchSampler::new(
                if use_unlabeled {
                    data.unlabeled.len()
                } else {
                    0
                },
                t.unlabeled_batch,
                rng::stream(seed, &["batches", "unlabeled"]),
            ),
            mix_rng: rng::stream(seed, &["mix", &settings.mix.mix_seed.to_string()]),
            warmup_steps: t.warmup_epochs * t.steps_per_epoch(data.labeled.len()),
            model,
            settings,
            steps: 0,
        })
    }

    pub fn model_mut(&mut self) -> &mut Model {
        &mut self.model
    }

    pub fn settings(&self) -> &TrainSettings {
        &self.settings
    }

    /// Samples the next superset batch, guessing labels with the current model.
    fn sample(
        &self,
        l_idx: &[usize],
        u_idx: &[usize],
    ) -> Result<(SupersetBatch, Vec<TokenSeq>, Vec<Tensor>)> {
        let d = self.data;
        let labeled: Vec<&EncodedExample> = l_idx.iter().map(|&i| &d.labeled[i]).collect();
        let unlabeled: Vec<&EncodedExample> = u_idx.iter().map(|&i| &d.unlabeled[i]).collect();
        if unlabeled.is_empty() {
            let batch = build_superset(&labeled, &[], &[], &HashMap::new(), d.num_classes)?;
            return Ok((batch, Vec::new(), Vec::new()));
        }
        let k = self.settings.guess.k;
        let x_u: Vec<TokenSeq> = unlabeled.iter().map(|e| e.seq.clone()).collect();
        let aug_rows: Vec<Vec<&AugmentedRow>> = (0..k)
            .map(|ki| u_idx.iter().map(|&i| &d.augmented[i][ki]).collect())
            .collect();
        let aug_seqs: Vec<Vec<TokenSeq>> = aug_rows
            .iter()
            .map(|rows| rows.iter().map(|r| r.seq.clone()).collect())
            .collect();
        let (per_source, guesses) =
            guess_batch(&self.model, &x_u, &aug_seqs, &self.settings.guess)?;
        let guess_map: HashMap<&str, ProbLabel> = unlabeled
            .iter()
            .map(|e| e.id.as_str())
            .zip(guesses)
            .collect();
        let flat_aug: Vec<&AugmentedRow> = aug_rows.into_iter().flatten().collect();
        let batch = build_superset(&labeled, &unlabeled, &flat_aug, &guess_map, d.num_classes)?;
        let aug_probs = per_source[1..]
            .iter()
            .map(|s| ProbLabel::stack(s))
            .collect::<Result<Vec<_>>>()?;
        Ok((batch, x_u, aug_probs))
    }
}

impl Stepper for Trainer<'_> {
    fn step(&mut self) -> Result<StepLosses> {
        let draw = self.settings.mix.draw(&mut self.mix_rng)?;
        let l_idx = self.labeled.next_batch();
        let warm = self.steps < self.warmup_steps;
        let u_idx = if warm {
            Vec::new()
        } else {
            self.unlabeled.next_batch()
        };
        match self.step_on(draw, &l_idx, &u_idx) {
            Err(Error::Numeric(_)) => Err(Error::NonFinite {
                lambda: draw.map_or(1.0, |d| d.lambda),
                layer: draw.map(|d| d.layer),
                batch_ids: self.batch_ids(&l_idx, &u_idx),
            }),
            other => other,
        }
    }

    fn model(&self) -> &Model {
        &self.model
    }

    fn data(&self) -> &TrainData {
        self.data
    }

    fn train_config(&self) -> &TrainConfig {
        &self.settings.train
    }
}

impl Trainer<'_> {
    fn batch_ids(&self, l_idx: &[usize], u_idx: &[usize]) -> Vec<String> {
        let d = self.data;
        let mut ids: Vec<String> = l_idx.iter().map(|&i| d.labeled[i].id.clone()).collect();
        ids.extend(u_idx.iter().map(|&i| d.unlabeled[i].id.clone()));
        for &i in u_idx {
            ids.extend(
                d.augmented[i]
                    .iter()
                    .map(|a| format!("{}#{}", a.parent, a.k)),
            );
        }
        ids
    }

    fn step_on(
        &mut self,
        draw: Option<MixDraw>,
        l_idx: &[usize],
        u_idx: &[usize],
    ) -> Result<StepLosses> {
        let (batch, x_u, aug_probs) = self.sample(l_idx, u_idx)?;
        let partner: Vec<usize> = match draw {
            Some(_) => {
                let mut p: Vec<usize> = (0..batch.len()).collect();
                p.shuffle(&mut self.mix_rng);
                p
            }
            None => Vec::new(),
        };

        let mut tape = Tape::new();
        let bound = bind_for_step(&self.model, &mut tape, self.settings.train.seed, self.steps);
        let x_u_batch = if x_u.is_empty() {
            None
        } else {
            Some(TokenBatch::new(&x_u)?)
        };
        let t = &self.settings.train;
        let margin = x_u_batch.as_ref().map(|x| MarginInputs {
            x_u: x,
            aug_probs: &aug_probs,
            guess: &self.settings.guess,
            gamma: t.gamma,
            gamma_m: t.gamma_m,
        });
        let obj = mixtext_objective(
            &mut tape,
            &bound,
            &batch,
            draw.map(|d| (d, partner.as_slice())),
            margin,
        )?;
        let total = tape.value(obj.total).item();
        if !total.is_finite() {
            return Err(Error::Numeric(format!("loss is {total}")));
        }
        let losses = StepLosses {
            l_tmix: tape.value(obj.l_tmix).item(),
            l_margin: obj.l_margin.map_or(0.0, |m| tape.value(m).item()),
            total,
            draw,
        };
        let vars = bound.vars().to_vec();
        drop(bound);
        apply(&mut self.model, &mut self.adam, &tape, &vars, obj.total)?;
        self.steps += 1;
        Ok(losses)
    }
}

/// Plain supervised training on the labeled split with one-hot KL targets.
pub struct SupervisedTrainer<'d> {
    data: &'d TrainData,
    train: TrainConfig,
    model: Model,
    adam: Adam,
    labeled: BatchSampler,
    steps: usize,
}

impl<'d> SupervisedTrainer<'d> {
    pub fn new(data: &'d TrainData, encoder: EncoderConfig, train: TrainConfig) -> Result<Self> {
        encoder.validate()?;
        train.validate()?;
        if data.labeled.is_empty() {
            return Err(Error::Validation("no labeled examples".into()));
        }
        let model = Model::new(encoder)?;
        Ok(Self {
            data,
            adam: adam_for(&model, &train),
            labeled: BatchSampler::new(
                data.labeled.len(),
                train.labeled_batch,
                rng::stream(train.seed, &["batches", "labeled"]),
            ),
            model,
            train,
            steps: 0,
        })
    }
}

impl Stepper for SupervisedTrainer<'_> {
    fn step(&mut self) -> Result<StepLosses> {
        let idx = self.labeled.next_batch();
        let rows: Vec<&TokenSeq> = idx.iter().map(|&i| &self.data.labeled[i].seq).collect();
        let targets = idx
            .iter()
            .map(|&i| {
                let e = &self.data.labeled[i];
                ProbLabel::one_hot(e.label.expect("labeled split"), self.data.num_classes)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut tape = Tape::new();
        let bound = bind_for_step(&self.model, &mut tape, self.train.seed, self.steps);
        let logits = bound.logits(&mut tape, &TokenBatch::from_refs(&rows)?)?;
        let loss = kl_loss(&mut tape, &ProbLabel::stack(&targets)?, logits)?;
        let value = tape.value(loss).item();
        if !value.is_finite() {
            return Err(Error::NonFinite {
                lambda: 1.0,
                layer: None,
                batch_ids: idx
                    .iter()
                    .map(|&i| self.data.labeled[i].id.clone())
                    .collect(),
            });
        }
        let vars = bound.vars().to_vec();
        drop(bound);
        apply(&mut self.model, &mut self.adam, &tape, &vars, loss)?;
        self.steps += 1;
        Ok(StepLosses {
            l_tmix: value,
            l_margin: 0.0,
            total: value,
            draw: None,
        })
    }

    fn model(&self) -> &Model {
        &self.model
    }

    fn data(&self) -> &TrainData {
        self.data
    }

    fn train_config(&self) -> &TrainConfig {
        &self.train
    }
}

/// Dispatches on the configured mode; supervised mode ignores the mix and
/// guess settings.
pub fn train(data: &TrainData, settings: TrainSettings) -> Result<TrainResult> {
    if settings.train.mode == TrainMode::Supervised {
        settings.validate()?;
        return train_supervised(data, settings.encoder, settings.train);
    }
    fit(Trainer::new(data, settings)?)
}

pub fn train_supervised(
    data: &TrainData,
    encoder: EncoderConfig,
    train: TrainConfig,
) -> Result<TrainResult> {
    fit(SupervisedTrainer::new(data, encoder, train)?)
}
