//! Training loop and k-fold evaluation protocol.
//!
//! Each fold trains on the other `k - 1` folds with cross-entropy and
//! AdamW, validates on the held-out fold after every epoch, drives the
//! plateau scheduler with the held-out loss, and keeps the parameters of the
//! epoch with the lowest held-out loss.

mod metrics;
mod optim;
mod scheduler;

use alloc::format;
use alloc::vec::Vec;
use core::ops::ControlFlow;

use rand::seq::SliceRandom;

pub use metrics::{categorical_accuracy, f1_from_counts, macro_f1, mean_and_sample_std, ConfusionMatrix};
pub use optim::{adamw_step, AdamW, OptimizerState};
pub use scheduler::{plateau_step, PlateauScheduler, SchedulerState};

use crate::autodiff::{Mode, Tape};
use crate::data::{stratified_k_fold, FoldSplit, PaddedBatch};
use crate::models::{self, argmax, ModelConfig, ModelKind, ModelParams};
use crate::{rng, Error, Real, Result};

/// Samples per evaluation forward pass.
const EVAL_BATCH: usize = 256;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub model: ModelConfig,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub lr0: f64,
    pub lr_min: f64,
    pub plateau_factor: f64,
    pub plateau_patience: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub folds: usize,
}

impl TrainConfig {
    /// Benchmark protocol defaults for one of the named models.
    pub fn for_model(kind: ModelKind) -> Self {
        Self {
            model: kind.config(),
            batch_size: kind.batch_size(),
            max_epochs: 300,
            lr0: 1e-3,
            lr_min: 1e-4,
            plateau_factor: 0.5,
            plateau_patience: 20,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            seed: 0,
            folds: 5,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        let fail = |msg: &str| Err(Error::Config(msg.into()));
        if self.batch_size == 0 {
            return fail("batch_size must be positive");
        }
        if !(self.lr_min > 0.0 && self.lr_min <= self.lr0) {
            return fail("learning rates must satisfy 0 < lr_min <= lr0");
        }
        if !(self.plateau_factor > 0.0 && self.plateau_factor < 1.0) {
            return fail("plateau_factor must lie in (0, 1)");
        }
        if self.plateau_patience == 0 {
            return fail("plateau_patience must be at least 1");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return fail("betas must lie in [0, 1)");
        }
        if self.eps <= 0.0 || self.weight_decay < 0.0 {
            return fail("eps must be positive and weight_decay non-negative");
        }
        if self.folds < 2 {
            return fail("folds must be at least 2");
        }
        Ok(())
    }

    pub fn optimizer(&self) -> AdamW {
        AdamW {
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
            weight_decay: self.weight_decay,
        }
    }

    pub fn scheduler(&self) -> PlateauScheduler {
        PlateauScheduler {
            factor: self.plateau_factor,
            patience: self.plateau_patience,
            lr_min: self.lr_min,
        }
    }

    /// Initialisation seed of a fold's model.
    pub fn init_seed(&self, fold: usize) -> u64 {
        self.seed ^ rng::stream_id(&format!("fold{fold}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub val_acc: f64,
    /// Learning rate used during this epoch.
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldMetrics {
    pub fold: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub confusion: ConfusionMatrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FoldOutcome {
    /// Parameters from the epoch with the lowest held-out loss.
    pub params: ModelParams<f32>,
    pub metrics: FoldMetrics,
    pub log: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
    /// `(sample index, predicted class)` for every held-out sample under the
    /// selected parameters.
    pub predictions: Vec<(usize, usize)>,
}

/// Loss, predictions and confusion of a model on a subset of samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    pub loss: f64,
    pub predictions: Vec<usize>,
    pub confusion: ConfusionMatrix,
}

/// Eval-mode pass over `indices` of `data`.
pub fn evaluate<T: Real>(
    config: &ModelConfig,
    params: &ModelParams<T>,
    data: &PaddedBatch<T>,
    indices: &[usize],
) -> Result<Evaluation> {
    if indices.is_empty() {
        return Err(Error::Input("cannot evaluate an empty subset".into()));
    }
    let classes = config.num_classes();
    let mut confusion = ConfusionMatrix::new(classes);
    let mut predictions = Vec::with_capacity(indices.len());
    let mut loss_sum = 0.0;
    for chunk in indices.chunks(EVAL_BATCH) {
        let batch = data.select(chunk)?;
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape)?;
        let mut rng = rng::stream(0, "eval");
        let logits = models::forward(config, &bound, &mut tape, &batch, Mode::Eval, &mut rng)?;
        let loss = tape.cross_entropy(logits, &batch.labels)?;
        loss_sum += tape.value(loss).data()[0].as_f64() * chunk.len() as f64;
        for (row, &truth) in tape.value(logits).data().chunks_exact(classes).zip(&batch.labels) {
            let pred = argmax(row);
            confusion.record(truth, pred)?;
            predictions.push(pred);
        }
    }
    Ok(Evaluation {
        loss: loss_sum / indices.len() as f64,
        predictions,
        confusion,
    })
}

fn diverged(err: Error, epoch: usize, batch: usize) -> Error {
    match err {
        Error::NonFinite { .. } => Error::Diverged {
            epoch,
            batch,
            loss: f64::NAN,
        },
        other => other,
    }
}

/// Trains one fold. `on_epoch` sees every epoch record as it is produced;
/// returning `Break` ends training after that epoch.
pub fn train_fold_with(
    data: &PaddedBatch<f32>,
    split: &FoldSplit,
    fold: usize,
    config: &TrainConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord) -> ControlFlow<()>,
) -> Result<FoldOutcome> {
    config.validate()?;
    if fold >= split.k() {
        return Err(Error::Config(format!(
            "fold {fold} out of range for {} folds",
            split.k()
        )));
    }
    let mut train_idx = split.train_indices(fold);
    let held_out = split.held_out(fold).to_vec();
    if train_idx.is_empty() || held_out.is_empty() {
        return Err(Error::Input("fold has no training or held-out samples".into()));
    }
    let model = &config.model;
    let optimizer = config.optimizer();
    let scheduler = config.scheduler();
    let mut params = models::build(model, config.init_seed(fold))?;
    let mut opt_state = OptimizerState::new(&params);
    let mut sched = SchedulerState::new(config.lr0);
    let mut shuffle_rng = rng::stream(config.seed, &format!("shuffle/fold{fold}"));
    let mut dropout_rng = rng::stream(config.seed, &format!("dropout/fold{fold}"));

    let mut log = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(usize, f64, ModelParams<f32>, Evaluation)> = None;
    for epoch in 1..=config.max_epochs {
        let lr = sched.current_lr;
        train_idx.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (b, chunk) in train_idx.chunks(config.batch_size).enumerate() {
            let batch = data.select(chunk)?;
            let mut tape = Tape::new();
            let bound = params.bind(&mut tape)?;
            let mut step = |tape: &mut Tape<f32>| -> Result<f64> {
                let logits = models::forward(model, &bound, tape, &batch, Mode::Train, &mut dropout_rng)?;
                let loss = tape.cross_entropy(logits, &batch.labels)?;
                tape.backward(loss)?;
                Ok(f64::from(tape.value(loss).data()[0]))
            };
            let loss = step(&mut tape).map_err(|e| diverged(e, epoch, b))?;
            if !loss.is_finite() {
                return Err(Error::Diverged { epoch, batch: b, loss });
            }
            let grads = bound.gradients(&tape);
            adamw_step(&optimizer, &mut params, &grads, &mut opt_state, lr)?;
            loss_sum += loss * chunk.len() as f64;
        }
        let train_loss = loss_sum / train_idx.len() as f64;
        let eval = evaluate(model, &params, data, &held_out).map_err(|e| diverged(e, epoch, 0))?;
        let record = EpochRecord {
            epoch,
            train_loss,
            val_loss: eval.loss,
            val_acc: categorical_accuracy(&eval.confusion)?,
            lr,
        };
        let flow = on_epoch(&record);
        log.push(record);
        plateau_step(&scheduler, &mut sched, eval.loss);
        if best.as_ref().is_none_or(|(_, l, _, _)| eval.loss < *l) {
            best = Some((epoch, eval.loss, params.clone(), eval));
        }
        if flow.is_break() {
            break;
        }
    }
    let (best_epoch, best_val_loss, params, eval) =
        best.ok_or_else(|| Error::Config("max_epochs must be at least 1".into()))?;
    let metrics = FoldMetrics {
        fold,
        accuracy: categorical_accuracy(&eval.confusion)?,
        macro_f1: macro_f1(&eval.confusion)?,
        confusion: eval.confusion,
    };
    Ok(FoldOutcome {
        params,
        metrics,
        log,
        best_epoch,
        best_val_loss,
        predictions: held_out.into_iter().zip(eval.predictions).collect(),
    })
}

pub fn train_fold(
    data: &PaddedBatch<f32>,
    split: &FoldSplit,
    fold: usize,
    config: &TrainConfig,
) -> Result<FoldOutcome> {
    train_fold_with(data, split, fold, config, &mut |_| ControlFlow::Continue(()))
}

/// Per-fold metrics with their mean, sample standard deviation and summed
/// confusion matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub folds: Vec<FoldMetrics>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
    pub mean_macro_f1: f64,
    pub std_macro_f1: f64,
    pub total_confusion: ConfusionMatrix,
}

impl MetricsReport {
    pub fn from_folds(folds: Vec<FoldMetrics>) -> Result<Self> {
        let first = folds
            .first()
            .ok_or_else(|| Error::Input("no folds to aggregate".into()))?;
        let mut total_confusion = ConfusionMatrix::new(first.confusion.classes());
        for f in &folds {
            total_confusion.merge(&f.confusion)?;
        }
        let acc: Vec<f64> = folds.iter().map(|f| f.accuracy).collect();
        let f1: Vec<f64> = folds.iter().map(|f| f.macro_f1).collect();
        let (mean_accuracy, std_accuracy) = mean_and_sample_std(&acc);
        let (mean_macro_f1, std_macro_f1) = mean_and_sample_std(&f1);
        Ok(Self {
            folds,
            mean_accuracy,
            std_accuracy,
            mean_macro_f1,
            std_macro_f1,
            total_confusion,
        })
    }
}

/// Stratified split used by [`run_cv`].
pub fn cv_split(data: &PaddedBatch<f32>, config: &TrainConfig) -> Result<FoldSplit> {
    stratified_k_fold(&data.labels, config.folds, config.seed)
}

/// Sequential k-fold cross-validation.
pub fn run_cv(data: &PaddedBatch<f32>, config: &TrainConfig) -> Result<(MetricsReport, Vec<FoldOutcome>)> {
    config.validate()?;
    let split = cv_split(data, config)?;
    let outcomes = (0..split.k())
        .map(|fold| train_fold(data, &split, fold, config))
        .collect::<Result<Vec<_>>>()?;
    let report = MetricsReport::from_folds(outcomes.iter().map(|o| o.metrics.clone()).collect())?;
    Ok((report, outcomes))
}
