//! Two-stage training and the end-to-end experiment.
//!
//! Stage one trains the convolution together with a temporary dense
//! classifier over the flattened feature map. Stage two freezes the
//! convolution, discards the temporary head and trains a bidirectional LSTM
//! plus a new dense classifier on the frozen features. Both stages keep the
//! weights from the epoch with the lowest validation loss and stop after
//! `patience` epochs without improvement.

use std::collections::BTreeSet;

use log::{debug, info};
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{balance_by_downsampling, class_counts, stratified_split, LabeledDataset, SplitSpec};
use crate::error::{Error, Result};
use crate::loss::{class_weights, ClassWeights};
use crate::metrics::{confusion, ConfusionMatrix, MetricsReport};
use crate::nn::{
    batch_loss, batch_loss_and_grad, predict_all, Classifier, CnnClassifier, Conv1d, ModelConfig,
    ModelParams, Optimizer, OptimizerKind, Readout, RecurrentHead,
};
use crate::preprocess::{fit_standardizer, preprocess_all, FixedVector, PreprocessConfig, Standardizer};
use crate::rng::{derive_seed, rng_from_seed, stream};
use crate::synth::CLASS_NAMES;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ImbalanceMode {
    /// Reduce every class to the smallest class size before splitting.
    Downsample,
    /// Keep all data; weight the loss by `max(L) / L` from training counts.
    #[default]
    ClassWeighted,
    /// Keep all data with uniform weights (control runs).
    Unweighted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub kernel_len: usize,
    pub num_filters: usize,
    pub hidden_size: usize,
    pub stride: usize,
    pub readout: Readout,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub max_epochs: usize,
    pub patience: usize,
    pub imbalance_mode: ImbalanceMode,
    pub merge_train_val: bool,
    pub seed: u64,
    pub split: [f64; 3],
    pub preprocess: PreprocessConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 256,
            kernel_len: 160,
            num_filters: 64,
            hidden_size: 16,
            stride: 160,
            readout: Readout::FinalState,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            max_epochs: 50,
            patience: 10,
            imbalance_mode: ImbalanceMode::ClassWeighted,
            merge_train_val: true,
            seed: 0,
            split: [0.6, 0.2, 0.2],
            preprocess: PreprocessConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn model_config(&self, num_classes: usize) -> ModelConfig {
        ModelConfig {
            input_len: self.preprocess.length,
            kernel_len: self.kernel_len,
            stride: self.stride,
            num_filters: self.num_filters,
            hidden: self.hidden_size,
            num_classes,
            readout: self.readout,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config("learning_rate must be positive".into()));
        }
        if self.kernel_len > self.preprocess.length {
            return Err(Error::Config(format!(
                "kernel_len {} exceeds input length {}",
                self.kernel_len, self.preprocess.length
            )));
        }
        SplitSpec { fractions: self.split, seed: self.seed }.validate()?;
        self.model_config(2).validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    CnnPretrain,
    LstmTrain,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// History of one stage. Epoch 0 is the untrained initialisation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageReport {
    pub stage: Stage,
    pub epochs: Vec<EpochRecord>,
    /// Epoch whose weights were kept.
    pub best_epoch: usize,
    /// Whether this was a fixed-length run on merged train + validation data.
    pub fixed_epochs: bool,
}

impl StageReport {
    pub fn best(&self) -> Option<&EpochRecord> {
        self.epochs.iter().find(|e| e.epoch == self.best_epoch)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub imbalance_mode: ImbalanceMode,
    pub class_weights: ClassWeights,
    pub stages: Vec<StageReport>,
}

impl TrainReport {
    /// Validation accuracy of the kept second-stage model.
    pub fn final_val_accuracy(&self) -> Option<f64> {
        self.stages
            .iter()
            .rev()
            .find(|s| s.stage == Stage::LstmTrain && !s.fixed_epochs)
            .and_then(|s| s.best())
            .and_then(|e| e.val_accuracy)
    }
}

/// Preprocessed inputs with zero-based class indices.
#[derive(Debug, Clone)]
pub struct Batchable {
    pub inputs: Vec<Vec<f64>>,
    pub classes: Vec<usize>,
    pub ids: Vec<usize>,
}

impl Batchable {
    pub fn from_vectors(vs: &[FixedVector]) -> Self {
        Batchable {
            inputs: vs.iter().map(|v| v.values.clone()).collect(),
            classes: vs.iter().map(|v| v.class_index()).collect(),
            ids: vs.iter().map(|v| v.id).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.inputs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.inputs.is_empty()
    }

    fn refs(&self) -> Vec<&[f64]> {
        self.inputs.iter().map(|x| x.as_slice()).collect()
    }
}

/// How long to train and whether validation drives model selection.
#[derive(Debug, Clone, Copy)]
enum Schedule {
    EarlyStopping { max_epochs: usize, patience: usize },
    Fixed(usize),
}

fn accuracy_of<C: Classifier>(model: &C, data: &Batchable) -> Result<f64> {
    let pred = predict_all(model, &data.refs())?;
    let right = pred.iter().zip(&data.classes).filter(|(p, c)| p == c).count();
    Ok(right as f64 / data.len() as f64)
}

fn check_finite(v: f64, epoch: usize, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Training { epoch, message: format!("{what} is not finite") })
    }
}

/// Mini-batch training loop shared by both stages.
fn fit<C: Classifier>(
    mut model: C,
    train: &Batchable,
    val: Option<&Batchable>,
    weights: &ClassWeights,
    cfg: &TrainConfig,
    schedule: Schedule,
    stage: Stage,
) -> Result<(C, StageReport)> {
    let fixed = matches!(schedule, Schedule::Fixed(_));
    let max_epochs = match schedule {
        Schedule::EarlyStopping { max_epochs, .. } => max_epochs,
        Schedule::Fixed(n) => n,
    };
    let mut report = StageReport { stage, epochs: Vec::new(), best_epoch: 0, fixed_epochs: fixed };
    if max_epochs == 0 {
        return Ok((model, report));
    }
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    let batch = cfg.batch_size.min(train.len());
    let train_refs = train.refs();
    let evaluate = |m: &C, epoch: usize| -> Result<EpochRecord> {
        let train_loss = check_finite(batch_loss(m, &train_refs, &train.classes, weights)?, epoch, "training loss")?;
        let (val_loss, val_accuracy) = match val {
            Some(v) => {
                let l = batch_loss(m, &v.refs(), &v.classes, weights)?;
                (Some(check_finite(l, epoch, "validation loss")?), Some(accuracy_of(m, v)?))
            }
            None => (None, None),
        };
        Ok(EpochRecord { epoch, train_loss, val_loss, val_accuracy })
    };

    let mut optimizer = Optimizer::new(cfg.optimizer, cfg.learning_rate);
    let first = evaluate(&model, 0)?;
    let mut best_score = first.val_loss.unwrap_or(f64::INFINITY);
    let mut best_model = model.clone();
    report.epochs.push(first);
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..train.len()).collect();
    let stage_tag = stage as u64;

    for epoch in 1..=max_epochs {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, &[stream::SHUFFLE, stage_tag, epoch as u64]));
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            let xs: Vec<&[f64]> = chunk.iter().map(|&i| train_refs[i]).collect();
            let ys: Vec<usize> = chunk.iter().map(|&i| train.classes[i]).collect();
            let (loss, grads) = batch_loss_and_grad(&model, &xs, &ys, weights)?;
            check_finite(loss, epoch, "batch loss")?;
            optimizer.step(&mut model, &grads, &[]).map_err(|e| match e {
                Error::NonFiniteGradient { layer } => Error::Training {
                    epoch,
                    message: format!("non-finite gradient in {layer}"),
                },
                other => other,
            })?;
        }
        let record = evaluate(&model, epoch)?;
        debug!(
            "{stage:?} epoch {epoch}: train {:.4} val {:?} acc {:?}",
            record.train_loss, record.val_loss, record.val_accuracy
        );
        match (schedule, record.val_loss) {
            (Schedule::Fixed(_), _) | (_, None) => {
                best_model = model.clone();
                report.best_epoch = epoch;
            }
            (Schedule::EarlyStopping { patience, .. }, Some(vl)) => {
                if vl < best_score {
                    best_score = vl;
                    best_model = model.clone();
                    report.best_epoch = epoch;
                    since_best = 0;
                } else {
                    since_best += 1;
                }
                report.epochs.push(record);
                if since_best >= patience.max(1) {
                    info!("{stage:?}: early stop at epoch {epoch}, best {}", report.best_epoch);
                    break;
                }
                continue;
            }
        }
        report.epochs.push(record);
    }
    Ok((best_model, report))
}

fn schedule_for(cfg: &TrainConfig, fixed: Option<usize>) -> Schedule {
    match fixed {
        Some(n) => Schedule::Fixed(n),
        None => Schedule::EarlyStopping { max_epochs: cfg.max_epochs, patience: cfg.patience },
    }
}

/// Stage one: train the convolution with a temporary dense head and return
/// the filters from the best epoch. The head is discarded.
pub fn pretrain_cnn(
    train: &Batchable,
    val: &Batchable,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(Conv1d, StageReport)> {
    pretrain_inner(train, Some(val), model_cfg, cfg, weights, None)
}

fn pretrain_inner(
    train: &Batchable,
    val: Option<&Batchable>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    fixed: Option<usize>,
) -> Result<(Conv1d, StageReport)> {
    let init = CnnClassifier::init(model_cfg, cfg.seed)?;
    let (trained, report) =
        fit(init, train, val, weights, cfg, schedule_for(cfg, fixed), Stage::CnnPretrain)?;
    Ok((trained.conv, report))
}

/// Run the frozen convolution over every input once.
pub fn conv_features(conv: &Conv1d, data: &Batchable) -> Result<Batchable> {
    let inputs = data
        .inputs
        .par_iter()
        .map(|x| Ok(conv.forward(x)?.out))
        .collect::<Result<Vec<_>>>()?;
    Ok(Batchable { inputs, classes: data.classes.clone(), ids: data.ids.clone() })
}

/// Stage two: with `conv` frozen, train the BiLSTM and final dense layer.
pub fn train_full(
    conv: &Conv1d,
    train: &Batchable,
    val: &Batchable,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: &ClassWeights,
) -> Result<(ModelParams, StageReport)> {
    train_full_inner(conv, train, Some(val), model_cfg, cfg, weights, None)
}

fn train_full_inner(
    conv: &Conv1d,
    train: &Batchable,
    val: Option<&Batchable>,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    fixed: Option<usize>,
) -> Result<(ModelParams, StageReport)> {
    // The convolution only ever runs forward from here on, so it cannot change.
    let train_f = conv_features(conv, train)?;
    let val_f = val.map(|v| conv_features(conv, v)).transpose()?;
    let head = RecurrentHead::init(model_cfg, cfg.seed);
    let (head, report) = fit(
        head,
        &train_f,
        val_f.as_ref(),
        weights,
        cfg,
        schedule_for(cfg, fixed),
        Stage::LstmTrain,
    )?;
    Ok((ModelParams::from_parts(conv.clone(), head, *model_cfg), report))
}

/// Confusion matrix and metrics of `model` on preprocessed vectors.
pub fn evaluate_model(model: &ModelParams, data: &Batchable) -> Result<(ConfusionMatrix, MetricsReport)> {
    let pred = predict_all(model, &data.refs())?;
    let m = model.config.num_classes;
    let truth: Vec<usize> = data.classes.iter().map(|c| c + 1).collect();
    let pred: Vec<usize> = pred.into_iter().map(|c| c + 1).collect();
    let cm = confusion(&truth, &pred, m)?;
    let names: Vec<&str> = CLASS_NAMES.iter().take(m).copied().collect();
    let report = MetricsReport::from_confusion(&cm, &names)?;
    Ok((cm, report))
}

/// Everything produced by [`run_experiment`].
#[derive(Debug, Clone)]
pub struct ExperimentOutcome {
    pub model: ModelParams,
    pub standardizer: Standardizer,
    pub report: TrainReport,
    pub confusion: ConfusionMatrix,
    pub metrics: MetricsReport,
    pub train: LabeledDataset,
    pub validation: LabeledDataset,
    pub test: LabeledDataset,
    /// Accuracy of the stage-one temporary head on the test set.
    pub pretrain_test_accuracy: f64,
}

/// Fit a standardizer on `train` and check it saw exactly the training ids.
pub fn fit_audited(train: &[FixedVector]) -> Result<Standardizer> {
    let s = fit_standardizer(train)?;
    let expected: BTreeSet<usize> = train.iter().map(|v| v.id).collect();
    let used: BTreeSet<usize> = s.fitted_on.iter().copied().collect();
    if expected != used {
        return Err(Error::Fit("standardizer was fitted on non-training items".into()));
    }
    Ok(s)
}

fn weights_for(mode: ImbalanceMode, train: &LabeledDataset) -> Result<ClassWeights> {
    match mode {
        ImbalanceMode::ClassWeighted => class_weights(&class_counts(train)?),
        ImbalanceMode::Downsample | ImbalanceMode::Unweighted => {
            Ok(ClassWeights::uniform(train.num_classes()))
        }
    }
}

fn prepare(
    train: &LabeledDataset,
    others: &[&LabeledDataset],
    cfg: &TrainConfig,
) -> Result<(Standardizer, Batchable, Vec<Batchable>)> {
    let raw_train = preprocess_all(train.items(), &cfg.preprocess)?;
    let s = fit_audited(&raw_train)?;
    let train_b = Batchable::from_vectors(&s.apply_all(&raw_train)?);
    let rest = others
        .iter()
        .map(|d| {
            let v = preprocess_all(d.items(), &cfg.preprocess)?;
            Ok(Batchable::from_vectors(&s.apply_all(&v)?))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((s, train_b, rest))
}

/// Split, balance, preprocess, train both stages and evaluate on the test set.
///
/// With `merge_train_val`, a first pass on train/validation picks the epoch
/// counts; the final model is then retrained from the same initialisation
/// on train + validation for exactly those counts.
pub fn run_experiment(data: &LabeledDataset, cfg: &TrainConfig) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    let data = match cfg.imbalance_mode {
        ImbalanceMode::Downsample => balance_by_downsampling(data, cfg.seed)?,
        _ => data.clone(),
    };
    let spec = SplitSpec { fractions: cfg.split, seed: cfg.seed };
    let (train, val, test) = stratified_split(&data, &spec)?;
    info!("split sizes: train {} val {} test {}", train.len(), val.len(), test.len());
    if val.is_empty() || test.is_empty() {
        return Err(Error::Data("validation or test split is empty".into()));
    }
    let model_cfg = cfg.model_config(data.num_classes());

    let (mut standardizer, train_b, rest) = prepare(&train, &[&val, &test], cfg)?;
    let (val_b, mut test_b) = (rest[0].clone(), rest[1].clone());
    let mut weights = weights_for(cfg.imbalance_mode, &train)?;

    let (conv, pre_report) = pretrain_cnn(&train_b, &val_b, &model_cfg, cfg, &weights)?;
    let (mut model, full_report) = train_full(&conv, &train_b, &val_b, &model_cfg, cfg, &weights)?;
    let mut stages = vec![pre_report, full_report];
    let mut pretrain_test_accuracy = pretrain_head_accuracy(&conv, &train_b, &test_b, &model_cfg, cfg, &weights, stages[0].best_epoch)?;

    if cfg.merge_train_val {
        let merged = train.merged(&val)?;
        let (s, merged_b, rest) = prepare(&merged, &[&test], cfg)?;
        standardizer = s;
        test_b = rest[0].clone();
        weights = weights_for(cfg.imbalance_mode, &merged)?;
        let (e1, e2) = (stages[0].best_epoch, stages[1].best_epoch);
        let (conv, r1) = pretrain_inner(&merged_b, None, &model_cfg, cfg, &weights, Some(e1))?;
        let (m, r2) = train_full_inner(&conv, &merged_b, None, &model_cfg, cfg, &weights, Some(e2))?;
        pretrain_test_accuracy = pretrain_head_accuracy(&conv, &merged_b, &test_b, &model_cfg, cfg, &weights, e1)?;
        model = m;
        stages.push(r1);
        stages.push(r2);
    }

    let (cm, metrics) = evaluate_model(&model, &test_b)?;
    info!("test: {}", metrics.summary_line());
    Ok(ExperimentOutcome {
        model,
        standardizer,
        report: TrainReport { imbalance_mode: cfg.imbalance_mode, class_weights: weights, stages },
        confusion: cm,
        metrics,
        train,
        validation: val,
        test,
        pretrain_test_accuracy,
    })
}

/// Test accuracy of the stage-one classifier, rebuilt deterministically
/// by replaying stage one for `epochs` epochs without validation.
fn pretrain_head_accuracy(
    conv: &Conv1d,
    train: &Batchable,
    test: &Batchable,
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    weights: &ClassWeights,
    epochs: usize,
) -> Result<f64> {
    let init = CnnClassifier::init(model_cfg, cfg.seed)?;
    let (trained, _) = fit(init, train, None, weights, cfg, Schedule::Fixed(epochs), Stage::CnnPretrain)?;
    debug_assert!(epochs == 0 || trained.conv.filters.data.len() == conv.filters.data.len());
    accuracy_of(&trained, test)
}
