//! The Conv1D → BiLSTM → Dense classifier, the temporary CNN head used for
//! pretraining, and batch loss/gradient evaluation shared by both.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::conv::{conv_output_len, Activation, Conv1d, ConvTrace};
use super::dense::{softmax, Dense};
use super::lstm::{BiLstm, BiLstmTrace, Lstm, Readout};
use super::tensor::{Parameters, Tensor};
use crate::error::{Error, Result};
use crate::loss::{sample_loss_and_grad, ClassWeights};
use crate::rng::{derive_seed, rng_from_seed, stream};

/// Architecture hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub input_len: usize,
    pub kernel_len: usize,
    pub stride: usize,
    pub num_filters: usize,
    pub hidden: usize,
    pub num_classes: usize,
    pub activation: Activation,
    pub readout: Readout,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_len: 5000,
            kernel_len: 160,
            stride: 160,
            num_filters: 64,
            hidden: 16,
            num_classes: 8,
            activation: Activation::Relu,
            readout: Readout::FinalState,
        }
    }
}

impl ModelConfig {
    pub fn conv_steps(&self) -> Result<usize> {
        conv_output_len(self.input_len, self.kernel_len, self.stride)
    }

    pub fn validate(&self) -> Result<()> {
        self.conv_steps()?;
        if self.num_filters == 0 || self.hidden == 0 {
            return Err(Error::Config("filters and hidden size must be positive".into()));
        }
        if self.num_classes < 2 {
            return Err(Error::Config("need at least 2 classes".into()));
        }
        Ok(())
    }
}

/// Anything that maps one input vector to class logits and can
/// backpropagate a per-sample loss.
pub trait Classifier: Parameters + Send + Sync {
    fn num_classes(&self) -> usize;

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>>;

    /// Forward and backward for one sample; `grad_logits` is applied at the
    /// logits and parameter gradients are accumulated into `grad`.
    fn accumulate_grad(&self, x: &[f64], grad_logits_fn: &dyn Fn(&[f64]) -> (f64, Vec<f64>), grad: &mut Self) -> Result<f64>;

    fn predict_proba(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(softmax(&self.logits(x)?))
    }

    fn predict(&self, x: &[f64]) -> Result<usize> {
        let p = self.logits(x)?;
        Ok(argmax(&p))
    }
}

pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Items per reduction chunk. Fixed so the floating-point summation order
/// never depends on the number of threads.
const CHUNK: usize = 8;

/// Mean weighted cross-entropy over a batch and its gradient.
///
/// Per-sample gradients are summed in item order within fixed chunks, and
/// chunk sums are added in chunk order, so results are bit-identical for any
/// thread count.
pub fn batch_loss_and_grad<C: Classifier>(
    model: &C,
    inputs: &[&[f64]],
    classes: &[usize],
    weights: &ClassWeights,
) -> Result<(f64, C)> {
    if inputs.is_empty() || inputs.len() != classes.len() {
        return Err(Error::Shape("batch inputs and labels differ in length or are empty".into()));
    }
    if weights.len() != model.num_classes() {
        return Err(Error::Shape(format!(
            "{} class weights for {} classes",
            weights.len(),
            model.num_classes()
        )));
    }
    let idx: Vec<usize> = (0..inputs.len()).collect();
    let partials = idx
        .par_chunks(CHUNK)
        .map(|chunk| -> Result<(f64, C)> {
            let mut g = model.zeros_like();
            let mut loss = 0.0;
            for &i in chunk {
                let class = classes[i];
                loss += model.accumulate_grad(
                    inputs[i],
                    &|logits| sample_loss_and_grad(&softmax(logits), class, weights),
                    &mut g,
                )?;
            }
            Ok((loss, g))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = partials.into_iter();
    let (mut loss, mut grad) = iter.next().expect("non-empty batch");
    for (l, g) in iter {
        loss += l;
        grad.add_assign(&g);
    }
    let n = inputs.len() as f64;
    grad.scale(1.0 / n);
    Ok((loss / n, grad))
}

/// Mean weighted cross-entropy without gradients.
pub fn batch_loss<C: Classifier>(
    model: &C,
    inputs: &[&[f64]],
    classes: &[usize],
    weights: &ClassWeights,
) -> Result<f64> {
    let losses = inputs
        .par_iter()
        .zip(classes.par_iter())
        .map(|(x, &c)| Ok(sample_loss_and_grad(&model.predict_proba(x)?, c, weights).0))
        .collect::<Result<Vec<f64>>>()?;
    Ok(losses.iter().sum::<f64>() / inputs.len() as f64)
}

pub fn predict_all<C: Classifier>(model: &C, inputs: &[&[f64]]) -> Result<Vec<usize>> {
    inputs.par_iter().map(|x| model.predict(x)).collect()
}

/// BiLSTM + final dense layer; consumes a conv feature sequence `[T_out, F]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RecurrentHead {
    pub bilstm: BiLstm,
    pub dense: Dense,
}

/// Cached activations from one forward pass through the recurrent head.
#[derive(Debug, Clone)]
pub struct HeadTrace {
    pub bilstm: BiLstmTrace,
    pub logits: Vec<f64>,
}

impl RecurrentHead {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Self {
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::INIT, 2]));
        let bilstm = BiLstm::init(cfg.num_filters, cfg.hidden, cfg.readout, &mut rng);
        let dense = Dense::init(2 * cfg.hidden, cfg.num_classes, &mut rng);
        RecurrentHead { bilstm, dense }
    }

    pub fn forward(&self, seq: &[f64]) -> Result<HeadTrace> {
        let bilstm = self.bilstm.run(seq)?;
        let logits = self.dense.forward(&bilstm.output)?;
        Ok(HeadTrace { bilstm, logits })
    }

    /// Returns `d(loss)/d(seq)`.
    pub fn backward(
        &self,
        seq: &[f64],
        trace: &HeadTrace,
        grad_logits: &[f64],
        grad: &mut RecurrentHead,
    ) -> Result<Vec<f64>> {
        let gh = self.dense.backward(&trace.bilstm.output, grad_logits, &mut grad.dense)?;
        self.bilstm.backprop(seq, &trace.bilstm, &gh, &mut grad.bilstm)
    }
}

fn lstm_tensors(l: &Lstm) -> [&Tensor; 3] {
    [&l.w_input, &l.w_recurrent, &l.bias]
}

fn lstm_tensors_mut(l: &mut Lstm) -> [&mut Tensor; 3] {
    [&mut l.w_input, &mut l.w_recurrent, &mut l.bias]
}

impl Parameters for RecurrentHead {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let [a, b, c] = lstm_tensors(&self.bilstm.forward);
        let [d, e, f] = lstm_tensors(&self.bilstm.backward);
        vec![
            ("lstm_fwd.w_input", a),
            ("lstm_fwd.w_recurrent", b),
            ("lstm_fwd.bias", c),
            ("lstm_bwd.w_input", d),
            ("lstm_bwd.w_recurrent", e),
            ("lstm_bwd.bias", f),
            ("dense.weights", &self.dense.weights),
            ("dense.bias", &self.dense.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let [a, b, c] = lstm_tensors_mut(&mut self.bilstm.forward);
        let [d, e, f] = lstm_tensors_mut(&mut self.bilstm.backward);
        vec![
            ("lstm_fwd.w_input", a),
            ("lstm_fwd.w_recurrent", b),
            ("lstm_fwd.bias", c),
            ("lstm_bwd.w_input", d),
            ("lstm_bwd.w_recurrent", e),
            ("lstm_bwd.bias", f),
            ("dense.weights", &mut self.dense.weights),
            ("dense.bias", &mut self.dense.bias),
        ]
    }
}

impl Classifier for RecurrentHead {
    fn num_classes(&self) -> usize {
        self.dense.output()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward(x)?.logits)
    }

    fn accumulate_grad(
        &self,
        x: &[f64],
        f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
        grad: &mut Self,
    ) -> Result<f64> {
        let trace = self.forward(x)?;
        let (loss, gl) = f(&trace.logits);
        self.backward(x, &trace, &gl, grad)?;
        Ok(loss)
    }
}

/// Full model: convolution, bidirectional LSTM, dense output.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: ModelConfig,
    pub conv: Conv1d,
    pub head: RecurrentHead,
}

/// Everything the backward pass needs from a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardTrace {
    pub input_len: usize,
    pub conv: ConvTrace,
    pub head: HeadTrace,
    /// Softmax of the logits.
    pub probs: Vec<f64>,
}

impl ModelParams {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let conv = init_conv(cfg, seed);
        Ok(ModelParams { config: *cfg, conv, head: RecurrentHead::init(cfg, seed) })
    }

    pub fn from_parts(conv: Conv1d, head: RecurrentHead, config: ModelConfig) -> Self {
        ModelParams { config, conv, head }
    }

    pub fn forward(&self, x: &[f64]) -> Result<ForwardTrace> {
        let conv = self.conv.forward(x)?;
        let head = self.head.forward(&conv.out)?;
        let probs = softmax(&head.logits);
        Ok(ForwardTrace { input_len: x.len(), conv, head, probs })
    }

    /// Backpropagate `grad_logits` from a matching forward pass. Parameter
    /// gradients are accumulated into `grad`; returns `d(loss)/d(x)`.
    pub fn backward(
        &self,
        x: &[f64],
        trace: &ForwardTrace,
        grad_logits: &[f64],
        grad: &mut ModelParams,
    ) -> Result<Vec<f64>> {
        if trace.input_len != x.len() || grad_logits.len() != self.config.num_classes {
            return Err(Error::Shape("forward trace does not match backward call".into()));
        }
        let g_seq = self.head.backward(&trace.conv.out, &trace.head, grad_logits, &mut grad.head)?;
        let gx = self.conv.backward(x, &trace.conv, &g_seq, &mut grad.conv, true)?;
        Ok(gx.expect("input gradient requested"))
    }
}

fn init_conv(cfg: &ModelConfig, seed: u64) -> Conv1d {
    let mut rng = rng_from_seed(derive_seed(seed, &[stream::INIT, 1]));
    let mut conv = Conv1d::init(cfg.num_filters, cfg.kernel_len, cfg.stride, &mut rng);
    conv.activation = cfg.activation;
    conv
}

impl Parameters for ModelParams {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        let mut v = vec![("conv.filters", &self.conv.filters), ("conv.bias", &self.conv.bias)];
        v.extend(self.head.tensors());
        v
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        let mut v: Vec<(&'static str, &mut Tensor)> =
            vec![("conv.filters", &mut self.conv.filters), ("conv.bias", &mut self.conv.bias)];
        v.extend(self.head.tensors_mut());
        v
    }
}

impl Classifier for ModelParams {
    fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        let conv = self.conv.forward(x)?;
        Ok(self.head.forward(&conv.out)?.logits)
    }

    fn accumulate_grad(
        &self,
        x: &[f64],
        f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
        grad: &mut Self,
    ) -> Result<f64> {
        let trace = self.forward(x)?;
        let (loss, gl) = f(&trace.head.logits);
        let g_seq = self.head.backward(&trace.conv.out, &trace.head, &gl, &mut grad.head)?;
        self.conv.backward(x, &trace.conv, &g_seq, &mut grad.conv, false)?;
        Ok(loss)
    }
}

/// Convolution followed by a temporary dense classifier over the flattened
/// feature map; used only to pretrain the filters.
#[derive(Debug, Clone, PartialEq)]
pub struct CnnClassifier {
    pub conv: Conv1d,
    pub head: Dense,
}

impl CnnClassifier {
    pub fn init(cfg: &ModelConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let conv = init_conv(cfg, seed);
        let mut rng = rng_from_seed(derive_seed(seed, &[stream::INIT, 3]));
        let head = Dense::init(cfg.conv_steps()? * cfg.num_filters, cfg.num_classes, &mut rng);
        Ok(CnnClassifier { conv, head })
    }
}

impl Parameters for CnnClassifier {
    fn tensors(&self) -> Vec<(&'static str, &Tensor)> {
        vec![
            ("conv.filters", &self.conv.filters),
            ("conv.bias", &self.conv.bias),
            ("head.weights", &self.head.weights),
            ("head.bias", &self.head.bias),
        ]
    }

    fn tensors_mut(&mut self) -> Vec<(&'static str, &mut Tensor)> {
        vec![
            ("conv.filters", &mut self.conv.filters),
            ("conv.bias", &mut self.conv.bias),
            ("head.weights", &mut self.head.weights),
            ("head.bias", &mut self.head.bias),
        ]
    }
}

impl Classifier for CnnClassifier {
    fn num_classes(&self) -> usize {
        self.head.output()
    }

    fn logits(&self, x: &[f64]) -> Result<Vec<f64>> {
        self.head.forward(&self.conv.forward(x)?.out)
    }

    fn accumulate_grad(
        &self,
        x: &[f64],
        f: &dyn Fn(&[f64]) -> (f64, Vec<f64>),
        grad: &mut Self,
    ) -> Result<f64> {
        let trace = self.conv.forward(x)?;
        let logits = self.head.forward(&trace.out)?;
        let (loss, gl) = f(&logits);
        let g_feat = self.head.backward(&trace.out, &gl, &mut grad.head)?;
        self.conv.backward(x, &trace, &g_feat, &mut grad.conv, false)?;
        Ok(loss)
    }
}
