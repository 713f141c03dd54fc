//! Hand-written layers with explicit forward and backward passes.

pub mod checkpoint;
pub mod conv;
pub mod dense;
pub mod gradcheck;
pub mod lstm;
pub mod model;
pub mod optim;
pub mod tensor;

pub use checkpoint::{Checkpoint, FORMAT_VERSION};
pub use conv::{conv_output_len, Activation, Conv1d, ConvTrace};
pub use dense::{softmax, Dense};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use lstm::{BiLstm, Lstm, Readout};
pub use model::{
    argmax, batch_loss, batch_loss_and_grad, predict_all, Classifier, CnnClassifier,
    ForwardTrace, ModelConfig, ModelParams, RecurrentHead,
};
pub use optim::{Optimizer, OptimizerKind};
pub use tensor::{Parameters, Tensor};

use crate::error::Result;

/// Convolution feature map, time-major `[T_out, F]`.
pub fn conv1d_forward(conv: &Conv1d, x: &[f64]) -> Result<Vec<f64>> {
    Ok(conv.forward(x)?.out)
}

/// Concatenated `[h_fwd, h_bwd]` for a time-major `[T, D]` sequence.
pub fn bilstm_forward(bilstm: &BiLstm, seq: &[f64]) -> Result<Vec<f64>> {
    Ok(bilstm.run(seq)?.output)
}

/// `softmax(W h + b)`.
pub fn dense_softmax_forward(dense: &Dense, h: &[f64]) -> Result<Vec<f64>> {
    Ok(softmax(&dense.forward(h)?))
}
