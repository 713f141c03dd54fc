use serde::{Deserialize, Serialize};

use super::tensor::{glorot_limit, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Linear,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Linear => x,
        }
    }

    /// Derivative at pre-activation `x`; ReLU uses 0 at the kink.
    fn derivative(self, x: f64) -> f64 {
        match self {
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Linear => 1.0,
        }
    }
}

/// Single-channel 1D convolution with `F` filters and valid padding.
///
/// Output is stored time-major: `out[t * F + f]` is filter `f` at step `t`,
/// which is exactly the `[T_out, F]` sequence the recurrent layer reads.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv1d {
    /// `[F, K]`
    pub filters: Tensor,
    /// `[F]`
    pub bias: Tensor,
    pub stride: usize,
    pub activation: Activation,
}

/// Cached values from a convolution forward pass.
#[derive(Debug, Clone)]
pub struct ConvTrace {
    pub pre: Vec<f64>,
    pub out: Vec<f64>,
    pub steps: usize,
}

pub fn conv_output_len(input_len: usize, kernel_len: usize, stride: usize) -> Result<usize> {
    if kernel_len == 0 || stride == 0 {
        return Err(Error::Shape("kernel length and stride must be positive".into()));
    }
    if kernel_len > input_len {
        return Err(Error::Shape(format!(
            "kernel length {kernel_len} exceeds input length {input_len}"
        )));
    }
    Ok((input_len - kernel_len) / stride + 1)
}

impl Conv1d {
    pub fn init(num_filters: usize, kernel_len: usize, stride: usize, rng: &mut Rng) -> Self {
        let limit = glorot_limit(kernel_len, num_filters);
        Conv1d {
            filters: Tensor::uniform(&[num_filters, kernel_len], limit, rng),
            bias: Tensor::zeros(&[num_filters]),
            stride,
            activation: Activation::Relu,
        }
    }

    pub fn num_filters(&self) -> usize {
        self.filters.shape[0]
    }

    pub fn kernel_len(&self) -> usize {
        self.filters.shape[1]
    }

    pub fn forward(&self, x: &[f64]) -> Result<ConvTrace> {
        let (nf, k) = (self.num_filters(), self.kernel_len());
        let steps = conv_output_len(x.len(), k, self.stride)?;
        let mut pre = vec![0.0; steps * nf];
        for t in 0..steps {
            let window = &x[t * self.stride..t * self.stride + k];
            for f in 0..nf {
                let w = &self.filters.data[f * k..(f + 1) * k];
                pre[t * nf + f] = self.bias.data[f] + dot(w, window);
            }
        }
        let out = pre.iter().map(|&v| self.activation.apply(v)).collect();
        Ok(ConvTrace { pre, out, steps })
    }

    /// Accumulate parameter gradients into `grad` given `d(loss)/d(out)`.
    /// Returns the input gradient when `want_input` is set.
    pub fn backward(
        &self,
        x: &[f64],
        trace: &ConvTrace,
        grad_out: &[f64],
        grad: &mut Conv1d,
        want_input: bool,
    ) -> Result<Option<Vec<f64>>> {
        let (nf, k) = (self.num_filters(), self.kernel_len());
        if grad_out.len() != trace.steps * nf || trace.pre.len() != grad_out.len() {
            return Err(Error::Shape(format!(
                "conv upstream gradient has {} values, trace expects {}",
                grad_out.len(),
                trace.steps * nf
            )));
        }
        let mut grad_x = want_input.then(|| vec![0.0; x.len()]);
        for t in 0..trace.steps {
            let start = t * self.stride;
            let window = &x[start..start + k];
            for f in 0..nf {
                let g = grad_out[t * nf + f] * self.activation.derivative(trace.pre[t * nf + f]);
                if g == 0.0 {
                    continue;
                }
                grad.bias.data[f] += g;
                let gw = &mut grad.filters.data[f * k..(f + 1) * k];
                for (a, xv) in gw.iter_mut().zip(window) {
                    *a += g * xv;
                }
                if let Some(gx) = grad_x.as_mut() {
                    let w = &self.filters.data[f * k..(f + 1) * k];
                    for (a, wv) in gx[start..start + k].iter_mut().zip(w) {
                        *a += g * wv;
                    }
                }
            }
        }
        Ok(grad_x)
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
