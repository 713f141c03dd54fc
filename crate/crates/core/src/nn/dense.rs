use super::conv::dot;
use super::tensor::{glorot_limit, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

/// Fully connected layer `o = W h + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `[out, in]`
    pub weights: Tensor,
    /// `[out]`
    pub bias: Tensor,
}

impl Dense {
    pub fn init(input: usize, output: usize, rng: &mut Rng) -> Self {
        Dense {
            weights: Tensor::uniform(&[output, input], glorot_limit(input, output), rng),
            bias: Tensor::zeros(&[output]),
        }
    }

    pub fn input(&self) -> usize {
        self.weights.shape[1]
    }

    pub fn output(&self) -> usize {
        self.weights.shape[0]
    }

    pub fn forward(&self, h: &[f64]) -> Result<Vec<f64>> {
        let n = self.input();
        if h.len() != n {
            return Err(Error::Shape(format!("dense input has {} values, expected {n}", h.len())));
        }
        Ok((0..self.output())
            .map(|r| self.bias.data[r] + dot(&self.weights.data[r * n..(r + 1) * n], h))
            .collect())
    }

    /// Accumulate into `grad` and return `d(loss)/d(h)`.
    pub fn backward(&self, h: &[f64], grad_out: &[f64], grad: &mut Dense) -> Result<Vec<f64>> {
        let n = self.input();
        if grad_out.len() != self.output() || h.len() != n {
            return Err(Error::Shape("dense gradient does not match layer shape".into()));
        }
        let mut gh = vec![0.0; n];
        for (r, &g) in grad_out.iter().enumerate() {
            grad.bias.data[r] += g;
            let w = &self.weights.data[r * n..(r + 1) * n];
            let gw = &mut grad.weights.data[r * n..(r + 1) * n];
            for k in 0..n {
                gw[k] += g * h[k];
                gh[k] += g * w[k];
            }
        }
        Ok(gh)
    }
}

/// Softmax with max subtraction.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = logits.iter().map(|x| (x - m).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|x| x / s).collect()
}
