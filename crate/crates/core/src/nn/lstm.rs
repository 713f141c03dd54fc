//! LSTM cell without peepholes, and the bidirectional wrapper.
//!
//! Gate blocks are stacked in the order input, forget, cell, output:
//!
//! ```text
//! z_t = W_x x_t + W_h h_{t-1} + b
//! i = sigmoid(z_i)   f = sigmoid(z_f)   g = tanh(z_g)   o = sigmoid(z_o)
//! c_t = f * c_{t-1} + i * g
//! h_t = o * tanh(c_t)
//! ```
//!
//! Backward is full backpropagation through time over the whole sequence.

use serde::{Deserialize, Serialize};

use super::conv::dot;
use super::tensor::{glorot_limit, Tensor};
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Lstm {
    /// `[4H, D]`
    pub w_input: Tensor,
    /// `[4H, H]`
    pub w_recurrent: Tensor,
    /// `[4H]`
    pub bias: Tensor,
}

/// Per-step activations kept for the backward pass.
#[derive(Debug, Clone)]
pub struct LstmTrace {
    /// Post-activation gates, `[T, 4H]`.
    pub gates: Vec<f64>,
    /// Cell states `c_1..c_T`, `[T, H]`.
    pub cells: Vec<f64>,
    /// `tanh(c_t)`, `[T, H]`.
    pub cell_tanh: Vec<f64>,
    /// Hidden states `h_1..h_T`, `[T, H]`.
    pub hidden: Vec<f64>,
    pub steps: usize,
}

impl LstmTrace {
    pub fn h(&self, t: usize, hidden: usize) -> &[f64] {
        &self.hidden[t * hidden..(t + 1) * hidden]
    }

    pub fn final_hidden(&self, hidden: usize) -> &[f64] {
        self.h(self.steps - 1, hidden)
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl Lstm {
    /// Input weights use a Glorot limit over `(D, 4H)`, recurrent weights
    /// over `(H, 4H)`; biases are zero except the forget gate, which is 1.
    pub fn init(input: usize, hidden: usize, rng: &mut Rng) -> Self {
        let w_input = Tensor::uniform(&[4 * hidden, input], glorot_limit(input, 4 * hidden), rng);
        let w_recurrent =
            Tensor::uniform(&[4 * hidden, hidden], glorot_limit(hidden, 4 * hidden), rng);
        let mut bias = Tensor::zeros(&[4 * hidden]);
        bias.data[hidden..2 * hidden].iter_mut().for_each(|b| *b = 1.0);
        Lstm { w_input, w_recurrent, bias }
    }

    pub fn hidden(&self) -> usize {
        self.w_recurrent.shape[1]
    }

    pub fn input(&self) -> usize {
        self.w_input.shape[1]
    }

    /// Run over `seq` (`[T, D]`, time-major), optionally visiting steps in
    /// reverse. The trace is always indexed by processing order.
    pub fn forward(&self, seq: &[f64], reverse: bool) -> Result<LstmTrace> {
        let (d, h) = (self.input(), self.hidden());
        if seq.is_empty() || seq.len() % d != 0 {
            return Err(Error::Shape(format!(
                "LSTM input of {} values is not a non-empty multiple of {d}",
                seq.len()
            )));
        }
        let steps = seq.len() / d;
        let mut gates = vec![0.0; steps * 4 * h];
        let mut cells = vec![0.0; steps * h];
        let mut cell_tanh = vec![0.0; steps * h];
        let mut hidden = vec![0.0; steps * h];
        let mut z = vec![0.0; 4 * h];
        for step in 0..steps {
            let t = if reverse { steps - 1 - step } else { step };
            let x = &seq[t * d..(t + 1) * d];
            for (r, zr) in z.iter_mut().enumerate() {
                let mut acc = self.bias.data[r] + dot(&self.w_input.data[r * d..(r + 1) * d], x);
                if step > 0 {
                    let hp = &hidden[(step - 1) * h..step * h];
                    acc += dot(&self.w_recurrent.data[r * h..(r + 1) * h], hp);
                }
                *zr = acc;
            }
            let gs = &mut gates[step * 4 * h..(step + 1) * 4 * h];
            for j in 0..h {
                gs[j] = sigmoid(z[j]);
                gs[h + j] = sigmoid(z[h + j]);
                gs[2 * h + j] = z[2 * h + j].tanh();
                gs[3 * h + j] = sigmoid(z[3 * h + j]);
            }
            for j in 0..h {
                let c_prev = if step > 0 { cells[(step - 1) * h + j] } else { 0.0 };
                let c = gs[h + j] * c_prev + gs[j] * gs[2 * h + j];
                let tc = c.tanh();
                cells[step * h + j] = c;
                cell_tanh[step * h + j] = tc;
                hidden[step * h + j] = gs[3 * h + j] * tc;
            }
        }
        Ok(LstmTrace { gates, cells, cell_tanh, hidden, steps })
    }

    /// Backpropagate through time.
    ///
    /// `grad_hidden` holds `d(loss)/d(h)` for every processing step (`[T, H]`).
    /// Parameter gradients are accumulated into `grad`; the returned vector is
    /// `d(loss)/d(seq)` in the original time order.
    pub fn backward(
        &self,
        seq: &[f64],
        trace: &LstmTrace,
        grad_hidden: &[f64],
        reverse: bool,
        grad: &mut Lstm,
    ) -> Result<Vec<f64>> {
        let (d, h) = (self.input(), self.hidden());
        let steps = trace.steps;
        if seq.len() != steps * d || grad_hidden.len() != steps * h {
            return Err(Error::Shape("LSTM trace does not match its input or gradient".into()));
        }
        let mut grad_seq = vec![0.0; seq.len()];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for step in (0..steps).rev() {
            let t = if reverse { steps - 1 - step } else { step };
            let gs = &trace.gates[step * 4 * h..(step + 1) * 4 * h];
            for j in 0..h {
                let (i, f, g, o) = (gs[j], gs[h + j], gs[2 * h + j], gs[3 * h + j]);
                let tc = trace.cell_tanh[step * h + j];
                let c_prev = if step > 0 { trace.cells[(step - 1) * h + j] } else { 0.0 };
                let dh = grad_hidden[step * h + j] + dh_next[j];
                let d_o = dh * tc;
                let dc = dc_next[j] + dh * o * (1.0 - tc * tc);
                dz[j] = dc * g * i * (1.0 - i);
                dz[h + j] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + j] = dc * i * (1.0 - g * g);
                dz[3 * h + j] = d_o * o * (1.0 - o);
                dc_next[j] = dc * f;
            }
            let x = &seq[t * d..(t + 1) * d];
            let gx = &mut grad_seq[t * d..(t + 1) * d];
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &g) in dz.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                grad.bias.data[r] += g;
                let wx = &self.w_input.data[r * d..(r + 1) * d];
                let gwx = &mut grad.w_input.data[r * d..(r + 1) * d];
                for k in 0..d {
                    gwx[k] += g * x[k];
                    gx[k] += g * wx[k];
                }
                if step > 0 {
                    let hp = trace.h(step - 1, h);
                    let wh = &self.w_recurrent.data[r * h..(r + 1) * h];
                    let gwh = &mut grad.w_recurrent.data[r * h..(r + 1) * h];
                    for k in 0..h {
                        gwh[k] += g * hp[k];
                        dh_next[k] += g * wh[k];
                    }
                }
            }
        }
        Ok(grad_seq)
    }
}

/// How the recurrent outputs are reduced to one vector per direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Readout {
    #[default]
    FinalState,
    MeanOverTime,
}

/// Forward and backward LSTMs over the same sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct BiLstm {
    pub forward: Lstm,
    pub backward: Lstm,
    pub readout: Readout,
}

#[derive(Debug, Clone)]
pub struct BiLstmTrace {
    pub fwd: LstmTrace,
    pub bwd: LstmTrace,
    /// `[h_fwd, h_bwd]`, length `2H`.
    pub output: Vec<f64>,
}

impl BiLstm {
    pub fn init(input: usize, hidden: usize, readout: Readout, rng: &mut Rng) -> Self {
        BiLstm {
            forward: Lstm::init(input, hidden, rng),
            backward: Lstm::init(input, hidden, rng),
            readout,
        }
    }

    pub fn hidden(&self) -> usize {
        self.forward.hidden()
    }

    fn reduce(&self, trace: &LstmTrace) -> Vec<f64> {
        let h = self.hidden();
        match self.readout {
            Readout::FinalState => trace.final_hidden(h).to_vec(),
            Readout::MeanOverTime => {
                let mut m = vec![0.0; h];
                for t in 0..trace.steps {
                    for (a, v) in m.iter_mut().zip(trace.h(t, h)) {
                        *a += v;
                    }
                }
                m.iter_mut().for_each(|a| *a /= trace.steps as f64);
                m
            }
        }
    }

    pub fn run(&self, seq: &[f64]) -> Result<BiLstmTrace> {
        let fwd = self.forward.forward(seq, false)?;
        let bwd = self.backward.forward(seq, true)?;
        let mut output = self.reduce(&fwd);
        output.extend(self.reduce(&bwd));
        Ok(BiLstmTrace { fwd, bwd, output })
    }

    fn spread(&self, steps: usize, grad: &[f64]) -> Vec<f64> {
        let h = self.hidden();
        let mut g = vec![0.0; steps * h];
        match self.readout {
            Readout::FinalState => g[(steps - 1) * h..].copy_from_slice(grad),
            Readout::MeanOverTime => {
                for t in 0..steps {
                    for (a, v) in g[t * h..(t + 1) * h].iter_mut().zip(grad) {
                        *a = v / steps as f64;
                    }
                }
            }
        }
        g
    }

    /// Given `d(loss)/d(output)` (length `2H`), accumulate parameter
    /// gradients and return `d(loss)/d(seq)`.
    pub fn backprop(
        &self,
        seq: &[f64],
        trace: &BiLstmTrace,
        grad_output: &[f64],
        grad: &mut BiLstm,
    ) -> Result<Vec<f64>> {
        let h = self.hidden();
        if grad_output.len() != 2 * h {
            return Err(Error::Shape(format!(
                "BiLSTM output gradient has {} values, expected {}",
                grad_output.len(),
                2 * h
            )));
        }
        let gf = self.spread(trace.fwd.steps, &grad_output[..h]);
        let gb = self.spread(trace.bwd.steps, &grad_output[h..]);
        let mut gs = self.forward.backward(seq, &trace.fwd, &gf, false, &mut grad.forward)?;
        let gs_b = self.backward.backward(seq, &trace.bwd, &gb, true, &mut grad.backward)?;
        for (a, b) in gs.iter_mut().zip(gs_b) {
            *a += b;
        }
        Ok(gs)
    }
}
