//! Elman recurrent policy with tanh hidden units.
//!
//! `h_{t+1} = tanh(W_in[:, x_t] + W_hh h_t + b_h)`, `logits = W_out h + b_out`.
//! The prompt is consumed first; the logits for response step `j` are read
//! from the hidden state after `prompt.len() + j` inputs.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::vocab::{Token, Vocab};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecurrentPolicy {
    pub(crate) vocab: Vocab,
    pub(crate) max_len: usize,
    pub(crate) hidden: usize,
    pub(crate) params: Vec<f64>,
}

/// Offsets of the parameter blocks inside the flat vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub v: usize,
    pub h: usize,
    pub w_in: usize,
    pub w_hh: usize,
    pub b_h: usize,
    pub w_out: usize,
    pub b_out: usize,
    pub dim: usize,
}

impl Layout {
    pub fn new(v: usize, h: usize) -> Self {
        let w_in = 0;
        let w_hh = w_in + h * v;
        let b_h = w_hh + h * h;
        let w_out = b_h + h;
        let b_out = w_out + v * h;
        let dim = b_out + v;
        Self {
            v,
            h,
            w_in,
            w_hh,
            b_h,
            w_out,
            b_out,
            dim,
        }
    }
}

impl RecurrentPolicy {
    /// Weights uniform in `[-scale, scale]`.
    pub fn random(vocab: Vocab, max_len: usize, hidden: usize, scale: f64, rng: &mut Rng) -> Self {
        let layout = Layout::new(vocab.size(), hidden);
        let params = (0..layout.dim).map(|_| rng.gen_range(-scale..=scale)).collect();
        Self {
            vocab,
            max_len,
            hidden,
            params,
        }
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(self.vocab.size(), self.hidden)
    }

    pub(crate) fn step(&self, h: &[f64], x: Token) -> Vec<f64> {
        let l = self.layout();
        let p = &self.params;
        let x = x as usize;
        (0..l.h)
            .map(|i| {
                let mut a = p[l.w_in + i * l.v + x] + p[l.b_h + i];
                let row = &p[l.w_hh + i * l.h..l.w_hh + (i + 1) * l.h];
                for (w, hj) in row.iter().zip(h) {
                    a += w * hj;
                }
                a.tanh()
            })
            .collect()
    }

    pub(crate) fn readout(&self, h: &[f64]) -> Vec<f64> {
        let l = self.layout();
        let p = &self.params;
        (0..l.v)
            .map(|k| {
                let row = &p[l.w_out + k * l.h..l.w_out + (k + 1) * l.h];
                p[l.b_out + k] + row.iter().zip(h).map(|(w, x)| w * x).sum::<f64>()
            })
            .collect()
    }

    pub(crate) fn encode(&self, prompt: &[Token]) -> Vec<f64> {
        let mut h = vec![0.0; self.hidden];
        for &t in prompt {
            h = self.step(&h, t);
        }
        h
    }

    /// Backpropagation through time.
    ///
    /// `inputs[t]` produced `hidden[t + 1]` from `hidden[t]`; `dlogits[j]` is
    /// the upstream gradient for the readout taken at `hidden[prompt_len + j]`.
    pub(crate) fn backward(
        &self,
        inputs: &[Token],
        hidden: &[Vec<f64>],
        prompt_len: usize,
        dlogits: &[Vec<f64>],
        grad: &mut [f64],
    ) {
        let l = self.layout();
        let p = &self.params;
        let mut dh: Vec<Vec<f64>> = vec![vec![0.0; l.h]; hidden.len()];
        for (j, dl) in dlogits.iter().enumerate() {
            let t = prompt_len + j;
            let h = &hidden[t];
            for k in 0..l.v {
                let g = dl[k];
                if g == 0.0 {
                    continue;
                }
                grad[l.b_out + k] += g;
                for i in 0..l.h {
                    grad[l.w_out + k * l.h + i] += g * h[i];
                    dh[t][i] += g * p[l.w_out + k * l.h + i];
                }
            }
        }
        for t in (1..hidden.len()).rev() {
            let h = &hidden[t];
            let da: Vec<f64> = (0..l.h).map(|i| dh[t][i] * (1.0 - h[i] * h[i])).collect();
            let x = inputs[t - 1] as usize;
            let hp = &hidden[t - 1];
            let prev = &mut dh[t - 1];
            for i in 0..l.h {
                let g = da[i];
                if g == 0.0 {
                    continue;
                }
                grad[l.w_in + i * l.v + x] += g;
                grad[l.b_h + i] += g;
                for j in 0..l.h {
                    grad[l.w_hh + i * l.h + j] += g * hp[j];
                    prev[j] += g * p[l.w_hh + i * l.h + j];
                }
            }
        }
    }
}
