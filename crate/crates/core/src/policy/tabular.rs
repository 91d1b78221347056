//! Tabular n-gram policy.
//!
//! One logit row per context `(prompt bucket, position, last `window`
//! response tokens)`. Rows are laid out densely, so the parameter vector is
//! `rows * vocab` reals and every gradient is a sum of row-local softmax
//! scores. Zero initialization gives the uniform policy.

use serde::{Deserialize, Serialize};

use super::vocab::{Token, Vocab};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    pub(crate) vocab: Vocab,
    pub(crate) max_len: usize,
    pub(crate) window: usize,
    pub(crate) prompt_buckets: usize,
    pub(crate) params: Vec<f64>,
}

/// FNV-1a over the prompt ids, finished with a 64-bit mixer so that the
/// low bits used for bucketing depend on every token.
pub(crate) fn prompt_hash(prompt: &[Token]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &t in prompt {
        for b in t.to_le_bytes() {
            h ^= b as u64;
            h = h.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    crate::rng::splitmix64(h)
}

impl TabularPolicy {
    pub fn zeros(vocab: Vocab, max_len: usize, window: usize, prompt_buckets: usize) -> Self {
        let mut p = Self {
            vocab,
            max_len,
            window,
            prompt_buckets: prompt_buckets.max(1),
            params: Vec::new(),
        };
        p.params = vec![0.0; p.rows() * p.vocab.size()];
        p
    }

    fn radix(&self) -> usize {
        self.vocab.size() + 1
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn prompt_buckets(&self) -> usize {
        self.prompt_buckets
    }

    pub fn rows(&self) -> usize {
        self.prompt_buckets * self.max_len * self.radix().pow(self.window as u32)
    }

    pub fn bucket(&self, prompt: &[Token]) -> usize {
        (prompt_hash(prompt) % self.prompt_buckets as u64) as usize
    }

    /// Row for the next-token distribution after `prefix`.
    pub fn row(&self, bucket: usize, prefix: &[Token]) -> usize {
        let radix = self.radix();
        let pad = self.vocab.size();
        let mut ctx = 0usize;
        for k in 0..self.window {
            // k-th most recent token, PAD when the prefix is shorter
            let tok = if k < prefix.len() {
                prefix[prefix.len() - 1 - k] as usize
            } else {
                pad
            };
            ctx = ctx * radix + tok;
        }
        let pos = prefix.len().min(self.max_len - 1);
        (bucket * self.max_len + pos) * radix.pow(self.window as u32) + ctx
    }

    pub fn row_logits(&self, row: usize) -> &[f64] {
        let v = self.vocab.size();
        &self.params[row * v..(row + 1) * v]
    }

    pub fn row_logits_mut(&mut self, row: usize) -> &mut [f64] {
        let v = self.vocab.size();
        &mut self.params[row * v..(row + 1) * v]
    }

    /// Overwrites the logits used after `prefix` for `prompt`.
    pub fn set_logits(&mut self, prompt: &[Token], prefix: &[Token], logits: &[f64]) {
        let row = self.row(self.bucket(prompt), prefix);
        self.row_logits_mut(row).copy_from_slice(logits);
    }
}
