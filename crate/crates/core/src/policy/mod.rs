//! Tiny autoregressive policies with exact log-probabilities and analytic
//! parameter gradients.
//!
//! Both model kinds expose the same surface through [`PolicyModel`]:
//! a forward pass that records per-step log-softmax values, and a backward
//! pass that maps per-step logit gradients to a flat parameter gradient.
//! Every objective in the crate is expressed through those two calls.

pub mod checkpoint;
mod recurrent;
mod tabular;
mod vocab;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use recurrent::RecurrentPolicy;
pub use tabular::TabularPolicy;
pub use vocab::{Token, TokenSeq, Vocab};

use crate::error::{Error, Result};
use crate::math::{entropy, log_softmax};
use crate::rng::{self, Rng};

/// Model kind plus its context size, as written in configs and checkpoints.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicySpec {
    TabularNgram { window: usize, prompt_buckets: usize },
    Recurrent { hidden: usize },
}

impl Default for PolicySpec {
    fn default() -> Self {
        PolicySpec::TabularNgram {
            window: 1,
            prompt_buckets: 256,
        }
    }
}

impl PolicySpec {
    /// Fresh model: zero logits for the tabular kind, weights uniform in
    /// `[-0.1, 0.1]` from the run seed for the recurrent kind.
    pub fn build(&self, vocab: Vocab, max_len: usize, seed: u64) -> Result<PolicyModel> {
        if max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        match *self {
            PolicySpec::TabularNgram {
                window,
                prompt_buckets,
            } => {
                if prompt_buckets == 0 {
                    return Err(Error::config("policy.prompt_buckets", "must be at least 1"));
                }
                Ok(PolicyModel::Tabular(TabularPolicy::zeros(
                    vocab,
                    max_len,
                    window,
                    prompt_buckets,
                )))
            }
            PolicySpec::Recurrent { hidden } => {
                if hidden == 0 {
                    return Err(Error::config("policy.hidden", "must be at least 1"));
                }
                let mut r = rng::substream(seed, &[rng::tag::INIT]);
                Ok(PolicyModel::Recurrent(RecurrentPolicy::random(
                    vocab, max_len, hidden, 0.1, &mut r,
                )))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum PolicyModel {
    Tabular(TabularPolicy),
    Recurrent(RecurrentPolicy),
}

/// Forward record for one `(prompt, response)` pair.
#[derive(Debug, Clone)]
pub struct Trace {
    /// Temperature-1 log-softmax for each response step.
    pub log_probs: Vec<Vec<f64>>,
    cache: Cache,
}

#[derive(Debug, Clone)]
enum Cache {
    Tabular {
        rows: Vec<usize>,
    },
    Recurrent {
        inputs: Vec<Token>,
        hidden: Vec<Vec<f64>>,
        prompt_len: usize,
    },
}

impl Trace {
    pub fn steps(&self) -> usize {
        self.log_probs.len()
    }

    /// Log-probability of each observed token.
    pub fn token_logprobs(&self, response: &TokenSeq) -> Vec<f64> {
        self.log_probs
            .iter()
            .zip(&response.tokens)
            .map(|(lp, &t)| lp[t as usize])
            .collect()
    }

    pub fn seq_logprob(&self, response: &TokenSeq) -> f64 {
        self.token_logprobs(response).iter().sum()
    }

    /// Logit gradient of `sum_j weights[j] * log pi(y_j)`.
    pub fn score_dlogits(&self, response: &TokenSeq, weights: &[f64]) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .zip(&response.tokens)
            .zip(weights)
            .map(|((lp, &t), &w)| {
                let mut d: Vec<f64> = lp.iter().map(|&l| -w * l.exp()).collect();
                d[t as usize] += w;
                d
            })
            .collect()
    }

    /// Per-step entropies (nats).
    pub fn entropies(&self) -> Vec<f64> {
        self.log_probs.iter().map(|lp| entropy(lp)).collect()
    }

    /// Logit gradient of `sum_j coeff * H_j`.
    pub fn entropy_dlogits(&self, coeff: f64) -> Vec<Vec<f64>> {
        self.log_probs
            .iter()
            .map(|lp| {
                let h = entropy(lp);
                lp.iter().map(|&l| -coeff * l.exp() * (l + h)).collect()
            })
            .collect()
    }
}

/// Incremental decoding state.
#[derive(Debug, Clone)]
pub struct DecodeState {
    prefix: Vec<Token>,
    inner: DecodeInner,
}

#[derive(Debug, Clone)]
enum DecodeInner {
    Tabular { bucket: usize },
    Recurrent { h: Vec<f64> },
}

impl DecodeState {
    pub fn prefix(&self) -> &[Token] {
        &self.prefix
    }
}

/// Sampling settings. `max_len` may not exceed the model's own limit.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub temperature: f64,
    pub max_len: usize,
    pub seed: u64,
}

impl SamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(Error::config("temperature", "must be a positive finite real"));
        }
        if self.max_len == 0 {
            return Err(Error::config("max_len", "must be at least 1"));
        }
        Ok(())
    }
}

/// A sampled response with both log-probability records.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub response: TokenSeq,
    /// Per-token log-probs of the sampling distribution (configured temperature).
    pub sample_logprobs: Vec<f64>,
    /// Per-token log-probs at temperature 1; these feed the objectives.
    pub logprobs: Vec<f64>,
}

impl PolicyModel {
    pub fn kind_name(&self) -> &'static str {
        match self {
            PolicyModel::Tabular(_) => "tabular-ngram",
            PolicyModel::Recurrent(_) => "recurrent",
        }
    }

    pub fn vocab(&self) -> &Vocab {
        match self {
            PolicyModel::Tabular(m) => &m.vocab,
            PolicyModel::Recurrent(m) => &m.vocab,
        }
    }

    pub fn max_len(&self) -> usize {
        match self {
            PolicyModel::Tabular(m) => m.max_len,
            PolicyModel::Recurrent(m) => m.max_len,
        }
    }

    pub fn spec(&self) -> PolicySpec {
        match self {
            PolicyModel::Tabular(m) => PolicySpec::TabularNgram {
                window: m.window,
                prompt_buckets: m.prompt_buckets,
            },
            PolicyModel::Recurrent(m) => PolicySpec::Recurrent { hidden: m.hidden },
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            PolicyModel::Tabular(m) => &m.params,
            PolicyModel::Recurrent(m) => &m.params,
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            PolicyModel::Tabular(m) => &mut m.params,
            PolicyModel::Recurrent(m) => &mut m.params,
        }
    }

    pub fn dim(&self) -> usize {
        self.params().len()
    }

    /// Replaces the parameter vector; its length must match.
    pub fn set_params(&mut self, values: &[f64]) -> Result<()> {
        if values.len() != self.dim() {
            return Err(Error::config(
                "params",
                format!("expected {} values, got {}", self.dim(), values.len()),
            ));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("parameter vector".into()));
        }
        self.params_mut().copy_from_slice(values);
        Ok(())
    }

    /// Frozen deep copy, used for `pi_old` and `pi_ref`.
    pub fn snapshot(&self) -> PolicyModel {
        self.clone()
    }

    fn check_seq(&self, seq: &TokenSeq) -> Result<()> {
        for &t in &seq.tokens {
            self.vocab().check(t)?;
        }
        Ok(())
    }

    pub fn begin(&self, prompt: &TokenSeq) -> Result<DecodeState> {
        self.check_seq(prompt)?;
        let inner = match self {
            PolicyModel::Tabular(m) => DecodeInner::Tabular {
                bucket: m.bucket(&prompt.tokens),
            },
            PolicyModel::Recurrent(m) => DecodeInner::Recurrent {
                h: m.encode(&prompt.tokens),
            },
        };
        Ok(DecodeState {
            prefix: Vec::new(),
            inner,
        })
    }

    pub fn state_logits(&self, state: &DecodeState) -> Result<Vec<f64>> {
        if state.prefix.len() >= self.max_len() {
            return Err(Error::Length {
                len: state.prefix.len() + 1,
                max: self.max_len(),
            });
        }
        let logits = match (self, &state.inner) {
            (PolicyModel::Tabular(m), DecodeInner::Tabular { bucket }) => {
                m.row_logits(m.row(*bucket, &state.prefix)).to_vec()
            }
            (PolicyModel::Recurrent(m), DecodeInner::Recurrent { h }) => m.readout(h),
            _ => unreachable!("decode state from a different model kind"),
        };
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("logits".into()));
        }
        Ok(logits)
    }

    pub fn advance(&self, state: &mut DecodeState, token: Token) -> Result<()> {
        self.vocab().check(token)?;
        if let (PolicyModel::Recurrent(m), DecodeInner::Recurrent { h }) = (self, &mut state.inner) {
            *h = m.step(h, token);
        }
        state.prefix.push(token);
        Ok(())
    }

    /// Next-token logits after `prefix`.
    pub fn logits(&self, prompt: &TokenSeq, prefix: &TokenSeq) -> Result<Vec<f64>> {
        if prefix.len() >= self.max_len() {
            return Err(Error::Length {
                len: prefix.len() + 1,
                max: self.max_len(),
            });
        }
        let mut state = self.begin(prompt)?;
        for &t in &prefix.tokens {
            self.advance(&mut state, t)?;
        }
        self.state_logits(&state)
    }

    /// Forward pass over a full response.
    pub fn forward(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Trace> {
        if response.len() > self.max_len() {
            return Err(Error::Length {
                len: response.len(),
                max: self.max_len(),
            });
        }
        self.check_seq(prompt)?;
        self.check_seq(response)?;
        let trace = match self {
            PolicyModel::Tabular(m) => {
                let bucket = m.bucket(&prompt.tokens);
                let rows: Vec<usize> = (0..response.len())
                    .map(|j| m.row(bucket, &response.tokens[..j]))
                    .collect();
                let log_probs = rows.iter().map(|&r| log_softmax(m.row_logits(r))).collect();
                Trace {
                    log_probs,
                    cache: Cache::Tabular { rows },
                }
            }
            PolicyModel::Recurrent(m) => {
                let steps = response.len();
                let mut inputs: Vec<Token> = prompt.tokens.clone();
                inputs.extend(response.tokens.iter().take(steps.saturating_sub(1)));
                let mut hidden = Vec::with_capacity(inputs.len() + 1);
                hidden.push(vec![0.0; m.hidden]);
                for &x in &inputs {
                    let next = m.step(hidden.last().unwrap(), x);
                    hidden.push(next);
                }
                let p = prompt.len();
                let log_probs = (0..steps).map(|j| log_softmax(&m.readout(&hidden[p + j]))).collect();
                Trace {
                    log_probs,
                    cache: Cache::Recurrent {
                        inputs,
                        hidden,
                        prompt_len: p,
                    },
                }
            }
        };
        if trace.log_probs.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("log-softmax".into()));
        }
        Ok(trace)
    }

    /// Accumulates the parameter gradient given per-step logit gradients.
    pub fn backward(&self, trace: &Trace, dlogits: &[Vec<f64>], grad: &mut [f64]) {
        debug_assert_eq!(grad.len(), self.dim());
        match (self, &trace.cache) {
            (PolicyModel::Tabular(m), Cache::Tabular { rows }) => {
                let v = m.vocab.size();
                for (&r, d) in rows.iter().zip(dlogits) {
                    for (g, x) in grad[r * v..(r + 1) * v].iter_mut().zip(d) {
                        *g += x;
                    }
                }
            }
            (
                PolicyModel::Recurrent(m),
                Cache::Recurrent {
                    inputs,
                    hidden,
                    prompt_len,
                },
            ) => m.backward(inputs, hidden, *prompt_len, dlogits, grad),
            _ => unreachable!("trace from a different model kind"),
        }
    }

    /// Accumulates `sum_j weights[j] * grad log pi(y_j | x, y_<j)` into `grad`.
    pub fn accumulate_score(
        &self,
        prompt: &TokenSeq,
        response: &TokenSeq,
        weights: &[f64],
        grad: &mut [f64],
    ) -> Result<Trace> {
        let trace = self.forward(prompt, response)?;
        let d = trace.score_dlogits(response, weights);
        self.backward(&trace, &d, grad);
        Ok(trace)
    }

    pub fn token_logprobs(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        Ok(self.forward(prompt, response)?.token_logprobs(response))
    }

    /// `log pi(y | x)` in nats.
    pub fn seq_logprob(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<f64> {
        Ok(self.forward(prompt, response)?.seq_logprob(response))
    }

    /// `grad log pi(y | x)` with respect to the flat parameters.
    pub fn logprob_grad(&self, prompt: &TokenSeq, response: &TokenSeq) -> Result<Vec<f64>> {
        let mut grad = vec![0.0; self.dim()];
        let w = vec![1.0; response.len()];
        self.accumulate_score(prompt, response, &w, &mut grad)?;
        if grad.iter().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("log-prob gradient".into()));
        }
        Ok(grad)
    }

    /// Samples one response, stopping at EOS or at `cfg.max_len` tokens.
    pub fn sample(&self, prompt: &TokenSeq, cfg: &SamplerConfig, rng: &mut Rng) -> Result<Sample> {
        cfg.validate()?;
        if cfg.max_len > self.max_len() {
            return Err(Error::Length {
                len: cfg.max_len,
                max: self.max_len(),
            });
        }
        let eos = self.vocab().eos();
        let mut state = self.begin(prompt)?;
        let mut sample_logprobs = Vec::new();
        let mut logprobs = Vec::new();
        while state.prefix.len() < cfg.max_len {
            let logits = self.state_logits(&state)?;
            let lp1 = log_softmax(&logits);
            let lpt = if cfg.temperature == 1.0 {
                lp1.clone()
            } else {
                let scaled: Vec<f64> = logits.iter().map(|l| l / cfg.temperature).collect();
                log_softmax(&scaled)
            };
            let tok = draw(&lpt, rng);
            sample_logprobs.push(lpt[tok as usize]);
            logprobs.push(lp1[tok as usize]);
            self.advance(&mut state, tok)?;
            if tok == eos {
                break;
            }
        }
        let response = self.vocab().seq(state.prefix)?;
        Ok(Sample {
            response,
            sample_logprobs,
            logprobs,
        })
    }
}

/// Inverse-CDF draw from log-probabilities.
fn draw(log_probs: &[f64], rng: &mut Rng) -> Token {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    let mut last_nonzero = 0;
    for (i, &lp) in log_probs.iter().enumerate() {
        let p = lp.exp();
        if p > 0.0 {
            last_nonzero = i;
        }
        acc += p;
        if u < acc {
            return i as Token;
        }
    }
    last_nonzero as Token
}
