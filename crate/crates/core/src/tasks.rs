//! Synthetic tasks with exact binary verifiers.
//!
//! * `SUMMOD`: given a target residue `t` and a length `k`, answer with
//!   exactly `k` digits (`0..m`) whose sum is `t (mod m)`, then EOS.
//! * `PAREN`: given an even length `L`, answer with a balanced bracket
//!   string of length `L`, then EOS.
//!
//! Prompts use fixed-width token fields:
//!
//! ```text
//! SUMMOD  [t, |, k digits in base m (most significant first, fixed width), |]
//! PAREN   [L/2 in binary with ( = 0 and ) = 1 (fixed width), |]
//! ```
//!
//! Vocabularies: SUMMOD spells digits `0 .. m-1`, then `|`, then `$` (EOS).
//! PAREN uses `(`, `)`, `|`, `$`.

use std::fmt::Write as _;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::policy::{Token, TokenSeq, Vocab};
use crate::rng::{self, Rng};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TaskName {
    #[serde(rename = "SUMMOD")]
    SumMod,
    #[serde(rename = "PAREN")]
    Paren,
}

impl TaskName {
    pub fn as_str(&self) -> &'static str {
        match self {
            TaskName::SumMod => "SUMMOD",
            TaskName::Paren => "PAREN",
        }
    }
}

/// Task family plus difficulty knobs. A prompt draws its length from
/// `hard_lengths` with probability `hard_fraction`, otherwise from `lengths`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: TaskName,
    /// SUMMOD modulus `m`; ignored by PAREN.
    #[serde(default = "default_modulus")]
    pub modulus: usize,
    pub lengths: Vec<usize>,
    #[serde(default)]
    pub hard_lengths: Vec<usize>,
    #[serde(default)]
    pub hard_fraction: f64,
}

fn default_modulus() -> usize {
    10
}

impl Default for TaskSpec {
    fn default() -> Self {
        Self::summod(10, vec![1, 2])
    }
}

/// Decoded prompt fields.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptParams {
    /// SUMMOD target residue; zero for PAREN.
    pub target: usize,
    pub length: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub id: u64,
    pub tokens: TokenSeq,
}

/// A prompt with its expert response.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Demonstration {
    pub prompt: PromptInstance,
    pub response: TokenSeq,
}

/// Few-shot expert set and answer-only set, disjoint by prompt id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetSplit {
    pub expert: Vec<Demonstration>,
    pub answer_only: Vec<PromptInstance>,
}

impl TaskSpec {
    pub fn summod(modulus: usize, lengths: Vec<usize>) -> Self {
        Self {
            name: TaskName::SumMod,
            modulus,
            lengths,
            hard_lengths: Vec::new(),
            hard_fraction: 0.0,
        }
    }

    pub fn paren(lengths: Vec<usize>) -> Self {
        Self {
            name: TaskName::Paren,
            modulus: 2,
            lengths,
            hard_lengths: Vec::new(),
            hard_fraction: 0.0,
        }
    }

    pub fn with_hard(mut self, hard_lengths: Vec<usize>, hard_fraction: f64) -> Self {
        self.hard_lengths = hard_lengths;
        self.hard_fraction = hard_fraction;
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.lengths.is_empty() {
            return Err(Error::Infeasible("no prompt lengths configured".into()));
        }
        if !(0.0..=1.0).contains(&self.hard_fraction) {
            return Err(Error::Infeasible("hard_fraction must lie in [0, 1]".into()));
        }
        if self.hard_fraction > 0.0 && self.hard_lengths.is_empty() {
            return Err(Error::Infeasible("hard_fraction > 0 without hard_lengths".into()));
        }
        match self.name {
            TaskName::SumMod => {
                if self.modulus < 2 {
                    return Err(Error::Infeasible("SUMMOD modulus must be at least 2".into()));
                }
                if self.all_lengths().any(|k| k == 0) {
                    return Err(Error::Infeasible("SUMMOD length must be at least 1".into()));
                }
            }
            TaskName::Paren => {
                if self.all_lengths().any(|l| l % 2 == 1) {
                    return Err(Error::Infeasible("PAREN lengths must be even".into()));
                }
            }
        }
        Ok(())
    }

    fn all_lengths(&self) -> impl Iterator<Item = usize> + '_ {
        self.lengths.iter().chain(&self.hard_lengths).copied()
    }

    /// Longest required answer, excluding EOS.
    pub fn max_length(&self) -> usize {
        self.all_lengths().max().unwrap_or(0)
    }

    /// Longest correct response including EOS.
    pub fn max_response_len(&self) -> usize {
        self.max_length() + 1
    }

    pub fn vocab(&self) -> Vocab {
        let names: Vec<String> = match self.name {
            TaskName::SumMod => (0..self.modulus)
                .map(|d| d.to_string())
                .chain(["|".to_string(), "$".to_string()])
                .collect(),
            TaskName::Paren => ["(", ")", "|", "$"].iter().map(|s| s.to_string()).collect(),
        };
        Vocab::new(names).expect("task vocabularies are well formed")
    }

    fn sep(&self) -> Token {
        self.vocab().eos() - 1
    }

    /// Width of the length field in prompt tokens.
    pub fn length_width(&self) -> usize {
        let (base, value) = match self.name {
            TaskName::SumMod => (self.modulus, self.max_length()),
            TaskName::Paren => (2, self.max_length() / 2),
        };
        let mut width = 1;
        let mut cap = base;
        while cap <= value {
            width += 1;
            cap *= base;
        }
        width
    }

    fn digits(&self, mut value: usize, base: usize) -> Vec<Token> {
        let mut out = vec![0; self.length_width()];
        for slot in out.iter_mut().rev() {
            *slot = (value % base) as Token;
            value /= base;
        }
        out
    }

    pub fn encode_prompt(&self, params: PromptParams) -> Result<TokenSeq> {
        let sep = self.sep();
        let tokens = match self.name {
            TaskName::SumMod => {
                if params.target >= self.modulus {
                    return Err(Error::Infeasible(format!(
                        "target {} outside 0..{}",
                        params.target, self.modulus
                    )));
                }
                if params.length == 0 {
                    return Err(Error::Infeasible("SUMMOD length must be at least 1".into()));
                }
                let mut t = vec![params.target as Token, sep];
                t.extend(self.digits(params.length, self.modulus));
                t.push(sep);
                t
            }
            TaskName::Paren => {
                if params.length % 2 == 1 {
                    return Err(Error::Infeasible(format!("odd PAREN length {}", params.length)));
                }
                let mut t = self.digits(params.length / 2, 2);
                t.push(sep);
                t
            }
        };
        self.vocab().seq(tokens)
    }

    pub fn decode_prompt(&self, prompt: &TokenSeq) -> Option<PromptParams> {
        let sep = self.sep();
        let w = self.length_width();
        let t = &prompt.tokens;
        let number = |field: &[Token], base: usize| -> Option<usize> {
            field.iter().try_fold(0usize, |acc, &d| {
                ((d as usize) < base).then(|| acc * base + d as usize)
            })
        };
        match self.name {
            TaskName::SumMod => {
                if t.len() != w + 3 || t[1] != sep || t[w + 2] != sep {
                    return None;
                }
                let target = t[0] as usize;
                let length = number(&t[2..2 + w], self.modulus)?;
                (target < self.modulus && length >= 1).then_some(PromptParams { target, length })
            }
            TaskName::Paren => {
                if t.len() != w + 1 || t[w] != sep {
                    return None;
                }
                let half = number(&t[..w], 2)?;
                Some(PromptParams {
                    target: 0,
                    length: 2 * half,
                })
            }
        }
    }

    /// Binary reward: 1 iff the response is well formed and correct.
    pub fn verify(&self, prompt: &TokenSeq, response: &TokenSeq) -> f64 {
        let Some(p) = self.decode_prompt(prompt) else {
            return 0.0;
        };
        let eos = self.vocab().eos();
        let t = &response.tokens;
        if !response.terminated || t.len() != p.length + 1 || t[p.length] != eos {
            return 0.0;
        }
        let body = &t[..p.length];
        let ok = match self.name {
            TaskName::SumMod => {
                body.iter().all(|&d| (d as usize) < self.modulus)
                    && body.iter().map(|&d| d as usize).sum::<usize>() % self.modulus == p.target
            }
            TaskName::Paren => {
                let mut depth: i64 = 0;
                body.iter().all(|&b| {
                    depth += match b {
                        0 => 1,
                        1 => -1,
                        _ => return false,
                    };
                    depth >= 0
                }) && depth == 0
            }
        };
        if ok {
            1.0
        } else {
            0.0
        }
    }

    /// Canonical correct response. SUMMOD draws `k - 1` digits from `rng`
    /// and appends the correcting digit; PAREN nests `((..))`.
    pub fn demo(&self, prompt: &TokenSeq, rng: &mut Rng) -> Result<TokenSeq> {
        let p = self
            .decode_prompt(prompt)
            .ok_or_else(|| Error::Infeasible("prompt does not decode".into()))?;
        match self.name {
            TaskName::SumMod => {
                let prefix: Vec<usize> = (0..p.length - 1).map(|_| rng.gen_range(0..self.modulus)).collect();
                self.summod_complete(p.target, &prefix)
            }
            TaskName::Paren => {
                let half = p.length / 2;
                let mut t = vec![0; half];
                t.extend(std::iter::repeat(1).take(half));
                t.push(self.vocab().eos());
                self.vocab().seq(t)
            }
        }
    }

    /// SUMMOD response `prefix ++ [(target - sum(prefix)) mod m] ++ [EOS]`.
    pub fn summod_complete(&self, target: usize, prefix: &[usize]) -> Result<TokenSeq> {
        let m = self.modulus;
        let sum: usize = prefix.iter().sum();
        let last = (target + m - sum % m) % m;
        let mut t: Vec<Token> = prefix.iter().map(|&d| d as Token).collect();
        t.push(last as Token);
        t.push(self.vocab().eos());
        self.vocab().seq(t)
    }

    pub fn random_params(&self, rng: &mut Rng) -> PromptParams {
        let hard = !self.hard_lengths.is_empty() && rng.gen::<f64>() < self.hard_fraction;
        let pool = if hard { &self.hard_lengths } else { &self.lengths };
        let length = pool[rng.gen_range(0..pool.len())];
        let target = match self.name {
            TaskName::SumMod => rng.gen_range(0..self.modulus),
            TaskName::Paren => 0,
        };
        PromptParams { target, length }
    }
}

/// Draws `n` prompts with ids `first_id ..`, from the stream `(seed, tag)`.
pub fn gen_prompts(spec: &TaskSpec, n: usize, first_id: u64, seed: u64, tag: u64) -> Result<Vec<PromptInstance>> {
    spec.validate()?;
    let mut r = rng::substream(seed, &[tag]);
    (0..n)
        .map(|i| {
            let params = spec.random_params(&mut r);
            Ok(PromptInstance {
                id: first_id + i as u64,
                tokens: spec.encode_prompt(params)?,
            })
        })
        .collect()
}

/// Uniformly random expert and answer-only splits. Expert prompts take ids
/// `0..n_expert`, answer-only prompts the next `n_answer_only` ids. Each
/// demonstration comes from its own substream keyed by prompt id.
pub fn gen_dataset(spec: &TaskSpec, n_expert: usize, n_answer_only: usize, seed: u64) -> Result<DatasetSplit> {
    if n_expert == 0 || n_answer_only == 0 {
        return Err(Error::Infeasible("both splits need at least one prompt".into()));
    }
    let prompts = gen_prompts(spec, n_expert + n_answer_only, 0, seed, rng::tag::DATASET)?;
    let mut expert = Vec::with_capacity(n_expert);
    for prompt in prompts.iter().take(n_expert) {
        let mut r = rng::substream(seed, &[rng::tag::DEMO, prompt.id]);
        let response = spec.demo(&prompt.tokens, &mut r)?;
        if spec.verify(&prompt.tokens, &response) != 1.0 {
            return Err(Error::Infeasible(format!("demo for prompt {} fails verification", prompt.id)));
        }
        expert.push(Demonstration {
            prompt: prompt.clone(),
            response,
        });
    }
    Ok(DatasetSplit {
        expert,
        answer_only: prompts[n_expert..].to_vec(),
    })
}

/// One dataset file record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    pub prompt: PromptInstance,
    pub demo: Option<TokenSeq>,
}

impl DatasetSplit {
    pub fn expert_records(&self) -> Vec<Record> {
        self.expert
            .iter()
            .map(|d| Record {
                prompt: d.prompt.clone(),
                demo: Some(d.response.clone()),
            })
            .collect()
    }

    pub fn answer_only_records(&self) -> Vec<Record> {
        self.answer_only
            .iter()
            .map(|p| Record {
                prompt: p.clone(),
                demo: None,
            })
            .collect()
    }
}

pub const DATASET_HEADER: &str = "# festlab-dataset v1";

/// Dataset file text: two `#` header lines (format tag, task JSON), then one
/// `id<TAB>prompt tokens<TAB>demo tokens or "-"` line per record. Tokens are
/// spelled with the task vocabulary and separated by single spaces.
pub fn write_dataset(spec: &TaskSpec, records: &[Record]) -> Result<String> {
    let vocab = spec.vocab();
    let mut out = String::new();
    writeln!(out, "{DATASET_HEADER}").unwrap();
    writeln!(out, "# task {}", serde_json::to_string(spec)?).unwrap();
    for r in records {
        let demo = r.demo.as_ref().map_or_else(|| "-".to_string(), |d| vocab.spell(d));
        writeln!(out, "{}\t{}\t{}", r.prompt.id, vocab.spell(&r.prompt.tokens), demo).unwrap();
    }
    Ok(out)
}

pub fn read_dataset(text: &str) -> Result<(TaskSpec, Vec<Record>)> {
    let bad = |line: usize, message: String| Error::Dataset { line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, l)) if l.trim() == DATASET_HEADER => {}
        _ => return Err(bad(1, "missing format header".into())),
    }
    let spec: TaskSpec = match lines.next() {
        Some((_, l)) if l.starts_with("# task ") => {
            serde_json::from_str(&l["# task ".len()..]).map_err(|e| bad(2, e.to_string()))?
        }
        _ => return Err(bad(2, "missing task header".into())),
    };
    spec.validate()?;
    let vocab = spec.vocab();
    let mut records = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 3 {
            return Err(bad(n, format!("expected 3 tab-separated fields, got {}", fields.len())));
        }
        let id = fields[0].parse::<u64>().map_err(|e| bad(n, e.to_string()))?;
        let with_line = |e: Error| match e {
            Error::Dataset { message, .. } => bad(n, message),
            other => other,
        };
        let tokens = vocab.parse(fields[1]).map_err(with_line)?;
        if spec.decode_prompt(&tokens).is_none() {
            return Err(bad(n, "prompt does not decode for this task".into()));
        }
        let demo = match fields[2] {
            "-" => None,
            s => Some(vocab.parse(s).map_err(with_line)?),
        };
        records.push(Record {
            prompt: PromptInstance { id, tokens },
            demo,
        });
    }
    Ok((spec, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn summod(m: usize, k: usize) -> TaskSpec {
        TaskSpec::summod(m, vec![k])
    }

    fn toks(spec: &TaskSpec, t: &[Token]) -> TokenSeq {
        spec.vocab().seq(t.to_vec()).unwrap()
    }

    #[test]
    fn summod_examples() {
        let s = summod(10, 2);
        let eos = s.vocab().eos();
        let p = s.encode_prompt(PromptParams { target: 5, length: 2 }).unwrap();
        assert_eq!(s.verify(&p, &toks(&s, &[2, 3, eos])), 1.0);
        assert_eq!(s.verify(&p, &toks(&s, &[2, 4, eos])), 0.0);
        // wrong arity, missing EOS, separator instead of digit
        assert_eq!(s.verify(&p, &toks(&s, &[5, eos])), 0.0);
        assert_eq!(s.verify(&p, &toks(&s, &[2, 3])), 0.0);
        assert_eq!(s.verify(&p, &toks(&s, &[2, 3, 0, eos])), 0.0);
        assert_eq!(s.verify(&p, &toks(&s, &[10, 5, eos])), 0.0);
    }

    #[test]
    fn paren_examples() {
        let s = TaskSpec::paren(vec![4]);
        let eos = s.vocab().eos();
        let p = s.encode_prompt(PromptParams { target: 0, length: 4 }).unwrap();
        assert_eq!(s.verify(&p, &toks(&s, &[0, 0, 1, 1, eos])), 1.0);
        assert_eq!(s.verify(&p, &toks(&s, &[1, 0, 0, 1, eos])), 0.0);
        assert_eq!(s.verify(&p, &toks(&s, &[0, 1, 0, 1, eos])), 1.0);
        assert_eq!(s.verify(&p, &toks(&s, &[0, 1, eos])), 0.0);
    }

    #[test]
    fn demo_correcting_digit() {
        let s = summod(10, 3);
        let d = s.summod_complete(7, &[1, 2]).unwrap();
        assert_eq!(d.tokens, vec![1, 2, 4, s.vocab().eos()]);
        let p = s.encode_prompt(PromptParams { target: 7, length: 3 }).unwrap();
        assert_eq!(s.verify(&p, &d), 1.0);
    }

    #[test]
    fn prompt_encoding_round_trips() {
        let s = TaskSpec::summod(3, vec![1, 2]).with_hard(vec![9, 11], 0.5);
        assert_eq!(s.length_width(), 3);
        for length in [1, 2, 9, 11] {
            for target in 0..3 {
                let p = PromptParams { target, length };
                assert_eq!(s.decode_prompt(&s.encode_prompt(p).unwrap()), Some(p));
            }
        }
        let s = TaskSpec::paren(vec![0, 2, 6]);
        for length in [0, 2, 4, 6] {
            let p = PromptParams { target: 0, length };
            assert_eq!(s.decode_prompt(&s.encode_prompt(p).unwrap()), Some(p));
        }
    }

    #[test]
    fn infeasible_specs_are_rejected() {
        assert!(TaskSpec::paren(vec![3]).validate().is_err());
        assert!(summod(1, 2).validate().is_err());
        assert!(summod(10, 0).validate().is_err());
        assert!(TaskSpec::summod(10, vec![]).validate().is_err());
        assert!(gen_dataset(&summod(10, 2), 0, 4, 1).is_err());
    }

    #[test]
    fn dataset_is_deterministic_disjoint_and_verified() {
        let spec = TaskSpec::summod(10, vec![1, 2]).with_hard(vec![4, 5], 0.5);
        let a = gen_dataset(&spec, 16, 256, 3).unwrap();
        let b = gen_dataset(&spec, 16, 256, 3).unwrap();
        assert_eq!(a, b);
        let e_ids: HashSet<u64> = a.expert.iter().map(|d| d.prompt.id).collect();
        assert!(a.answer_only.iter().all(|p| !e_ids.contains(&p.id)));
        for d in &a.expert {
            assert_eq!(spec.verify(&d.prompt.tokens, &d.response), 1.0);
            assert!(d.response.len() <= spec.max_response_len());
        }
        let hard = a
            .answer_only
            .iter()
            .filter(|p| spec.decode_prompt(&p.tokens).unwrap().length >= 4)
            .count();
        assert!(hard > 80 && hard < 176, "hard count {hard}");
    }

    #[test]
    fn demos_vary_with_prompt_id_substreams() {
        let spec = summod(10, 4);
        let split = gen_dataset(&spec, 64, 1, 0).unwrap();
        let mut by_prompt: std::collections::HashMap<Vec<Token>, HashSet<Vec<Token>>> = Default::default();
        for d in &split.expert {
            by_prompt
                .entry(d.prompt.tokens.tokens.clone())
                .or_default()
                .insert(d.response.tokens.clone());
        }
        assert!(by_prompt.values().any(|demos| demos.len() > 1));
    }

    /// Independent predicate on the spelled strings.
    fn brute_force(spec: &TaskSpec, p: PromptParams, spelled: &[String]) -> bool {
        let Some((last, body)) = spelled.split_last() else {
            return false;
        };
        if last != "$" || body.len() != p.length {
            return false;
        }
        match spec.name {
            TaskName::SumMod => {
                let mut sum = 0;
                for s in body {
                    match s.parse::<usize>() {
                        Ok(d) if d < spec.modulus => sum += d,
                        _ => return false,
                    }
                }
                sum % spec.modulus == p.target
            }
            TaskName::Paren => {
                let s: String = body.concat();
                let mut cur = s.clone();
                while cur.contains("()") {
                    cur = cur.replace("()", "");
                }
                cur.is_empty() && s.chars().all(|c| c == '(' || c == ')')
            }
        }
    }

    #[test]
    fn verifier_matches_brute_force_on_tiny_instances() {
        let mut specs: Vec<TaskSpec> = Vec::new();
        for m in 2..=5 {
            for k in 1..=3 {
                specs.push(summod(m, k));
            }
        }
        specs.push(TaskSpec::paren(vec![0, 2]));
        for spec in specs {
            let v = spec.vocab();
            let size = v.size() as u32;
            let lengths: Vec<usize> = spec.lengths.clone();
            for &length in &lengths {
                let targets = if spec.name == TaskName::SumMod { spec.modulus } else { 1 };
                for target in 0..targets {
                    let p = PromptParams { target, length };
                    let prompt = spec.encode_prompt(p).unwrap();
                    for len in 0..=length + 2 {
                        let total = (size as usize).pow(len as u32);
                        for code in 0..total {
                            let mut c = code;
                            let t: Vec<Token> = (0..len)
                                .map(|_| {
                                    let x = (c % size as usize) as Token;
                                    c /= size as usize;
                                    x
                                })
                                .collect();
                            let seq = v.seq(t.clone()).unwrap();
                            let spelled: Vec<String> = t.iter().map(|&x| v.name(x).to_string()).collect();
                            assert_eq!(
                                spec.verify(&prompt, &seq) == 1.0,
                                brute_force(&spec, p, &spelled),
                                "{spec:?} {p:?} {spelled:?}"
                            );
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn dataset_file_round_trip() {
        let spec = TaskSpec::paren(vec![2, 4]).with_hard(vec![8], 0.25);
        let split = gen_dataset(&spec, 3, 5, 9).unwrap();
        let mut records = split.expert_records();
        records.extend(split.answer_only_records());
        let text = write_dataset(&spec, &records).unwrap();
        assert!(text.lines().nth(2).unwrap().split('\t').count() == 3);
        let (spec2, back) = read_dataset(&text).unwrap();
        assert_eq!(spec2, spec);
        assert_eq!(back, records);
        assert!(read_dataset("nonsense").is_err());
        let broken = text.replace("\t-", "\t( x");
        assert!(matches!(read_dataset(&broken), Err(Error::Dataset { .. })));
    }
}
