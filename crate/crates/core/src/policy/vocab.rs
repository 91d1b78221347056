use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Token = u32;

/// Token alphabet with dense ids `0..size`. The end-of-sequence token is
/// always the last id.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    names: Vec<String>,
}

impl Vocab {
    /// Builds a vocabulary from token spellings; the last entry is EOS.
    pub fn new<S: Into<String>>(names: impl IntoIterator<Item = S>) -> Result<Self> {
        let names: Vec<String> = names.into_iter().map(Into::into).collect();
        if names.len() < 2 {
            return Err(Error::config("vocab", "needs at least two tokens"));
        }
        for (i, n) in names.iter().enumerate() {
            if n.is_empty() || n.chars().any(char::is_whitespace) {
                return Err(Error::config("vocab", format!("bad spelling {n:?}")));
            }
            if names[..i].contains(n) {
                return Err(Error::config("vocab", format!("duplicate spelling {n:?}")));
            }
        }
        Ok(Self { names })
    }

    /// Anonymous vocabulary `t0 .. t{size-2}, <eos>`.
    pub fn anonymous(size: usize) -> Result<Self> {
        let mut names: Vec<String> = (0..size.saturating_sub(1)).map(|i| format!("t{i}")).collect();
        names.push("<eos>".into());
        Self::new(names)
    }

    pub fn size(&self) -> usize {
        self.names.len()
    }

    pub fn eos(&self) -> Token {
        (self.names.len() - 1) as Token
    }

    pub fn name(&self, t: Token) -> &str {
        &self.names[t as usize]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn lookup(&self, spelling: &str) -> Option<Token> {
        self.names.iter().position(|n| n == spelling).map(|i| i as Token)
    }

    pub fn check(&self, t: Token) -> Result<()> {
        if (t as usize) < self.size() {
            Ok(())
        } else {
            Err(Error::Token {
                token: t,
                size: self.size(),
            })
        }
    }

    /// Wraps raw tokens; `terminated` is set when the last token is EOS.
    pub fn seq(&self, tokens: Vec<Token>) -> Result<TokenSeq> {
        for &t in &tokens {
            self.check(t)?;
        }
        let terminated = tokens.last() == Some(&self.eos());
        Ok(TokenSeq { tokens, terminated })
    }

    /// Space-separated spelling.
    pub fn spell(&self, seq: &TokenSeq) -> String {
        seq.tokens
            .iter()
            .map(|&t| self.name(t))
            .collect::<Vec<_>>()
            .join(" ")
    }

    pub fn parse(&self, text: &str) -> Result<TokenSeq> {
        let mut tokens = Vec::new();
        for word in text.split_whitespace() {
            let t = self.lookup(word).ok_or_else(|| Error::Dataset {
                line: 0,
                message: format!("unknown token {word:?}"),
            })?;
            tokens.push(t);
        }
        self.seq(tokens)
    }
}

/// A token sequence. Responses carry their EOS token as the final element
/// when `terminated` is set; truncated responses do not.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TokenSeq {
    pub tokens: Vec<Token>,
    pub terminated: bool,
}

impl TokenSeq {
    pub fn empty() -> Self {
        Self {
            tokens: Vec::new(),
            terminated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}
