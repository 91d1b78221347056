//! Binary model checkpoints.
//!
//! All integers and reals are little-endian.
//!
//! ```text
//! offset  size  field
//! 0       8     magic "FESTLAB1"
//! 8       4     format version (u32, = 1)
//! 12      4     kind (u32): 0 = tabular-ngram, 1 = recurrent
//! 16      4     vocab size (u32)
//! 20      4     max_len (u32)
//! 24      4     context a (u32): window (tabular) or hidden size (recurrent)
//! 28      4     context b (u32): prompt buckets (tabular) or 0
//! 32      8     seed (u64)
//! 40      8     step (u64)
//! 48      8     parameter count n (u64)
//! 56      8n    parameters (f64)
//! ```
//!
//! Trailing sections (for example optimizer state) may follow the parameter
//! block; [`read_model`] reports where the model section ends.

use serde::{Deserialize, Serialize};

use super::{PolicyModel, PolicySpec, Vocab};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"FESTLAB1";
pub const VERSION: u32 = 1;
pub const HEADER_LEN: usize = 56;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub kind: u32,
    pub vocab_size: u32,
    pub max_len: u32,
    pub context_a: u32,
    pub context_b: u32,
    pub seed: u64,
    pub step: u64,
    pub n_params: u64,
}

impl CheckpointHeader {
    pub fn of(model: &PolicyModel, seed: u64, step: u64) -> Self {
        let (kind, a, b) = match model.spec() {
            PolicySpec::TabularNgram {
                window,
                prompt_buckets,
            } => (0, window as u32, prompt_buckets as u32),
            PolicySpec::Recurrent { hidden } => (1, hidden as u32, 0),
        };
        Self {
            kind,
            vocab_size: model.vocab().size() as u32,
            max_len: model.max_len() as u32,
            context_a: a,
            context_b: b,
            seed,
            step,
            n_params: model.dim() as u64,
        }
    }

    pub fn spec(&self) -> Result<PolicySpec> {
        match self.kind {
            0 => Ok(PolicySpec::TabularNgram {
                window: self.context_a as usize,
                prompt_buckets: self.context_b as usize,
            }),
            1 => Ok(PolicySpec::Recurrent {
                hidden: self.context_a as usize,
            }),
            k => Err(Error::Checkpoint(format!("unknown model kind {k}"))),
        }
    }
}

pub fn encode_model(model: &PolicyModel, seed: u64, step: u64) -> Vec<u8> {
    let h = CheckpointHeader::of(model, seed, step);
    let mut out = Vec::with_capacity(HEADER_LEN + 8 * model.dim());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    for x in [h.kind, h.vocab_size, h.max_len, h.context_a, h.context_b] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for x in [h.seed, h.step, h.n_params] {
        out.extend_from_slice(&x.to_le_bytes());
    }
    for p in model.params() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    out
}

pub(crate) struct Reader<'a> {
    pub bytes: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Checkpoint("truncated file".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        (0..n).map(|_| self.f64()).collect()
    }
}

/// Decodes the model section. `vocab` must match the stored vocabulary size.
/// Returns the header, the model, and the byte offset after the section.
pub fn read_model(bytes: &[u8], vocab: &Vocab) -> Result<(CheckpointHeader, PolicyModel, usize)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let h = CheckpointHeader {
        kind: r.u32()?,
        vocab_size: r.u32()?,
        max_len: r.u32()?,
        context_a: r.u32()?,
        context_b: r.u32()?,
        seed: r.u64()?,
        step: r.u64()?,
        n_params: r.u64()?,
    };
    if h.vocab_size as usize != vocab.size() {
        return Err(Error::Checkpoint(format!(
            "vocabulary size {} does not match task vocabulary size {}",
            h.vocab_size,
            vocab.size()
        )));
    }
    let spec = h.spec()?;
    let mut model = spec.build(vocab.clone(), h.max_len as usize, h.seed)?;
    if model.dim() as u64 != h.n_params {
        return Err(Error::Checkpoint(format!(
            "parameter count {} does not match model shape ({})",
            h.n_params,
            model.dim()
        )));
    }
    let params = r.f64s(h.n_params as usize)?;
    model.set_params(&params)?;
    Ok((h, model, r.pos))
}

/// JSON mirror of the model section, for inspection.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelJson {
    pub kind: String,
    pub header: CheckpointHeader,
    pub vocab: Vec<String>,
    pub params: Vec<f64>,
}

impl ModelJson {
    pub fn of(model: &PolicyModel, seed: u64, step: u64) -> Self {
        Self {
            kind: model.kind_name().into(),
            header: CheckpointHeader::of(model, seed, step),
            vocab: model.vocab().names().to_vec(),
            params: model.params().to_vec(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use rand::Rng as _;

    #[test]
    fn header_layout_is_stable() {
        let m = PolicySpec::TabularNgram {
            window: 1,
            prompt_buckets: 2,
        }
        .build(Vocab::anonymous(3).unwrap(), 2, 0)
        .unwrap();
        let bytes = encode_model(&m, 5, 7);
        assert_eq!(&bytes[..8], b"FESTLAB1");
        assert_eq!(u32::from_le_bytes(bytes[12..16].try_into().unwrap()), 0);
        assert_eq!(u32::from_le_bytes(bytes[16..20].try_into().unwrap()), 3);
        assert_eq!(u64::from_le_bytes(bytes[32..40].try_into().unwrap()), 5);
        assert_eq!(u64::from_le_bytes(bytes[40..48].try_into().unwrap()), 7);
        assert_eq!(bytes.len(), HEADER_LEN + 8 * m.dim());
    }

    #[test]
    fn round_trip_preserves_params_bitwise() {
        let mut m = PolicySpec::Recurrent { hidden: 3 }
            .build(Vocab::anonymous(4).unwrap(), 5, 9)
            .unwrap();
        let mut r = rng::substream(1, &[]);
        for p in m.params_mut() {
            *p = r.gen_range(-3.0..3.0);
        }
        let bytes = encode_model(&m, 9, 12);
        let (h, back, end) = read_model(&bytes, m.vocab()).unwrap();
        assert_eq!(end, bytes.len());
        assert_eq!(h.step, 12);
        assert_eq!(back, m);
    }

    #[test]
    fn vocab_mismatch_is_rejected() {
        let m = PolicySpec::default()
            .build(Vocab::anonymous(4).unwrap(), 3, 0)
            .unwrap();
        let bytes = encode_model(&m, 0, 0);
        assert!(matches!(
            read_model(&bytes, &Vocab::anonymous(5).unwrap()),
            Err(Error::Checkpoint(_))
        ));
        assert!(read_model(&bytes[..40], m.vocab()).is_err());
    }
}
