//! Checkpoint file layout, all integers little-endian:
//!
//! ```text
//! "UCR1"
//! u64 length, JSON header   {config, step, adam_t, shapes}
//! u64 length, vocabulary    tokens joined by '\n'
//! per parameter tensor      u64 count, count × f64
//! per parameter tensor      first moments, same framing
//! per parameter tensor      second moments, same framing
//! ```
//!
//! Parameter order is embeddings, feed-forward weight, feed-forward bias,
//! positions (if enabled), gate.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AdamState, TrainConfig};
use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::model::Model;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"UCR1";

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: TrainConfig,
    pub model: Model,
    pub optimizer: AdamState,
    /// Completed training steps.
    pub step: u64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    config: TrainConfig,
    step: u64,
    adam_t: u64,
    shapes: Vec<Vec<usize>>,
}

impl Checkpoint {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let params = self.model.params();
        let header = Header {
            config: self.config.clone(),
            step: self.step,
            adam_t: self.optimizer.t,
            shapes: params.iter().map(|p| p.shape().to_vec()).collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        write_record(&mut out, &serde_json::to_vec(&header)?);
        write_record(&mut out, self.model.vocab.tokens().join("\n").as_bytes());
        for p in &params {
            write_floats(&mut out, p.data());
        }
        for m in &self.optimizer.m {
            write_floats(&mut out, m);
        }
        for v in &self.optimizer.v {
            write_floats(&mut out, v);
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        let magic = r.take(4)?;
        if magic != MAGIC {
            if magic.starts_with(b"UCR") {
                return Err(Error::IncompatibleCheckpoint {
                    found: String::from_utf8_lossy(magic).into_owned(),
                    expected: String::from_utf8_lossy(MAGIC).into_owned(),
                });
            }
            return Err(Error::Checkpoint("missing magic bytes".into()));
        }
        let header: Header = serde_json::from_slice(r.record()?)
            .map_err(|e| Error::Checkpoint(format!("header: {e}")))?;
        let vocab_text = std::str::from_utf8(r.record()?)
            .map_err(|_| Error::Checkpoint("vocabulary is not UTF-8".into()))?;
        let vocab = Vocab::from_tokens(vocab_text.split('\n').map(String::from).collect())?;

        let n = header.shapes.len();
        let mut tensors = Vec::with_capacity(n);
        for shape in &header.shapes {
            let data = r.floats(shape.iter().product())?;
            tensors.push(Tensor::new(shape.clone(), data).map_err(|e| Error::Checkpoint(e.to_string()))?);
        }
        let mut m = Vec::with_capacity(n);
        for shape in &header.shapes {
            m.push(r.floats(shape.iter().product())?);
        }
        let mut v = Vec::with_capacity(n);
        for shape in &header.shapes {
            v.push(r.floats(shape.iter().product())?);
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
        }
        let model = Model::from_params(vocab, tensors, header.config.positions)
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        if model.dim() != header.config.dim {
            return Err(Error::Checkpoint("parameter shapes disagree with the configured dimension".into()));
        }
        Ok(Self {
            config: header.config,
            model,
            optimizer: AdamState { t: header.adam_t, m, v },
            step: header.step,
        })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_bytes(&fs::read(path)?)
    }
}

fn write_record(out: &mut Vec<u8>, body: &[u8]) {
    out.extend_from_slice(&(body.len() as u64).to_le_bytes());
    out.extend_from_slice(body);
}

fn write_floats(out: &mut Vec<u8>, xs: &[f64]) {
    out.extend_from_slice(&(xs.len() as u64).to_le_bytes());
    for x in xs {
        out.extend_from_slice(&x.to_le_bytes());
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.bytes.len())));
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn record(&mut self) -> Result<&'a [u8]> {
        let n = usize::try_from(self.u64()?).map_err(|_| Error::Checkpoint("record too long".into()))?;
        self.take(n)
    }

    fn floats(&mut self, expected: usize) -> Result<Vec<f64>> {
        let n = self.u64()?;
        if n != expected as u64 {
            return Err(Error::Checkpoint(format!("array of {n} values, expected {expected}")));
        }
        let raw = self.take(expected.checked_mul(8).ok_or_else(|| Error::Checkpoint("array too long".into()))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::trainer::{train, TrainConfig};

    fn trained() -> (crate::corpus::Corpus, Checkpoint) {
        let c = generate_synthetic(&SynthConfig::small(), 2).unwrap();
        let cfg = TrainConfig {
            epochs: 1,
            batch_size: 8,
            dim: 8,
            ..TrainConfig::default()
        };
        let ck = train(&c, &cfg).unwrap().0;
        (c, ck)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let (c, ck) = trained();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let ex = &c.examples()[3];
        let d = c.dialogue(&ex.dialogue_id).unwrap();
        let mode = ck.config.mode;
        assert_eq!(
            ck.model.context_vector(d, ex.query_turn, mode).unwrap(),
            back.model.context_vector(d, ex.query_turn, mode).unwrap()
        );
    }

    #[test]
    fn truncated_file_is_rejected() {
        let (_, ck) = trained();
        let bytes = ck.to_bytes().unwrap();
        for cut in [0, 3, 10, bytes.len() / 2, bytes.len() - 1] {
            assert!(matches!(Checkpoint::from_bytes(&bytes[..cut]), Err(Error::Checkpoint(_))), "cut {cut}");
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(Checkpoint::from_bytes(&longer), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn other_version_is_incompatible() {
        let (_, ck) = trained();
        let mut bytes = ck.to_bytes().unwrap();
        bytes[3] = b'2';
        assert!(matches!(
            Checkpoint::from_bytes(&bytes),
            Err(Error::IncompatibleCheckpoint { .. })
        ));
    }
}
