//! Trainable parameters of the whole retriever and gradient-free inference.

use crate::corpus::{Candidate, Dialogue};
use crate::encoder::{encode_values, EncoderInput, EncoderParams, EncoderVars, Vocab};
use crate::error::{dim_err, Result};
use crate::fusion::{encode_context, ContextMode, FusionParams};
use crate::rng::{self, STREAM_INIT};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub vocab: Vocab,
    pub encoder: EncoderParams,
    pub fusion: FusionParams,
}

/// Model parameters registered on a tape, in [`Model::params`] order.
#[derive(Clone, Copy, Debug)]
pub struct ModelVars {
    pub encoder: EncoderVars,
    pub gate: Var,
}

impl ModelVars {
    pub fn all(&self) -> Vec<Var> {
        let mut v = vec![self.encoder.embeddings, self.encoder.ff_weight, self.encoder.ff_bias];
        v.extend(self.encoder.positions);
        v.push(self.gate);
        v
    }
}

impl Model {
    pub fn init(vocab: Vocab, dim: usize, with_positions: bool, seed: u64) -> Self {
        let mut rng = rng::rng(seed, STREAM_INIT, 0);
        let encoder = EncoderParams::init(vocab.len(), dim, with_positions, &mut rng);
        let fusion = FusionParams::init(dim, &mut rng);
        Self { vocab, encoder, fusion }
    }

    pub fn dim(&self) -> usize {
        self.encoder.dim()
    }

    /// Parameter tensors in their fixed serialization order: embeddings,
    /// feed-forward weight, feed-forward bias, positions (when present), gate.
    pub fn params(&self) -> Vec<&Tensor> {
        let e = &self.encoder;
        let mut v = vec![&e.embeddings, &e.ff_weight, &e.ff_bias];
        v.extend(e.positions.as_ref());
        v.push(&self.fusion.gate);
        v
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let e = &mut self.encoder;
        let mut v = vec![&mut e.embeddings, &mut e.ff_weight, &mut e.ff_bias];
        v.extend(e.positions.as_mut());
        v.push(&mut self.fusion.gate);
        v
    }

    /// Rebuilds a model from tensors in [`Model::params`] order.
    pub fn from_params(vocab: Vocab, mut tensors: Vec<Tensor>, with_positions: bool) -> Result<Self> {
        let expected = 4 + usize::from(with_positions);
        if tensors.len() != expected {
            return Err(dim_err("model params", format!("{} tensors, expected {expected}", tensors.len())));
        }
        let gate = tensors.pop().expect("length checked");
        let positions = with_positions.then(|| tensors.pop().expect("length checked"));
        let ff_bias = tensors.pop().expect("length checked");
        let ff_weight = tensors.pop().expect("length checked");
        let embeddings = tensors.pop().expect("length checked");
        let d = ff_bias.len();
        let ok = ff_bias.rank() == 1
            && embeddings.shape() == [vocab.len(), d]
            && ff_weight.shape() == [d, d]
            && positions.as_ref().map_or(true, |p| p.rank() == 2 && p.cols() == d)
            && gate.shape() == [2 * d];
        if !ok {
            return Err(dim_err("model params", "tensor shapes disagree with vocabulary and dimension"));
        }
        Ok(Self {
            vocab,
            encoder: EncoderParams {
                embeddings,
                ff_weight,
                ff_bias,
                positions,
            },
            fusion: FusionParams { gate },
        })
    }

    pub fn leaves(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: EncoderVars::leaves(tape, &self.encoder),
            gate: tape.leaf(self.fusion.gate.clone()),
        }
    }

    pub fn constants(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            encoder: EncoderVars::constants(tape, &self.encoder),
            gate: tape.constant(self.fusion.gate.clone()),
        }
    }

    /// Context vector of one query turn, without recording gradients.
    pub fn context_vector(&self, dialogue: &Dialogue, query_turn: usize, mode: ContextMode) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let vars = self.constants(&mut tape);
        let h = encode_context(&mut tape, &vars.encoder, vars.gate, dialogue, query_turn, mode, &self.vocab)?;
        Ok(tape.value(h).data().to_vec())
    }

    /// Candidate embeddings, one row per candidate.
    pub fn candidate_matrix(&self, cands: &[&Candidate]) -> Result<Tensor> {
        let inputs: Vec<EncoderInput> = cands.iter().map(|c| EncoderInput::candidate(c, &self.vocab)).collect();
        encode_values(&self.encoder, &inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocab {
        Vocab::build(["a b c"])
    }

    #[test]
    fn init_is_seeded() {
        let a = Model::init(vocab(), 8, true, 3);
        assert_eq!(a, Model::init(vocab(), 8, true, 3));
        assert_ne!(a, Model::init(vocab(), 8, true, 4));
        assert_eq!(a.params().len(), 5);
        assert_eq!(Model::init(vocab(), 8, false, 3).params().len(), 4);
    }

    #[test]
    fn params_round_trip() {
        for pos in [false, true] {
            let m = Model::init(vocab(), 4, pos, 1);
            let t: Vec<Tensor> = m.params().into_iter().cloned().collect();
            assert_eq!(Model::from_params(vocab(), t, pos).unwrap(), m);
        }
        let m = Model::init(vocab(), 4, false, 1);
        let mut t: Vec<Tensor> = m.params().into_iter().cloned().collect();
        t.swap(1, 2);
        assert!(Model::from_params(vocab(), t, false).is_err());
    }
}
