//! Shared text encoder for utterances and task-tagged candidates.
//!
//! An input is `[CLS] [indicator] w1 … wn`, where the indicator is the speaker
//! token for utterances and the task token for candidates. The encoding is
//! `tanh(mean(embed(ids)) · W + b)`.

mod vocab;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub use vocab::{SpecialToken, Vocab};

use crate::corpus::{Candidate, Role, TaskKind, Utterance};
use crate::error::{dim_err, Result};
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

pub const UTTERANCE_MAX_TOKENS: usize = 64;
pub const CANDIDATE_MAX_TOKENS: usize = 512;
/// Discourse positions beyond this share the last slot.
pub const POSITION_SLOTS: usize = 64;

/// Whitespace tokenization through `vocab`, truncated to the first `max_len` ids.
pub fn tokenize(text: &str, vocab: &Vocab, max_len: usize) -> Vec<u32> {
    text.split_whitespace()
        .take(max_len)
        .map(|t| vocab.id_or_unk(t))
        .collect()
}

pub fn role_token(role: Role) -> SpecialToken {
    match role {
        Role::User => SpecialToken::Usr,
        Role::System => SpecialToken::Sys,
    }
}

pub fn task_token(task: TaskKind) -> SpecialToken {
    match task {
        TaskKind::Persona => SpecialToken::Persona,
        TaskKind::Knowledge => SpecialToken::Knowledge,
        TaskKind::Response => SpecialToken::Response,
    }
}

/// Token ids ready for the encoder, with an optional discourse position.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct EncoderInput {
    pub ids: Vec<u32>,
    pub position: Option<usize>,
}

impl EncoderInput {
    pub fn utterance(u: &Utterance, vocab: &Vocab) -> Self {
        let mut ids = vec![SpecialToken::Cls.id(), role_token(u.role).id()];
        ids.extend(tokenize(&u.text, vocab, UTTERANCE_MAX_TOKENS));
        Self {
            ids,
            position: Some(u.turn_index),
        }
    }

    pub fn candidate(c: &Candidate, vocab: &Vocab) -> Self {
        let mut ids = vec![SpecialToken::Cls.id(), task_token(c.task).id()];
        ids.extend(tokenize(&c.text, vocab, CANDIDATE_MAX_TOKENS));
        Self { ids, position: None }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EncoderParams {
    /// `vocab × d`
    pub embeddings: Tensor,
    /// `d × d`
    pub ff_weight: Tensor,
    /// `d`
    pub ff_bias: Tensor,
    /// `POSITION_SLOTS × d`, present only when discourse positions are enabled.
    pub positions: Option<Tensor>,
}

fn uniform(rng: &mut ChaCha8Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-0.1..=0.1)).collect()
}

impl EncoderParams {
    /// Uniform `[-0.1, 0.1]` initialization.
    pub fn init(vocab_size: usize, dim: usize, with_positions: bool, rng: &mut ChaCha8Rng) -> Self {
        let embeddings = Tensor::from_parts(vec![vocab_size, dim], uniform(rng, vocab_size * dim));
        let ff_weight = Tensor::from_parts(vec![dim, dim], uniform(rng, dim * dim));
        let ff_bias = Tensor::vector(uniform(rng, dim));
        let positions = with_positions
            .then(|| Tensor::from_parts(vec![POSITION_SLOTS, dim], uniform(rng, POSITION_SLOTS * dim)));
        Self {
            embeddings,
            ff_weight,
            ff_bias,
            positions,
        }
    }

    pub fn dim(&self) -> usize {
        self.ff_bias.len()
    }

    pub fn vocab_size(&self) -> usize {
        self.embeddings.rows()
    }
}

/// Encoder parameters registered on a tape.
#[derive(Clone, Copy, Debug)]
pub struct EncoderVars {
    pub embeddings: Var,
    pub ff_weight: Var,
    pub ff_bias: Var,
    pub positions: Option<Var>,
}

impl EncoderVars {
    pub fn leaves(tape: &mut Tape, p: &EncoderParams) -> Self {
        Self {
            embeddings: tape.leaf(p.embeddings.clone()),
            ff_weight: tape.leaf(p.ff_weight.clone()),
            ff_bias: tape.leaf(p.ff_bias.clone()),
            positions: p.positions.as_ref().map(|t| tape.leaf(t.clone())),
        }
    }

    pub fn constants(tape: &mut Tape, p: &EncoderParams) -> Self {
        Self {
            embeddings: tape.constant(p.embeddings.clone()),
            ff_weight: tape.constant(p.ff_weight.clone()),
            ff_bias: tape.constant(p.ff_bias.clone()),
            positions: p.positions.as_ref().map(|t| tape.constant(t.clone())),
        }
    }
}

/// Encodes a batch of inputs into an `n × d` matrix, one row per input.
pub fn encode_batch(tape: &mut Tape, vars: &EncoderVars, inputs: &[EncoderInput]) -> Result<Var> {
    if inputs.is_empty() {
        return Err(dim_err("encode_batch", "no inputs"));
    }
    let bags = inputs.iter().map(|i| i.ids.clone()).collect();
    let mut pooled = tape.embedding_bag(vars.embeddings, bags)?;
    if let Some(pos) = vars.positions {
        let slots: Option<Vec<Vec<u32>>> = inputs
            .iter()
            .map(|i| i.position.map(|p| vec![p.min(POSITION_SLOTS - 1) as u32]))
            .collect();
        // Batches mixing positioned and unpositioned inputs get no positions.
        if let Some(slots) = slots {
            let p = tape.embedding_bag(pos, slots)?;
            pooled = tape.add(pooled, p)?;
        }
    }
    let pre = tape.matmul(pooled, vars.ff_weight)?;
    let pre = tape.add_row(pre, vars.ff_bias)?;
    tape.tanh(pre)
}

/// Encodes a single input as a `d`-vector.
pub fn encode_one(tape: &mut Tape, vars: &EncoderVars, input: EncoderInput) -> Result<Var> {
    let m = encode_batch(tape, vars, std::slice::from_ref(&input))?;
    tape.row(m, 0)
}

pub fn encode_utterance(tape: &mut Tape, vars: &EncoderVars, u: &Utterance, vocab: &Vocab) -> Result<Var> {
    encode_one(tape, vars, EncoderInput::utterance(u, vocab))
}

pub fn encode_candidate(tape: &mut Tape, vars: &EncoderVars, c: &Candidate, vocab: &Vocab) -> Result<Var> {
    encode_one(tape, vars, EncoderInput::candidate(c, vocab))
}

/// Gradient-free batch encoding.
pub fn encode_values(params: &EncoderParams, inputs: &[EncoderInput]) -> Result<Tensor> {
    let mut tape = Tape::new();
    let vars = EncoderVars::constants(&mut tape, params);
    let m = encode_batch(&mut tape, &vars, inputs)?;
    Ok(tape.value(m).clone())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::{grad_check, GradCheck};
    use crate::rng;
    use crate::tensor::dot;

    fn vocab() -> Vocab {
        Vocab::build(["t1 t2 t1", "hello there"])
    }

    fn params(with_pos: bool) -> EncoderParams {
        let v = vocab();
        EncoderParams::init(v.len(), 8, with_pos, &mut rng::rng(1, rng::STREAM_INIT, 0))
    }

    fn utt(role: Role, text: &str) -> Utterance {
        Utterance {
            role,
            text: text.into(),
            turn_index: 0,
        }
    }

    fn values(p: &EncoderParams, input: EncoderInput) -> Vec<f64> {
        encode_values(p, &[input]).unwrap().into_data()
    }

    #[test]
    fn tokenize_rules() {
        let v = Vocab::from_tokens(
            SpecialToken::ALL
                .iter()
                .map(|s| s.as_str().to_string())
                .chain(["a".to_string(), "t1".into(), "t2".into()])
                .collect(),
        )
        .unwrap();
        assert_eq!(tokenize("t1 t2 t1", &v, 64), vec![10, 11, 10]);
        assert_eq!(tokenize("zzz", &v, 64), vec![SpecialToken::Unk.id()]);
        assert!(tokenize("", &v, 64).is_empty());
        let long: Vec<String> = (0..100).map(|i| if i % 2 == 0 { "t1".into() } else { "t2".into() }).collect();
        let ids = tokenize(&long.join(" "), &v, 64);
        assert_eq!(ids.len(), 64);
        assert_eq!(ids[..2], [10, 11]);
    }

    #[test]
    fn utterance_encoding_is_pure_and_role_sensitive() {
        let (p, v) = (params(false), vocab());
        let a = values(&p, EncoderInput::utterance(&utt(Role::User, "t1 t2"), &v));
        let b = values(&p, EncoderInput::utterance(&utt(Role::User, "t1 t2"), &v));
        let c = values(&p, EncoderInput::utterance(&utt(Role::System, "t1 t2"), &v));
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), 8);
    }

    #[test]
    fn empty_text_encodes_cls_and_indicator() {
        let (p, v) = (params(false), vocab());
        let got = values(&p, EncoderInput::utterance(&utt(Role::User, ""), &v));
        // tanh((e_cls + e_usr)/2 · W + b), written out by hand
        let d = p.dim();
        let e = |id: u32| p.embeddings.row(id as usize).to_vec();
        let (cls, usr) = (e(SpecialToken::Cls.id()), e(SpecialToken::Usr.id()));
        let mean: Vec<f64> = (0..d).map(|j| (cls[j] + usr[j]) * 0.5).collect();
        for j in 0..d {
            let col: Vec<f64> = (0..d).map(|k| p.ff_weight.data()[k * d + j]).collect();
            let want = (dot(&mean, &col) + p.ff_bias.data()[j]).tanh();
            assert!((got[j] - want).abs() < 1e-15);
        }
        let cand = Candidate {
            id: "c".into(),
            task: TaskKind::Persona,
            text: String::new(),
        };
        assert_eq!(values(&p, EncoderInput::candidate(&cand, &v)).len(), d);
    }

    #[test]
    fn task_token_changes_candidate_encoding() {
        let (p, v) = (params(false), vocab());
        let mk = |task| Candidate {
            id: "c".into(),
            task,
            text: "hello t1".into(),
        };
        let a = values(&p, EncoderInput::candidate(&mk(TaskKind::Persona), &v));
        let b = values(&p, EncoderInput::candidate(&mk(TaskKind::Knowledge), &v));
        assert_ne!(a, b);
    }

    #[test]
    fn long_candidate_is_truncated_to_512_tokens() {
        let (p, v) = (params(false), vocab());
        let head: Vec<&str> = vec!["t1"; 512];
        let mut long = head.clone();
        long.extend(vec!["hello"; 88]);
        let mk = |text: String| Candidate {
            id: "c".into(),
            task: TaskKind::Knowledge,
            text,
        };
        let full = EncoderInput::candidate(&mk(long.join(" ")), &v);
        assert_eq!(full.ids.len(), 2 + 512);
        assert_eq!(
            values(&p, full),
            values(&p, EncoderInput::candidate(&mk(head.join(" ")), &v))
        );
    }

    #[test]
    fn batched_equals_one_by_one() {
        let (p, v) = (params(true), vocab());
        let inputs: Vec<EncoderInput> = ["t1", "t2 hello", "there t1 t1"]
            .iter()
            .enumerate()
            .map(|(i, t)| {
                let mut u = utt(Role::User, t);
                u.turn_index = i;
                EncoderInput::utterance(&u, &v)
            })
            .collect();
        let batch = encode_values(&p, &inputs).unwrap();
        for (i, input) in inputs.into_iter().enumerate() {
            assert_eq!(batch.row(i), values(&p, input).as_slice());
        }
    }

    #[test]
    fn dual_encoder_score_gradient_matches_finite_differences() {
        for with_pos in [false, true] {
            let (p, v) = (params(with_pos), vocab());
            let u = utt(Role::User, "t1 hello t2");
            let c = Candidate {
                id: "c".into(),
                task: TaskKind::Response,
                text: "there t1".into(),
            };
            let mut ps = vec![p.embeddings.clone(), p.ff_weight.clone(), p.ff_bias.clone()];
            ps.extend(p.positions.clone());
            let f = |t: &mut Tape, vars: &[Var]| {
                let ev = EncoderVars {
                    embeddings: vars[0],
                    ff_weight: vars[1],
                    ff_bias: vars[2],
                    positions: vars.get(3).copied(),
                };
                let hu = encode_utterance(t, &ev, &u, &v)?;
                let hc = encode_candidate(t, &ev, &c, &v)?;
                t.dot(hu, hc)
            };
            let r = grad_check(f, &ps, &GradCheck::default()).unwrap();
            assert!(r.max_rel_error < 1e-4, "{r:?}");
        }
    }
}
