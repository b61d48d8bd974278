//! Context-adaptive dialogue encoding.
//!
//! The query utterance `u_t` picks its `k` most similar previous-session
//! utterances by inner product. Those, followed by the earlier utterances of
//! the current session, are attended over with `u_t` as the query, and a
//! sigmoid gate blends the attended history with `u_t`.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{split_sessions, Dialogue, Utterance};
use crate::encoder::{encode_batch, EncoderInput, EncoderVars, SpecialToken, Vocab, CANDIDATE_MAX_TOKENS, UTTERANCE_MAX_TOKENS};
use crate::error::{dim_err, Error, Result};
use crate::tape::{Tape, Var};
use crate::tensor::{dot, Tensor};

pub const DEFAULT_K: usize = 3;

/// How the dialogue context is turned into one vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum ContextMode {
    /// Top-`k` previous-session selection, attention and gate.
    Adaptive { k: usize },
    /// All utterances concatenated into one sequence and encoded once.
    FullConcat,
    /// Attention and gate over the current session only.
    NoPrev,
    /// Unweighted mean of all utterance encodings, `u_t` included.
    MeanPool,
}

impl Default for ContextMode {
    fn default() -> Self {
        ContextMode::Adaptive { k: DEFAULT_K }
    }
}

impl ContextMode {
    pub fn validate(&self) -> Result<()> {
        match self {
            ContextMode::Adaptive { k: 0 } => Err(Error::Config("adaptive mode requires k ≥ 1".into())),
            _ => Ok(()),
        }
    }
}

impl fmt::Display for ContextMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextMode::Adaptive { k } => write!(f, "adaptive(k={k})"),
            ContextMode::FullConcat => f.write_str("full-concat"),
            ContextMode::NoPrev => f.write_str("no-prev"),
            ContextMode::MeanPool => f.write_str("mean-pool"),
        }
    }
}

impl FromStr for ContextMode {
    type Err = Error;

    /// `adaptive`, `adaptive:K`, `full-concat`, `no-prev` or `mean-pool`.
    fn from_str(s: &str) -> Result<Self> {
        let mode = match s {
            "adaptive" => ContextMode::default(),
            "full-concat" => ContextMode::FullConcat,
            "no-prev" => ContextMode::NoPrev,
            "mean-pool" => ContextMode::MeanPool,
            other => match other.strip_prefix("adaptive:").map(str::parse) {
                Some(Ok(k)) => ContextMode::Adaptive { k },
                _ => return Err(Error::Config(format!("unknown context mode `{other}`"))),
            },
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// Gate weight `w` of length `2d`.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionParams {
    pub gate: Tensor,
}

impl FusionParams {
    pub fn init(dim: usize, rng: &mut ChaCha8Rng) -> Self {
        Self {
            gate: Tensor::vector((0..2 * dim).map(|_| rng.gen_range(-0.1..=0.1)).collect()),
        }
    }

    pub fn new(gate: Tensor) -> Result<Self> {
        if gate.rank() != 1 || gate.len() % 2 != 0 || gate.is_empty() {
            return Err(dim_err("fusion params", format!("gate shape {:?}", gate.shape())));
        }
        Ok(Self { gate })
    }
}

/// Indices of the `min(k, n)` highest-scoring previous encodings, in original
/// order. Equal scores favor the lower index.
pub fn select_prev_topk(query: &[f64], prev: &[&[f64]], k: usize) -> Vec<usize> {
    let scores: Vec<f64> = prev.iter().map(|h| dot(query, h)).collect();
    topk_indices(&scores, k)
}

pub(crate) fn topk_indices(scores: &[f64], k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order.truncate(k);
    order.sort_unstable();
    order
}

/// Attention output and its weights.
#[derive(Clone, Copy, Debug)]
pub struct Attention {
    pub output: Var,
    pub weights: Var,
}

/// Single-head scaled dot-product attention of `query` over `history`
/// (keys and values are the same vectors).
pub fn attend(tape: &mut Tape, query: Var, history: &[Var]) -> Result<Attention> {
    if history.is_empty() {
        return Err(Error::Contract("attention over an empty history".into()));
    }
    let d = tape.value(query).len();
    let keys = tape.stack(history)?;
    let scores = tape.matmul(keys, query)?;
    let scaled = tape.scale(scores, 1.0 / (d as f64).sqrt())?;
    let weights = tape.softmax(scaled)?;
    let output = tape.matmul(weights, keys)?;
    Ok(Attention { output, weights })
}

/// `λ = σ(w · [h_hist; h_query])`, `h_d = λ·h_hist + (1-λ)·h_query`.
/// Returns `(h_d, λ)`.
pub fn gate_fuse(tape: &mut Tape, h_hist: Var, h_query: Var, gate: Var) -> Result<(Var, Var)> {
    let cat = tape.concat(&[h_hist, h_query])?;
    let logit = tape.dot(gate, cat)?;
    let lambda = tape.sigmoid(logit)?;
    let diff = tape.sub(h_hist, h_query)?;
    let mixed = tape.scale_by(diff, lambda)?;
    let h_d = tape.add(h_query, mixed)?;
    Ok((h_d, lambda))
}

/// Encodes the context of `query_turn` under `mode`.
pub fn encode_context(
    tape: &mut Tape,
    enc: &EncoderVars,
    gate: Var,
    dialogue: &Dialogue,
    query_turn: usize,
    mode: ContextMode,
    vocab: &Vocab,
) -> Result<Var> {
    encode_context_with_selection(tape, enc, gate, dialogue, query_turn, mode, vocab, None).map(|(h, _)| h)
}

/// [`encode_context`] with the previous-session selection optionally fixed
/// to `selection` (indices into the previous-session utterances). Returns the
/// context vector and the selection that was used.
#[allow(clippy::too_many_arguments)]
pub fn encode_context_with_selection(
    tape: &mut Tape,
    enc: &EncoderVars,
    gate: Var,
    dialogue: &Dialogue,
    query_turn: usize,
    mode: ContextMode,
    vocab: &Vocab,
    selection: Option<&[usize]>,
) -> Result<(Var, Vec<usize>)> {
    mode.validate()?;
    let split = split_sessions(dialogue, query_turn)?;

    if mode == ContextMode::FullConcat {
        let all: Vec<&Utterance> = split
            .prev
            .iter()
            .chain(&split.curr)
            .copied()
            .chain(std::iter::once(split.last))
            .collect();
        let input = concat_input(&all, vocab);
        let m = encode_batch(tape, enc, &[input])?;
        return Ok((tape.row(m, 0)?, Vec::new()));
    }

    let prev: &[&Utterance] = if mode == ContextMode::NoPrev { &[] } else { &split.prev };
    let inputs: Vec<EncoderInput> = prev
        .iter()
        .chain(&split.curr)
        .copied()
        .chain(std::iter::once(split.last))
        .map(|u| EncoderInput::utterance(u, vocab))
        .collect();
    let n = inputs.len();
    let encoded = encode_batch(tape, enc, &inputs)?;
    if mode == ContextMode::MeanPool {
        return Ok((tape.mean_rows(encoded)?, Vec::new()));
    }

    let h_query = tape.row(encoded, n - 1)?;
    let selected = match mode {
        ContextMode::Adaptive { .. } if !prev.is_empty() && selection.is_some() => {
            let fixed = selection.expect("checked").to_vec();
            if let Some(&bad) = fixed.iter().find(|&&i| i >= prev.len()) {
                return Err(Error::Contract(format!(
                    "selected utterance {bad} outside {} previous-session utterances",
                    prev.len()
                )));
            }
            fixed
        }
        ContextMode::Adaptive { k } if !prev.is_empty() => {
            let values = tape.value(encoded);
            let rows: Vec<&[f64]> = (0..prev.len()).map(|i| values.row(i)).collect();
            select_prev_topk(values.row(n - 1), &rows, k)
        }
        _ => Vec::new(),
    };
    let mut history = Vec::with_capacity(selected.len() + split.curr.len());
    for i in selected.iter().copied().chain(prev.len()..n - 1) {
        history.push(tape.row(encoded, i)?);
    }
    if history.is_empty() {
        return Ok((h_query, selected));
    }
    let att = attend(tape, h_query, &history)?;
    let (h_d, _) = gate_fuse(tape, att.output, h_query, gate)?;
    Ok((h_d, selected))
}

/// `[CLS]` followed by `[role] tokens…` for every utterance, keeping the most
/// recent tokens when the candidate length limit is exceeded.
fn concat_input(utterances: &[&Utterance], vocab: &Vocab) -> EncoderInput {
    let mut body = Vec::new();
    for u in utterances {
        let one = EncoderInput::utterance(u, vocab);
        body.extend_from_slice(&one.ids[1..]);
        debug_assert!(one.ids.len() <= UTTERANCE_MAX_TOKENS + 2);
    }
    let limit = CANDIDATE_MAX_TOKENS - 1;
    if body.len() > limit {
        body.drain(..body.len() - limit);
    }
    let mut ids = Vec::with_capacity(body.len() + 1);
    ids.push(SpecialToken::Cls.id());
    ids.extend(body);
    EncoderInput {
        ids,
        position: utterances.last().map(|u| u.turn_index),
    }
}
