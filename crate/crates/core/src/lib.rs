//! Universal conversational retrieval.
//!
//! One dual encoder serves persona, knowledge and response selection. Dialogue
//! contexts are encoded utterance by utterance, the most relevant previous
//! session utterances are picked by inner product with the query utterance,
//! fused by attention and a learned gate, and scored against task-tagged
//! candidate encodings with a dot product. Training combines an in-batch
//! contrastive loss that uses historically selected candidates as semi-hard
//! negatives with a pairwise ranking loss over (positive, historical, easy)
//! similarities.
//!
//! Module map:
//!
//! | module | role |
//! |--------|------|
//! | [`tensor`], [`tape`], [`gradcheck`] | `f64` tensors, reverse-mode autodiff, finite-difference checks |
//! | [`corpus`] | dialogue data model, JSONL corpus files, pool sampling, synthetic generator |
//! | [`encoder`] | tokenization and the shared utterance / candidate encoder |
//! | [`fusion`] | top-K history selection, attention and gated fusion |
//! | [`objectives`] | historical contrastive and pairwise similarity losses |
//! | [`trainer`] | AdamW training loop and versioned checkpoints |
//! | [`eval`] | brute-force retrieval, R@k / MRR and analysis sweeps |

pub mod corpus;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod gradcheck;
pub mod model;
pub mod objectives;
pub mod rng;
pub mod tape;
pub mod tensor;
pub mod trainer;

pub use corpus::{Candidate, Corpus, Dialogue, RetrievalExample, Role, Session, TaskKind, Utterance};
pub use encoder::{EncoderParams, Vocab};
pub use error::{Error, Result};
pub use eval::{MetricsReport, EmbeddedPool};
pub use fusion::{ContextMode, FusionParams};
pub use model::Model;
pub use objectives::{BatchSimilarities, LossConfig};
pub use tape::{Tape, Var};
pub use tensor::Tensor;
pub use trainer::{Checkpoint, Regime, TrainConfig};
