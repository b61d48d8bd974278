//! Mini-batch training.
//!
//! Batches are drawn per task from a seeded shuffle of the training split,
//! the last partial batch of each task is dropped, and in the full regime the
//! tasks take turns batch by batch. Easy negatives come from a seeded stream
//! keyed by the step number, so a run resumed from a checkpoint continues
//! exactly as the uninterrupted run would have.

mod checkpoint;
mod optim;

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

pub use checkpoint::{Checkpoint, MAGIC};
pub use optim::{adamw_step, AdamConfig, AdamState, Schedule};

use crate::corpus::{Corpus, RetrievalExample, TaskKind};
use crate::encoder::{encode_batch, EncoderInput, Vocab};
use crate::error::{Error, Result};
use crate::fusion::{encode_context_with_selection, ContextMode};
use crate::model::{Model, ModelVars};
use crate::objectives::{combined_loss, BatchSimilarities, LossConfig};
use crate::rng::{self, STREAM_EASY_NEG, STREAM_SHUFFLE};
use crate::tape::{Tape, Var};

/// Which examples are trained on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Regime {
    Single(TaskKind),
    #[default]
    Full,
}

impl Regime {
    pub fn includes(self, task: TaskKind) -> bool {
        match self {
            Regime::Single(t) => t == task,
            Regime::Full => true,
        }
    }

    pub fn tasks(self) -> Vec<TaskKind> {
        TaskKind::ALL.into_iter().filter(|&t| self.includes(t)).collect()
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Regime::Single(t) => write!(f, "{t}"),
            Regime::Full => f.write_str("full"),
        }
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "full" => Ok(Regime::Full),
            other => other
                .parse()
                .map(Regime::Single)
                .map_err(|_| Error::Config(format!("unknown regime `{other}`"))),
        }
    }
}

impl From<Regime> for String {
    fn from(r: Regime) -> Self {
        r.to_string()
    }
}

impl TryFrom<String> for Regime {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub mode: ContextMode,
    pub loss: LossConfig,
    pub regime: Regime,
    pub seed: u64,
    pub dim: usize,
    pub weight_decay: f64,
    /// Fraction of dialogues held out from training.
    pub holdout: f64,
    /// Adds a learned embedding of the utterance's turn index.
    pub positions: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5,
            batch_size: 16,
            learning_rate: 1e-2,
            schedule: Schedule::Constant,
            mode: ContextMode::default(),
            loss: LossConfig::default(),
            regime: Regime::Full,
            seed: 0,
            dim: 64,
            weight_decay: 0.0,
            holdout: 0.1,
            positions: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.batch_size == 0 {
            return bad("batch size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("learning rate must be positive, got {}", self.learning_rate));
        }
        if self.dim == 0 {
            return bad("embedding dimension must be positive".into());
        }
        if !(0.0..1.0).contains(&self.holdout) {
            return bad(format!("holdout fraction must lie in [0, 1), got {}", self.holdout));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("weight decay must be non-negative, got {}", self.weight_decay));
        }
        self.mode.validate()?;
        self.loss.validate()
    }

    fn adam(&self) -> AdamConfig {
        AdamConfig {
            weight_decay: self.weight_decay,
            ..AdamConfig::default()
        }
    }
}

/// Number of times training touched each task's data.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct PoolAccess {
    pub examples: [u64; 3],
    pub candidates: [u64; 3],
}

impl PoolAccess {
    pub fn touched(&self, task: TaskKind) -> bool {
        self.examples[task.index()] > 0 || self.candidates[task.index()] > 0
    }
}

/// Batches of example indices for every epoch, in execution order.
pub fn batch_plan(corpus: &Corpus, cfg: &TrainConfig) -> Result<Vec<Vec<usize>>> {
    cfg.validate()?;
    let (train, _) = corpus.split_examples(cfg.holdout);
    let tasks = cfg.regime.tasks();
    let per_task: Vec<Vec<usize>> = tasks
        .iter()
        .map(|&t| train.iter().copied().filter(|&i| corpus.examples()[i].task == t).collect())
        .collect();
    let total: usize = per_task.iter().map(Vec::len).sum();
    if total < cfg.batch_size || per_task.iter().all(|v| v.len() < cfg.batch_size) {
        return Err(Error::Config(format!(
            "regime {} has {total} training examples, fewer than a batch of {} for every task",
            cfg.regime, cfg.batch_size
        )));
    }

    let mut plan = Vec::new();
    for epoch in 0..cfg.epochs {
        let mut queues: Vec<Vec<Vec<usize>>> = Vec::with_capacity(tasks.len());
        for (ti, &task) in tasks.iter().enumerate() {
            let mut order = per_task[ti].clone();
            let index = (epoch * TaskKind::ALL.len() + task.index()) as u64;
            order.shuffle(&mut rng::rng(cfg.seed, STREAM_SHUFFLE, index));
            queues.push(order.chunks_exact(cfg.batch_size).map(<[usize]>::to_vec).collect());
        }
        let longest = queues.iter().map(Vec::len).max().unwrap_or(0);
        for b in 0..longest {
            for q in &queues {
                if let Some(batch) = q.get(b) {
                    plan.push(batch.clone());
                }
            }
        }
    }
    Ok(plan)
}

pub struct Trainer<'c> {
    corpus: &'c Corpus,
    cfg: TrainConfig,
    model: Model,
    adam: AdamState,
    step: u64,
    plan: Vec<Vec<usize>>,
    access: PoolAccess,
}

impl<'c> Trainer<'c> {
    pub fn new(corpus: &'c Corpus, cfg: TrainConfig) -> Result<Self> {
        let plan = batch_plan(corpus, &cfg)?;
        let model = Model::init(corpus.vocab().clone(), cfg.dim, cfg.positions, cfg.seed);
        let adam = AdamState::new(&model.params());
        Ok(Self {
            corpus,
            cfg,
            model,
            adam,
            step: 0,
            plan,
            access: PoolAccess::default(),
        })
    }

    /// Continues the run recorded in `ck` on the same corpus.
    pub fn from_checkpoint(corpus: &'c Corpus, ck: Checkpoint) -> Result<Self> {
        if ck.model.vocab != *corpus.vocab() {
            return Err(Error::Config("checkpoint vocabulary does not match the corpus".into()));
        }
        let plan = batch_plan(corpus, &ck.config)?;
        if ck.step as usize > plan.len() {
            return Err(Error::Config(format!(
                "checkpoint is at step {} but the run has only {} steps",
                ck.step,
                plan.len()
            )));
        }
        Ok(Self {
            corpus,
            cfg: ck.config,
            model: ck.model,
            adam: ck.optimizer,
            step: ck.step,
            plan,
            access: PoolAccess::default(),
        })
    }

    pub fn config(&self) -> &TrainConfig {
        &self.cfg
    }

    pub fn model(&self) -> &Model {
        &self.model
    }

    pub fn steps_done(&self) -> u64 {
        self.step
    }

    pub fn total_steps(&self) -> u64 {
        self.plan.len() as u64
    }

    pub fn access(&self) -> PoolAccess {
        self.access
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint {
            config: self.cfg.clone(),
            model: self.model.clone(),
            optimizer: self.adam.clone(),
            step: self.step,
        }
    }

    /// Runs one step; `None` once the plan is exhausted.
    pub fn step(&mut self) -> Result<Option<f64>> {
        let Some(batch) = self.plan.get(self.step as usize) else {
            return Ok(None);
        };
        let step_no = self.step + 1;
        let corpus = self.corpus;
        let examples: Vec<&RetrievalExample> = batch.iter().map(|&i| &corpus.examples()[i]).collect();
        let easy = draw_easy_negatives(corpus, &examples, self.cfg.seed, step_no)?;
        let task = examples[0].task;
        self.access.examples[task.index()] += examples.len() as u64;
        let semi = examples.iter().filter(|e| e.semi_hard_id().is_some()).count();
        self.access.candidates[task.index()] += (2 * examples.len() + semi) as u64;

        let mut tape = Tape::new();
        let vars = self.model.leaves(&mut tape);
        let (loss, _) = batch_loss(&mut tape, &vars, corpus, &self.model.vocab, &examples, &easy, &self.cfg, None)?;
        let value = tape.value(loss).item();

        let mut grads = tape.backward(loss)?;
        let grads: Vec<_> = vars
            .all()
            .into_iter()
            .map(|v| grads.take(v).expect("every leaf receives a gradient"))
            .collect();
        let lr = self.cfg.schedule.rate(self.cfg.learning_rate, step_no, self.total_steps());
        let grad_refs: Vec<_> = grads.iter().collect();
        adamw_step(&mut self.model.params_mut(), &grad_refs, &mut self.adam, &self.cfg.adam(), lr, step_no)?;
        self.step = step_no;
        Ok(Some(value))
    }

    /// Runs the remaining steps and returns their losses.
    pub fn run(&mut self) -> Result<Vec<f64>> {
        let mut history = Vec::with_capacity(self.plan.len() - self.step as usize);
        while let Some(loss) = self.step()? {
            history.push(loss);
        }
        Ok(history)
    }
}

fn pool_position(corpus: &Corpus, task: TaskKind, id: &str) -> Result<usize> {
    corpus.pool(task).position(id).ok_or_else(|| Error::Integrity {
        id: id.to_string(),
        message: format!("candidate not found in the {task} pool"),
    })
}

/// Pool positions of one easy negative per example, drawn uniformly from the
/// task pool without the positive and the most recent historical candidate.
pub fn draw_easy_negatives(corpus: &Corpus, examples: &[&RetrievalExample], seed: u64, step: u64) -> Result<Vec<usize>> {
    let mut rng = rng::rng(seed, STREAM_EASY_NEG, step);
    let mut out = Vec::with_capacity(examples.len());
    for ex in examples {
        let pool = corpus.pool(ex.task);
        let excluded = [Some(ex.positive_id.as_str()), ex.historical_ids.last().map(String::as_str)];
        let usable = |i: usize| !excluded.contains(&Some(pool.get(i).id.as_str()));
        if !(0..pool.len()).any(usable) {
            return Err(Error::Capacity(format!("{} pool has no easy negative candidates", ex.task)));
        }
        out.push(loop {
            let i = rng.gen_range(0..pool.len());
            if usable(i) {
                break i;
            }
        });
    }
    Ok(out)
}

/// Training loss of one task-homogeneous batch. `easy[i]` is the pool
/// position of example `i`'s easy negative. `selections`, when given, fixes the
/// previous-session selection of every example; the selections used are
/// returned alongside the loss.
#[allow(clippy::too_many_arguments)]
pub fn batch_loss(
    tape: &mut Tape,
    vars: &ModelVars,
    corpus: &Corpus,
    vocab: &Vocab,
    examples: &[&RetrievalExample],
    easy: &[usize],
    cfg: &TrainConfig,
    selections: Option<&[Vec<usize>]>,
) -> Result<(Var, Vec<Vec<usize>>)> {
    let Some(first) = examples.first() else {
        return Err(Error::Contract("empty batch".into()));
    };
    let task = first.task;
    if examples.iter().any(|e| e.task != task) || easy.len() != examples.len() {
        return Err(Error::Contract("batch must be task-homogeneous with one easy negative per example".into()));
    }
    let pool = corpus.pool(task);
    let mut inputs = Vec::with_capacity(3 * examples.len());
    for ex in examples {
        inputs.push(EncoderInput::candidate(pool.get(pool_position(corpus, task, &ex.positive_id)?), vocab));
    }
    let mut semi_rows = Vec::with_capacity(examples.len());
    let mut easy_rows = Vec::with_capacity(examples.len());
    for (ex, &e) in examples.iter().zip(easy) {
        match ex.semi_hard_id() {
            Some(id) => {
                semi_rows.push(Some(inputs.len()));
                inputs.push(EncoderInput::candidate(pool.get(pool_position(corpus, task, id)?), vocab));
            }
            None => semi_rows.push(None),
        }
        easy_rows.push(inputs.len());
        inputs.push(EncoderInput::candidate(pool.get(e), vocab));
    }

    let mut contexts = Vec::with_capacity(examples.len());
    let mut used = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let d = corpus.dialogue(&ex.dialogue_id).ok_or_else(|| Error::Integrity {
            id: ex.dialogue_id.clone(),
            message: "unknown dialogue".into(),
        })?;
        let fixed = selections.map(|s| s[i].as_slice());
        let (h, sel) =
            encode_context_with_selection(tape, &vars.encoder, vars.gate, d, ex.query_turn, cfg.mode, vocab, fixed)?;
        contexts.push(h);
        used.push(sel);
    }
    let cands = encode_batch(tape, &vars.encoder, &inputs)?;
    let rows = (0..inputs.len()).map(|i| tape.row(cands, i)).collect::<Result<Vec<Var>>>()?;
    let semi: Vec<Option<Var>> = semi_rows.iter().map(|r| r.map(|i| rows[i])).collect();
    let easy: Vec<Var> = easy_rows.iter().map(|&i| rows[i]).collect();
    let sims = BatchSimilarities::from_embeddings(tape, &contexts, &rows[..examples.len()], &semi, &easy)?;
    Ok((combined_loss(tape, &sims, &cfg.loss)?, used))
}

/// Trains from scratch; returns the final checkpoint and the per-step losses.
pub fn train(corpus: &Corpus, cfg: &TrainConfig) -> Result<(Checkpoint, Vec<f64>)> {
    let mut t = Trainer::new(corpus, cfg.clone())?;
    let history = t.run()?;
    Ok((t.checkpoint(), history))
}
