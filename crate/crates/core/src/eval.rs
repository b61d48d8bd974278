//! Brute-force retrieval, R@k / MRR, and the analysis sweeps.
//!
//! Ranking rule: candidates are ordered by descending score and equal scores
//! by ascending row index, so the positive's rank is
//! `1 + #{strictly higher} + #{equal at a lower row}`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::{sample_pool, Candidate, Corpus, TaskKind};
use crate::error::{Error, Result};
use crate::fusion::ContextMode;
use crate::model::Model;
use crate::rng::{self, STREAM_POOL};
use crate::tensor::{dot, matvec, Tensor};
use crate::trainer::{train, TrainConfig};

pub const DEFAULT_POOL_SIZES: [usize; 8] = [256, 128, 64, 32, 16, 8, 4, 2];
pub const DEFAULT_KS: [usize; 4] = [1, 2, 3, 4];

/// Candidate embeddings of one task; row `i` belongs to `ids[i]`.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddedPool {
    pub ids: Vec<String>,
    pub matrix: Tensor,
    pub task: TaskKind,
}

impl EmbeddedPool {
    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn scores(&self, query: &[f64]) -> Vec<f64> {
        matvec(&self.matrix, query)
    }
}

pub fn embed_pool(cands: &[&Candidate], model: &Model) -> Result<EmbeddedPool> {
    let Some(first) = cands.first() else {
        return Err(Error::Contract("cannot embed an empty pool".into()));
    };
    if let Some(c) = cands.iter().find(|c| c.task != first.task) {
        return Err(Error::Contract(format!(
            "pool mixes tasks: `{}` is {} but the pool is {}",
            c.id, c.task, first.task
        )));
    }
    Ok(EmbeddedPool {
        ids: cands.iter().map(|c| c.id.clone()).collect(),
        matrix: model.candidate_matrix(cands)?,
        task: first.task,
    })
}

/// Row indices by descending score, ties by ascending index.
pub fn ranking(scores: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));
    order
}

/// 1-based rank of row `target` without sorting.
pub fn rank_of(scores: &[f64], target: usize) -> usize {
    let s = scores[target];
    1 + scores
        .iter()
        .enumerate()
        .filter(|&(i, &x)| x > s || (x == s && i < target))
        .count()
}

/// The `top_n` best candidates with their scores.
pub fn retrieve(query: &[f64], pool: &EmbeddedPool, top_n: usize) -> Result<Vec<(String, f64)>> {
    if top_n == 0 || top_n > pool.len() {
        return Err(Error::Contract(format!("top_n {top_n} outside 1..={}", pool.len())));
    }
    if query.len() != pool.matrix.cols() {
        return Err(Error::Contract(format!(
            "query of length {} against {}-dimensional pool",
            query.len(),
            pool.matrix.cols()
        )));
    }
    let scores = pool.scores(query);
    Ok(ranking(&scores)
        .into_iter()
        .take(top_n)
        .map(|i| (pool.ids[i].clone(), scores[i]))
        .collect())
}

/// `(R@1, R@5, MRR)` of 1-based ranks.
pub fn metrics_from_ranks(ranks: &[usize]) -> (f64, f64, f64) {
    let n = ranks.len() as f64;
    let at = |k: usize| ranks.iter().filter(|&&r| r <= k).count() as f64 / n;
    let mrr = ranks.iter().map(|&r| 1.0 / r as f64).sum::<f64>() / n;
    (at(1), at(5), mrr)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReportConfig {
    pub query_count: usize,
    pub seed: u64,
    pub mode: ContextMode,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant: Option<Variant>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub train: Option<TrainConfig>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub task: TaskKind,
    pub pool_size: usize,
    pub r_at_1: f64,
    pub r_at_5: f64,
    pub mrr: f64,
    pub config: ReportConfig,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSettings {
    pub task: TaskKind,
    pub pool_size: usize,
    pub seed: u64,
    pub mode: ContextMode,
}

/// Retrieval metrics of `model` on the examples of `settings.task` among
/// `examples` (indices into the corpus).
pub fn evaluate(corpus: &Corpus, model: &Model, examples: &[usize], settings: &EvalSettings) -> Result<MetricsReport> {
    let ranks = positive_ranks(corpus, model, examples, settings)?;
    let (r_at_1, r_at_5, mrr) = metrics_from_ranks(&ranks);
    let report = MetricsReport {
        task: settings.task,
        pool_size: settings.pool_size,
        r_at_1,
        r_at_5,
        mrr,
        config: ReportConfig {
            query_count: ranks.len(),
            seed: settings.seed,
            mode: settings.mode,
            variant: None,
            train: None,
        },
    };
    debug_assert!(report.r_at_1 <= report.r_at_5 && report.r_at_1 <= report.mrr && report.mrr <= 1.0);
    Ok(report)
}

/// Rank of the positive for every selected example, in example order.
pub fn positive_ranks(corpus: &Corpus, model: &Model, examples: &[usize], s: &EvalSettings) -> Result<Vec<usize>> {
    s.mode.validate()?;
    let selected: Vec<usize> = examples
        .iter()
        .copied()
        .filter(|&i| corpus.examples()[i].task == s.task)
        .collect();
    if selected.is_empty() {
        return Err(Error::Config(format!("no {} examples to evaluate", s.task)));
    }
    let task_pool = corpus.pool(s.task);
    let all: Vec<&Candidate> = task_pool.candidates().iter().collect();
    let cache = embed_pool(&all, model)?;

    let mut ranks = Vec::with_capacity(selected.len());
    for i in selected {
        let ex = &corpus.examples()[i];
        let pool = sample_pool(ex, corpus, s.pool_size, rng::derive(s.seed, STREAM_POOL, i as u64))?;
        let dialogue = corpus.dialogue(&ex.dialogue_id).ok_or_else(|| Error::Integrity {
            id: ex.dialogue_id.clone(),
            message: "unknown dialogue".into(),
        })?;
        let h = model.context_vector(dialogue, ex.query_turn, s.mode)?;
        let mut scores = Vec::with_capacity(pool.len());
        let mut target = None;
        for (row, c) in pool.iter().enumerate() {
            let at = task_pool.position(&c.id).expect("sampled from this pool");
            scores.push(dot(&h, cache.matrix.row(at)));
            if c.id == ex.positive_id {
                target = Some(row);
            }
        }
        ranks.push(rank_of(&scores, target.expect("pool contains the positive")));
    }
    Ok(ranks)
}

/// One report per pool size, all with the same per-example pool seeds.
pub fn pool_size_sweep(
    corpus: &Corpus,
    model: &Model,
    examples: &[usize],
    settings: &EvalSettings,
    sizes: &[usize],
) -> Result<Vec<MetricsReport>> {
    sizes
        .iter()
        .map(|&pool_size| evaluate(corpus, model, examples, &EvalSettings { pool_size, ..*settings }))
        .collect()
}

/// Shared evaluation protocol of the training sweeps.
#[derive(Clone, Debug, PartialEq)]
pub struct Protocol {
    pub tasks: Vec<TaskKind>,
    pub pool_size: usize,
    pub eval_seed: u64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            tasks: TaskKind::ALL.to_vec(),
            pool_size: 64,
            eval_seed: 0,
        }
    }
}

fn evaluate_tasks(
    corpus: &Corpus,
    model: &Model,
    test: &[usize],
    mode: ContextMode,
    proto: &Protocol,
    train_cfg: Option<&TrainConfig>,
    variant: Option<Variant>,
) -> Result<Vec<MetricsReport>> {
    proto
        .tasks
        .iter()
        .map(|&task| {
            let settings = EvalSettings {
                task,
                pool_size: proto.pool_size,
                seed: proto.eval_seed,
                mode,
            };
            let mut r = evaluate(corpus, model, test, &settings)?;
            r.config.train = train_cfg.cloned();
            r.config.variant = variant;
            Ok(r)
        })
        .collect()
}

/// The context modes of a K sweep: `Adaptive{k}` for each k, then `NoPrev`.
pub fn k_sweep_modes(ks: &[usize]) -> Vec<ContextMode> {
    ks.iter()
        .map(|&k| ContextMode::Adaptive { k })
        .chain(std::iter::once(ContextMode::NoPrev))
        .collect()
}

/// Trains one model per mode of [`k_sweep_modes`] and evaluates each on the
/// held-out split. Reports are mode-major, task-minor.
pub fn k_sweep(corpus: &Corpus, base: &TrainConfig, ks: &[usize], proto: &Protocol) -> Result<Vec<MetricsReport>> {
    let (_, test) = corpus.split_examples(base.holdout);
    let mut out = Vec::new();
    for mode in k_sweep_modes(ks) {
        let cfg = TrainConfig { mode, ..base.clone() };
        let (ck, _) = train(corpus, &cfg)?;
        out.extend(evaluate_tasks(corpus, &ck.model, &test, mode, proto, Some(&cfg), None)?);
    }
    Ok(out)
}

/// Evaluates one trained model under every mode of [`k_sweep_modes`].
pub fn k_sweep_eval_only(
    corpus: &Corpus,
    model: &Model,
    test: &[usize],
    ks: &[usize],
    proto: &Protocol,
) -> Result<Vec<MetricsReport>> {
    let mut out = Vec::new();
    for mode in k_sweep_modes(ks) {
        out.extend(evaluate_tasks(corpus, model, test, mode, proto, None, None)?);
    }
    Ok(out)
}

/// Ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Full,
    /// Context is the unweighted mean of all utterance encodings.
    NoContextEnc,
    NoPair,
    NoHist,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Full, Variant::NoContextEnc, Variant::NoPair, Variant::NoHist];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoContextEnc => "no_context_enc",
            Variant::NoPair => "no_pair",
            Variant::NoHist => "no_hist",
        }
    }

    pub fn apply(self, base: &TrainConfig) -> TrainConfig {
        let mut cfg = base.clone();
        match self {
            Variant::Full => {}
            Variant::NoContextEnc => cfg.mode = ContextMode::MeanPool,
            Variant::NoPair => cfg.loss.use_pair = false,
            Variant::NoHist => cfg.loss.use_hist = false,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s.replace('-', "_"))
            .ok_or_else(|| Error::Config(format!("unknown ablation variant `{s}`")))
    }
}

/// Trains and evaluates every variant under every training seed. Reports are
/// seed-major, then variant, then task.
pub fn ablation_run(
    corpus: &Corpus,
    base: &TrainConfig,
    variants: &[Variant],
    seeds: &[u64],
    proto: &Protocol,
) -> Result<Vec<MetricsReport>> {
    let (_, test) = corpus.split_examples(base.holdout);
    let mut out = Vec::new();
    for &seed in seeds {
        for &v in variants {
            let cfg = TrainConfig { seed, ..v.apply(base) };
            let (ck, _) = train(corpus, &cfg)?;
            out.extend(evaluate_tasks(corpus, &ck.model, &test, cfg.mode, proto, Some(&cfg), Some(v))?);
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic, SynthConfig};
    use crate::encoder::{encode_values, EncoderInput};
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pool_of(rows: Vec<Vec<f64>>) -> EmbeddedPool {
        EmbeddedPool {
            ids: (0..rows.len()).map(|i| format!("c{i}")).collect(),
            matrix: Tensor::from_rows(&rows).unwrap(),
            task: TaskKind::Persona,
        }
    }

    #[test]
    fn equal_row_ranks_first() {
        let p = pool_of(vec![vec![0.0, 1.0], vec![1.0, 0.0], vec![0.0, -1.0]]);
        let top = retrieve(&[1.0, 0.0], &p, 1).unwrap();
        assert_eq!(top[0].0, "c1");
    }

    #[test]
    fn ties_follow_row_order() {
        let p = pool_of(vec![vec![0.5, 0.5]; 5]);
        let ids: Vec<String> = retrieve(&[1.0, 2.0], &p, 5).unwrap().into_iter().map(|x| x.0).collect();
        assert_eq!(ids, ["c0", "c1", "c2", "c3", "c4"]);
        assert_eq!(rank_of(&[1.0, 1.0, 1.0], 2), 3);
    }

    #[test]
    fn top_n_out_of_range() {
        let p = pool_of(vec![vec![1.0]; 3]);
        assert!(matches!(retrieve(&[1.0], &p, 0), Err(Error::Contract(_))));
        assert!(matches!(retrieve(&[1.0], &p, 4), Err(Error::Contract(_))));
    }

    #[test]
    fn metrics_of_known_ranks() {
        let (r1, r5, mrr) = metrics_from_ranks(&[1, 2, 4]);
        assert!((r1 - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(r5, 1.0);
        assert!((mrr - (1.0 + 0.5 + 0.25) / 3.0).abs() < 1e-12);
        assert_eq!(metrics_from_ranks(&[1, 1, 1]), (1.0, 1.0, 1.0));
    }

    fn full_sort_oracle(scores: &[f64]) -> Vec<usize> {
        // Selection by repeated maximum: highest score, lowest index first.
        let mut left: Vec<usize> = (0..scores.len()).collect();
        let mut out = Vec::new();
        while !left.is_empty() {
            let mut best = 0;
            for j in 1..left.len() {
                if scores[left[j]] > scores[left[best]] {
                    best = j;
                }
            }
            out.push(left.remove(best));
        }
        out
    }

    #[test]
    fn ranking_matches_oracles_with_ties() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        for _ in 0..1000 {
            let n = rng.gen_range(2..40);
            // Coarse values force frequent ties.
            let scores: Vec<f64> = (0..n).map(|_| rng.gen_range(-3..4) as f64 * 0.5).collect();
            let order = ranking(&scores);
            assert_eq!(order, full_sort_oracle(&scores));
            for (pos, &i) in order.iter().enumerate() {
                assert_eq!(rank_of(&scores, i), pos + 1);
            }
        }
    }

    #[test]
    fn embed_pool_contracts() {
        let c = generate_synthetic(&SynthConfig::small(), 1).unwrap();
        let m = Model::init(c.vocab().clone(), 8, true, 1);
        let p = c.pool(TaskKind::Knowledge);
        let one = embed_pool(&[p.get(0)], &m).unwrap();
        let direct = encode_values(&m.encoder, &[EncoderInput::candidate(p.get(0), &m.vocab)]).unwrap();
        assert_eq!(one.matrix, direct);

        let many: Vec<&Candidate> = p.candidates().iter().take(10).collect();
        let batched = embed_pool(&many, &m).unwrap();
        for (i, cand) in many.iter().enumerate() {
            assert_eq!(batched.matrix.row(i), embed_pool(&[cand], &m).unwrap().matrix.data());
        }
        let mixed = [p.get(0), c.pool(TaskKind::Persona).get(0)];
        assert!(matches!(embed_pool(&mixed, &m), Err(Error::Contract(_))));
        assert!(matches!(embed_pool(&[], &m), Err(Error::Contract(_))));
    }

    #[test]
    fn variant_flags() {
        let base = TrainConfig::default();
        assert_eq!(Variant::Full.apply(&base), base);
        assert!(!Variant::NoPair.apply(&base).loss.use_pair);
        assert!(!Variant::NoHist.apply(&base).loss.use_hist);
        assert_eq!(Variant::NoContextEnc.apply(&base).mode, ContextMode::MeanPool);
        assert_eq!("no-hist".parse::<Variant>().unwrap(), Variant::NoHist);
        assert!("nothing".parse::<Variant>().is_err());
    }

    #[test]
    fn evaluate_is_deterministic_and_consistent() {
        let c = generate_synthetic(&SynthConfig::small(), 4).unwrap();
        let m = Model::init(c.vocab().clone(), 8, true, 2);
        let all: Vec<usize> = (0..c.examples().len()).collect();
        let s = EvalSettings {
            task: TaskKind::Persona,
            pool_size: 16,
            seed: 3,
            mode: ContextMode::default(),
        };
        let a = evaluate(&c, &m, &all, &s).unwrap();
        assert_eq!(a, evaluate(&c, &m, &all, &s).unwrap());
        assert!(a.r_at_1 <= a.r_at_5 && a.r_at_1 <= a.mrr && a.mrr <= 1.0);
        assert_eq!(a.config.query_count, c.task_examples(TaskKind::Persona).len());

        let sweep = pool_size_sweep(&c, &m, &all, &s, &[2]).unwrap();
        assert_eq!(sweep.len(), 1);
        assert!(matches!(
            evaluate(&c, &m, &all, &EvalSettings { pool_size: 10_000, ..s }),
            Err(Error::Capacity(_))
        ));
    }

    #[test]
    fn k_sweep_modes_shape() {
        assert_eq!(k_sweep_modes(&[3]), vec![ContextMode::Adaptive { k: 3 }, ContextMode::NoPrev]);
        assert_eq!(k_sweep_modes(&DEFAULT_KS).len(), 5);
    }

    #[test]
    fn no_prev_equals_adaptive_without_previous_sessions() {
        let cfg = SynthConfig {
            sessions_per_dialogue: 1,
            turns_per_session: 1,
            ..SynthConfig::small()
        };
        let c = generate_synthetic(&cfg, 6).unwrap();
        let m = Model::init(c.vocab().clone(), 8, true, 2);
        let all: Vec<usize> = (0..c.examples().len()).collect();
        let proto = Protocol {
            pool_size: 8,
            ..Protocol::default()
        };
        let r = k_sweep_eval_only(&c, &m, &all, &[2], &proto).unwrap();
        assert_eq!(r.len(), 6);
        for t in 0..3 {
            assert_eq!(r[t].r_at_1, r[3 + t].r_at_1);
            assert_eq!(r[t].mrr, r[3 + t].mrr);
        }
    }

    proptest! {
        #[test]
        fn mrr_from_ranking_equals_rank_count(scores in proptest::collection::vec(-4i32..4, 2..30), t in 0usize..30) {
            let scores: Vec<f64> = scores.into_iter().map(f64::from).collect();
            let target = t % scores.len();
            let by_sort = ranking(&scores).iter().position(|&i| i == target).unwrap() + 1;
            prop_assert_eq!(by_sort, rank_of(&scores, target));
        }
    }
}
