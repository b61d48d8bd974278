//! Deterministic synthetic corpus with topic/facet structure.
//!
//! Every candidate is identified by a `(topic, facet)` pair and a task. A
//! dialogue keeps one topic and moves through a new facet at each user turn.
//! User turns carry the facet words of their grounding (and only occasionally
//! a topic word); system turns carry the topic. The candidate grounded at an
//! earlier turn therefore shares the dialogue topic with the current positive
//! but not its facet, which makes historical candidates semi-hard negatives.
//! Some system turns drift to a distractor topic.

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Candidate, Corpus, Dialogue, RetrievalExample, Role, TaskKind};
use crate::error::{Error, Result};
use crate::rng::{self, STREAM_SYNTH};

/// How example labels relate to the text.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grounding {
    /// Positives are the candidates the dialogue turns were written about.
    Grounded,
    /// Positives are drawn uniformly from the task pool, independent of the
    /// text. Any model scores at chance on such a corpus.
    Independent,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub tasks: Vec<TaskKind>,
    pub topics: usize,
    pub facets: usize,
    pub dialogues_per_task: usize,
    pub sessions_per_dialogue: usize,
    /// User/system turn pairs per session.
    pub turns_per_session: usize,
    /// Number of distinct pseudo-words available.
    pub vocab_size: usize,
    pub words_per_topic: usize,
    pub words_per_facet: usize,
    pub style_words_per_task: usize,
    pub fillers_per_text: usize,
    /// Probability that a user turn also names one topic word.
    pub query_topic_rate: f64,
    /// Probability that a system turn talks about a distractor topic.
    pub distractor_rate: f64,
    pub grounding: Grounding,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            tasks: TaskKind::ALL.to_vec(),
            topics: 40,
            facets: 8,
            dialogues_per_task: 1000,
            sessions_per_dialogue: 3,
            turns_per_session: 2,
            vocab_size: 600,
            words_per_topic: 4,
            words_per_facet: 3,
            style_words_per_task: 4,
            fillers_per_text: 3,
            query_topic_rate: 0.3,
            distractor_rate: 0.25,
            grounding: Grounding::Grounded,
        }
    }
}

impl SynthConfig {
    /// A few dozen dialogues; handy for tests.
    pub fn small() -> Self {
        Self {
            topics: 12,
            dialogues_per_task: 30,
            vocab_size: 200,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        let err = |m: &str| Err(Error::Config(m.to_string()));
        if self.topics == 0 {
            return err("topic count must be positive");
        }
        if self.vocab_size == 0 {
            return err("vocabulary size must be positive");
        }
        if self.facets == 0 || self.sessions_per_dialogue == 0 || self.turns_per_session == 0 {
            return err("facets, sessions and turns per session must be positive");
        }
        if self.tasks.is_empty() {
            return err("at least one task is required");
        }
        if self.words_per_topic < 2 || self.words_per_facet < 2 {
            return err("topics and facets need at least two words each");
        }
        if !(0.0..=1.0).contains(&self.query_topic_rate) || !(0.0..=1.0).contains(&self.distractor_rate) {
            return err("rates must lie in [0, 1]");
        }
        let fixed = self.layout_size();
        if fixed + usize::from(self.fillers_per_text > 0) > self.vocab_size {
            return Err(Error::Config(format!(
                "vocabulary of {} words cannot hold {} topic, facet and style words plus fillers",
                self.vocab_size, fixed
            )));
        }
        Ok(())
    }

    fn layout_size(&self) -> usize {
        self.topics * self.words_per_topic
            + self.facets * self.words_per_facet
            + TaskKind::ALL.len() * self.style_words_per_task
    }
}

struct Lexicon {
    topic: Vec<Vec<String>>,
    facet: Vec<Vec<String>>,
    style: Vec<Vec<String>>,
    filler: Vec<String>,
}

impl Lexicon {
    fn new(cfg: &SynthConfig) -> Self {
        let mut next = 0usize;
        let mut take = |n: usize| -> Vec<String> {
            let v = (next..next + n).map(|i| format!("t{i}")).collect();
            next += n;
            v
        };
        let topic = (0..cfg.topics).map(|_| take(cfg.words_per_topic)).collect();
        let facet = (0..cfg.facets).map(|_| take(cfg.words_per_facet)).collect();
        let style = (0..TaskKind::ALL.len())
            .map(|_| take(cfg.style_words_per_task))
            .collect();
        let filler = take(cfg.vocab_size - cfg.layout_size());
        Self {
            topic,
            facet,
            style,
            filler,
        }
    }
}

fn pick<'a>(words: &'a [String], k: usize, rng: &mut ChaCha8Rng, out: &mut Vec<&'a str>) {
    out.extend(words.choose_multiple(rng, k).map(String::as_str));
}

fn render(mut words: Vec<&str>, rng: &mut ChaCha8Rng) -> String {
    words.shuffle(rng);
    words.join(" ")
}

fn candidate_id(task: TaskKind, topic: usize, facet: usize) -> String {
    let prefix = match task {
        TaskKind::Persona => 'p',
        TaskKind::Knowledge => 'k',
        TaskKind::Response => 'r',
    };
    format!("{prefix}-{topic:03}-{facet:02}")
}

/// Generates a corpus that is a pure function of `(cfg, seed)`.
pub fn generate_synthetic(cfg: &SynthConfig, seed: u64) -> Result<Corpus> {
    cfg.validate()?;
    let lex = Lexicon::new(cfg);

    // Candidate texts: two topic words, two facet words, one task style word, fillers.
    let mut candidates = Vec::new();
    let mut cand_text: Vec<Vec<Vec<String>>> = vec![Vec::new(); TaskKind::ALL.len()];
    for &task in &cfg.tasks {
        let mut rng = rng::rng(seed, STREAM_SYNTH, task.index() as u64);
        let texts = &mut cand_text[task.index()];
        for z in 0..cfg.topics {
            let mut row = Vec::with_capacity(cfg.facets);
            for f in 0..cfg.facets {
                let mut w = Vec::new();
                pick(&lex.topic[z], 2, &mut rng, &mut w);
                pick(&lex.facet[f], 2, &mut rng, &mut w);
                pick(&lex.style[task.index()], 1, &mut rng, &mut w);
                pick(&lex.filler, cfg.fillers_per_text, &mut rng, &mut w);
                let text = render(w, &mut rng);
                row.push(text.clone());
                candidates.push(Candidate {
                    id: candidate_id(task, z, f),
                    task,
                    text,
                });
            }
            texts.push(row);
        }
    }

    let user_turns = cfg.sessions_per_dialogue * cfg.turns_per_session;
    let mut dialogues = Vec::new();
    let mut examples = Vec::new();
    for &task in &cfg.tasks {
        for n in 0..cfg.dialogues_per_task {
            let stream_index = 1_000 + (task.index() * cfg.dialogues_per_task + n) as u64;
            let mut rng = rng::rng(seed, STREAM_SYNTH, stream_index);
            let id = format!("{}-{n:05}", task.as_str());
            let topic = rng.gen_range(0..cfg.topics);
            let distractor = (cfg.topics > 1).then(|| {
                let z = rng.gen_range(0..cfg.topics - 1);
                if z >= topic {
                    z + 1
                } else {
                    z
                }
            });
            let facets = facet_sequence(cfg.facets, user_turns, &mut rng);

            let mut sessions = Vec::with_capacity(cfg.sessions_per_dialogue);
            let mut grounded: Vec<String> = Vec::with_capacity(user_turns);
            let mut turn = 0;
            for s in 0..cfg.sessions_per_dialogue {
                let mut session = Vec::with_capacity(2 * cfg.turns_per_session);
                for t in 0..cfg.turns_per_session {
                    let f = facets[s * cfg.turns_per_session + t];

                    let mut w = Vec::new();
                    pick(&lex.facet[f], 2, &mut rng, &mut w);
                    pick(&lex.filler, cfg.fillers_per_text, &mut rng, &mut w);
                    if rng.gen_bool(cfg.query_topic_rate) {
                        pick(&lex.topic[topic], 1, &mut rng, &mut w);
                    }
                    session.push((Role::User, render(w, &mut rng)));

                    let positive = match cfg.grounding {
                        Grounding::Grounded => candidate_id(task, topic, f),
                        Grounding::Independent => candidate_id(
                            task,
                            rng.gen_range(0..cfg.topics),
                            rng.gen_range(0..cfg.facets),
                        ),
                    };
                    examples.push(RetrievalExample {
                        dialogue_id: id.clone(),
                        query_turn: turn,
                        task,
                        positive_id: positive.clone(),
                        historical_ids: grounded.clone(),
                    });
                    grounded.push(positive);

                    let reply = if task == TaskKind::Response {
                        cand_text[task.index()][topic][f].clone()
                    } else {
                        let z = match distractor {
                            Some(d) if rng.gen_bool(cfg.distractor_rate) => d,
                            _ => topic,
                        };
                        let mut w = Vec::new();
                        pick(&lex.topic[z], 2, &mut rng, &mut w);
                        pick(&lex.facet[f], 1, &mut rng, &mut w);
                        pick(&lex.filler, cfg.fillers_per_text, &mut rng, &mut w);
                        render(w, &mut rng)
                    };
                    session.push((Role::System, reply));
                    turn += 2;
                }
                sessions.push(session);
            }
            dialogues.push(Dialogue::from_sessions(id, sessions));
        }
    }
    Corpus::new(dialogues, candidates, examples)
}

/// Facet per user turn: without repetition while facets last, afterwards any
/// facet other than the previous one.
fn facet_sequence(facets: usize, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut order: Vec<usize> = (0..facets).collect();
    order.shuffle(rng);
    let mut seq: Vec<usize> = order.into_iter().take(n).collect();
    while seq.len() < n {
        let prev = *seq.last().expect("facets > 0");
        let next = if facets == 1 {
            0
        } else {
            let f = rng.gen_range(0..facets - 1);
            if f >= prev {
                f + 1
            } else {
                f
            }
        };
        seq.push(next);
    }
    seq
}
