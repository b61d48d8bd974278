//! Multi-session dialogues, grounded candidates and retrieval examples.

mod io;
mod pool;
mod synth;

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::encoder::Vocab;
use crate::error::{Error, Result};
use crate::rng::fnv1a;

pub use io::{load_corpus, parse_corpus, write_corpus};
pub use pool::sample_pool;
pub use synth::{generate_synthetic, Grounding, SynthConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    System,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TaskKind {
    Persona,
    Knowledge,
    Response,
}

impl TaskKind {
    pub const ALL: [TaskKind; 3] = [TaskKind::Persona, TaskKind::Knowledge, TaskKind::Response];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskKind::Persona => "persona",
            TaskKind::Knowledge => "knowledge",
            TaskKind::Response => "response",
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TaskKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "persona" => Ok(TaskKind::Persona),
            "knowledge" => Ok(TaskKind::Knowledge),
            "response" => Ok(TaskKind::Response),
            other => Err(Error::Config(format!("unknown task `{other}`"))),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Utterance {
    pub role: Role,
    pub text: String,
    /// Global 0-based position in the flattened dialogue.
    pub turn_index: usize,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Session {
    pub utterances: Vec<Utterance>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dialogue {
    pub id: String,
    pub sessions: Vec<Session>,
}

impl Dialogue {
    /// Builds a dialogue from per-session `(role, text)` lists, numbering
    /// turns globally.
    pub fn from_sessions(id: impl Into<String>, sessions: Vec<Vec<(Role, String)>>) -> Self {
        let mut turn = 0;
        let sessions = sessions
            .into_iter()
            .map(|s| Session {
                utterances: s
                    .into_iter()
                    .map(|(role, text)| {
                        turn += 1;
                        Utterance {
                            role,
                            text,
                            turn_index: turn - 1,
                        }
                    })
                    .collect(),
            })
            .collect();
        Self {
            id: id.into(),
            sessions,
        }
    }

    pub fn utterances(&self) -> impl Iterator<Item = &Utterance> {
        self.sessions.iter().flat_map(|s| s.utterances.iter())
    }

    pub fn utterance(&self, turn: usize) -> Option<&Utterance> {
        self.utterances().nth(turn)
    }

    pub fn len(&self) -> usize {
        self.sessions.iter().map(|s| s.utterances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Candidate {
    pub id: String,
    pub task: TaskKind,
    pub text: String,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RetrievalExample {
    pub dialogue_id: String,
    pub query_turn: usize,
    pub task: TaskKind,
    pub positive_id: String,
    /// Candidates selected at earlier turns, oldest first.
    pub historical_ids: Vec<String>,
}

impl RetrievalExample {
    /// The most recent historical candidate, unless it is the positive itself.
    pub fn semi_hard_id(&self) -> Option<&str> {
        self.historical_ids
            .last()
            .map(String::as_str)
            .filter(|h| *h != self.positive_id)
    }
}

/// All candidates of one task, in insertion order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct CandidatePool {
    candidates: Vec<Candidate>,
    index: HashMap<String, usize>,
}

impl CandidatePool {
    pub fn len(&self) -> usize {
        self.candidates.len()
    }

    pub fn is_empty(&self) -> bool {
        self.candidates.is_empty()
    }

    pub fn candidates(&self) -> &[Candidate] {
        &self.candidates
    }

    pub fn get(&self, i: usize) -> &Candidate {
        &self.candidates[i]
    }

    pub fn position(&self, id: &str) -> Option<usize> {
        self.index.get(id).copied()
    }

    fn push(&mut self, c: Candidate) -> Result<()> {
        if self.index.contains_key(&c.id) {
            return Err(Error::Integrity {
                id: c.id,
                message: "duplicate candidate id within task pool".into(),
            });
        }
        self.index.insert(c.id.clone(), self.candidates.len());
        self.candidates.push(c);
        Ok(())
    }
}

/// The previous-session, current-session and query parts of a dialogue context.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SessionSplit<'a> {
    pub prev: Vec<&'a Utterance>,
    pub curr: Vec<&'a Utterance>,
    pub last: &'a Utterance,
}

/// Splits the context of `query_turn` into previous sessions, the earlier part
/// of the current session, and the query utterance itself. A single-session
/// dialogue is cut into units that each start at a user utterance.
pub fn split_sessions(d: &Dialogue, query_turn: usize) -> Result<SessionSplit<'_>> {
    let last = d.utterance(query_turn).ok_or_else(|| {
        Error::Contract(format!(
            "turn {query_turn} out of range for dialogue `{}`",
            d.id
        ))
    })?;
    if last.role != Role::User {
        return Err(Error::Contract(format!(
            "turn {query_turn} of dialogue `{}` is not a user utterance",
            d.id
        )));
    }

    let units: Vec<Vec<&Utterance>> = if d.sessions.len() == 1 {
        let mut units: Vec<Vec<&Utterance>> = Vec::new();
        for u in &d.sessions[0].utterances {
            if u.role == Role::User || units.is_empty() {
                units.push(Vec::new());
            }
            units.last_mut().expect("pushed above").push(u);
        }
        units
    } else {
        d.sessions.iter().map(|s| s.utterances.iter().collect()).collect()
    };

    let mut prev = Vec::new();
    for unit in units {
        if unit.iter().any(|u| u.turn_index == query_turn) {
            let curr = unit
                .into_iter()
                .take_while(|u| u.turn_index != query_turn)
                .collect();
            return Ok(SessionSplit { prev, curr, last });
        }
        prev.extend(unit);
    }
    unreachable!("query utterance belongs to some unit")
}

/// Immutable, fully cross-referenced corpus.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Corpus {
    dialogues: Vec<Dialogue>,
    dialogue_index: HashMap<String, usize>,
    pools: [CandidatePool; 3],
    examples: Vec<RetrievalExample>,
    vocab: Vocab,
}

impl Corpus {
    /// Validates references and builds the vocabulary.
    pub fn new(
        dialogues: Vec<Dialogue>,
        candidates: Vec<Candidate>,
        examples: Vec<RetrievalExample>,
    ) -> Result<Self> {
        let mut pools: [CandidatePool; 3] = Default::default();
        for c in candidates {
            pools[c.task.index()].push(c)?;
        }
        let mut dialogue_index = HashMap::with_capacity(dialogues.len());
        for (i, d) in dialogues.iter().enumerate() {
            if dialogue_index.insert(d.id.clone(), i).is_some() {
                return Err(Error::Integrity {
                    id: d.id.clone(),
                    message: "duplicate dialogue id".into(),
                });
            }
            validate_dialogue(d)?;
        }
        for ex in &examples {
            let d = dialogue_index
                .get(&ex.dialogue_id)
                .map(|&i| &dialogues[i])
                .ok_or_else(|| Error::Integrity {
                    id: ex.dialogue_id.clone(),
                    message: "example refers to an unknown dialogue".into(),
                })?;
            match d.utterance(ex.query_turn) {
                Some(u) if u.role == Role::User => {}
                _ => {
                    return Err(Error::Integrity {
                        id: ex.dialogue_id.clone(),
                        message: format!("example turn {} is not a user utterance", ex.query_turn),
                    })
                }
            }
            let pool = &pools[ex.task.index()];
            for id in std::iter::once(&ex.positive_id).chain(&ex.historical_ids) {
                if pool.position(id).is_none() {
                    return Err(Error::Integrity {
                        id: id.clone(),
                        message: format!("candidate not found in the {} pool", ex.task),
                    });
                }
            }
        }
        let texts = dialogues
            .iter()
            .flat_map(|d| d.utterances().map(|u| u.text.as_str()))
            .chain(
                pools
                    .iter()
                    .flat_map(|p| p.candidates.iter().map(|c| c.text.as_str())),
            );
        let vocab = Vocab::build(texts);
        Ok(Self {
            dialogues,
            dialogue_index,
            pools,
            examples,
            vocab,
        })
    }

    pub fn empty() -> Self {
        Self::new(Vec::new(), Vec::new(), Vec::new()).expect("empty corpus is valid")
    }

    pub fn dialogues(&self) -> &[Dialogue] {
        &self.dialogues
    }

    pub fn dialogue(&self, id: &str) -> Option<&Dialogue> {
        self.dialogue_index.get(id).map(|&i| &self.dialogues[i])
    }

    pub fn pool(&self, task: TaskKind) -> &CandidatePool {
        &self.pools[task.index()]
    }

    pub fn candidate(&self, task: TaskKind, id: &str) -> Option<&Candidate> {
        let p = self.pool(task);
        p.position(id).map(|i| p.get(i))
    }

    pub fn examples(&self) -> &[RetrievalExample] {
        &self.examples
    }

    pub fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    /// Example indices split by a stable hash of the dialogue id: roughly
    /// `holdout` of the dialogues go to the second (test) list.
    pub fn split_examples(&self, holdout: f64) -> (Vec<usize>, Vec<usize>) {
        let mut train = Vec::new();
        let mut test = Vec::new();
        for (i, ex) in self.examples.iter().enumerate() {
            if is_holdout(&ex.dialogue_id, holdout) {
                test.push(i);
            } else {
                train.push(i);
            }
        }
        (train, test)
    }

    /// Indices of examples for `task`.
    pub fn task_examples(&self, task: TaskKind) -> Vec<usize> {
        (0..self.examples.len())
            .filter(|&i| self.examples[i].task == task)
            .collect()
    }
}

/// Whether a dialogue belongs to the held-out split.
pub fn is_holdout(dialogue_id: &str, holdout: f64) -> bool {
    let bucket = fnv1a(dialogue_id.as_bytes()) % 10_000;
    (bucket as f64) < holdout * 10_000.0
}

fn validate_dialogue(d: &Dialogue) -> Result<()> {
    let bad = |message: String| Error::Integrity {
        id: d.id.clone(),
        message,
    };
    if d.sessions.is_empty() {
        return Err(bad("dialogue has no sessions".into()));
    }
    let mut seen = HashSet::new();
    let mut expected = 0;
    for (si, s) in d.sessions.iter().enumerate() {
        if s.utterances.is_empty() {
            return Err(bad(format!("session {si} is empty")));
        }
        for u in &s.utterances {
            if u.text.trim().is_empty() {
                return Err(bad(format!("turn {} has empty text", u.turn_index)));
            }
            if u.turn_index != expected || !seen.insert(u.turn_index) {
                return Err(bad(format!(
                    "turn index {} out of order (expected {expected})",
                    u.turn_index
                )));
            }
            expected += 1;
        }
    }
    Ok(())
}
