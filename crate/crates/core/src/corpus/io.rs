//! Newline-delimited JSON corpus files.
//!
//! ```text
//! {"kind":"candidate","id":"p1","task":"persona","text":"..."}
//! {"kind":"dialogue","id":"d1","sessions":[[{"role":"user","text":"..."}]],
//!  "examples":[{"turn":0,"task":"persona","positive":"p1","historical":[]}]}
//! ```

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Candidate, Corpus, Dialogue, RetrievalExample, Role, TaskKind};
use crate::error::{Error, Result};

#[derive(Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
enum Record {
    Candidate {
        id: String,
        task: TaskKind,
        text: String,
    },
    Dialogue {
        id: String,
        sessions: Vec<Vec<UtteranceRecord>>,
        #[serde(default)]
        examples: Vec<ExampleRecord>,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct UtteranceRecord {
    role: Role,
    text: String,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExampleRecord {
    turn: usize,
    task: TaskKind,
    positive: String,
    #[serde(default)]
    historical: Vec<String>,
}

pub fn load_corpus(path: impl AsRef<Path>) -> Result<Corpus> {
    let text = fs::read_to_string(path)?;
    parse_corpus(&text)
}

/// Parses corpus records; blank lines are skipped.
pub fn parse_corpus(text: &str) -> Result<Corpus> {
    let mut candidates = Vec::new();
    let mut dialogues = Vec::new();
    let mut examples = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |message: String| Error::Parse {
            line: line_no,
            message,
        };
        let record: Record = serde_json::from_str(line).map_err(|e| parse_err(e.to_string()))?;
        match record {
            Record::Candidate { id, task, text } => {
                if id.is_empty() {
                    return Err(parse_err("candidate id is empty".into()));
                }
                candidates.push(Candidate { id, task, text });
            }
            Record::Dialogue {
                id,
                sessions,
                examples: exs,
            } => {
                if sessions.is_empty() || sessions.iter().any(Vec::is_empty) {
                    return Err(parse_err(format!("dialogue `{id}` has an empty session list")));
                }
                if let Some(u) = sessions.iter().flatten().find(|u| u.text.trim().is_empty()) {
                    return Err(parse_err(format!(
                        "dialogue `{id}` has an empty {:?} utterance",
                        u.role
                    )));
                }
                let dialogue = Dialogue::from_sessions(
                    id.clone(),
                    sessions
                        .into_iter()
                        .map(|s| s.into_iter().map(|u| (u.role, u.text)).collect())
                        .collect(),
                );
                examples.extend(exs.into_iter().map(|e| RetrievalExample {
                    dialogue_id: id.clone(),
                    query_turn: e.turn,
                    task: e.task,
                    positive_id: e.positive,
                    historical_ids: e.historical,
                }));
                dialogues.push(dialogue);
            }
        }
    }
    Corpus::new(dialogues, candidates, examples)
}

/// Writes candidates (grouped by task) followed by dialogues with their examples.
pub fn write_corpus(corpus: &Corpus, out: impl Write) -> Result<()> {
    let mut w = BufWriter::new(out);
    for task in TaskKind::ALL {
        for c in corpus.pool(task).candidates() {
            let rec = Record::Candidate {
                id: c.id.clone(),
                task: c.task,
                text: c.text.clone(),
            };
            serde_json::to_writer(&mut w, &rec)?;
            w.write_all(b"\n")?;
        }
    }
    let mut by_dialogue: std::collections::HashMap<&str, Vec<&RetrievalExample>> =
        std::collections::HashMap::new();
    for ex in corpus.examples() {
        by_dialogue.entry(ex.dialogue_id.as_str()).or_default().push(ex);
    }
    for d in corpus.dialogues() {
        let rec = Record::Dialogue {
            id: d.id.clone(),
            sessions: d
                .sessions
                .iter()
                .map(|s| {
                    s.utterances
                        .iter()
                        .map(|u| UtteranceRecord {
                            role: u.role,
                            text: u.text.clone(),
                        })
                        .collect()
                })
                .collect(),
            examples: by_dialogue
                .get(d.id.as_str())
                .into_iter()
                .flatten()
                .map(|e| ExampleRecord {
                    turn: e.query_turn,
                    task: e.task,
                    positive: e.positive_id.clone(),
                    historical: e.historical_ids.clone(),
                })
                .collect(),
        };
        serde_json::to_writer(&mut w, &rec)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{"kind":"candidate","id":"p1","task":"persona","text":"likes tea"}
{"kind":"candidate","id":"p2","task":"persona","text":"owns a cat"}
{"kind":"dialogue","id":"d1","sessions":[[{"role":"user","text":"any pets"},{"role":"system","text":"yes"}]],"examples":[{"turn":0,"task":"persona","positive":"p2","historical":[]}]}
"#;

    #[test]
    fn empty_file_is_empty_corpus() {
        let c = parse_corpus("").unwrap();
        assert!(c.dialogues().is_empty());
        assert!(c.examples().is_empty());
        assert_eq!(c.vocab().len(), crate::encoder::SpecialToken::COUNT);
    }

    #[test]
    fn minimal_corpus() {
        let c = parse_corpus(MINIMAL).unwrap();
        assert_eq!(c.examples().len(), 1);
        assert_eq!(c.pool(TaskKind::Persona).len(), 2);
        assert!(c.vocab().id("cat").is_some());
    }

    #[test]
    fn dangling_reference_names_the_id() {
        let bad = MINIMAL.replace(r#""positive":"p2""#, r#""positive":"p9""#);
        let err = parse_corpus(&bad).unwrap_err();
        assert!(matches!(&err, Error::Integrity { id, .. } if id == "p9"), "{err}");
    }

    #[test]
    fn malformed_record_reports_line() {
        let bad = format!("{MINIMAL}{{\"kind\":\"dialogue\",\"id\":3}}\n");
        match parse_corpus(&bad).unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 4),
            e => panic!("unexpected {e}"),
        }
        match parse_corpus("not json").unwrap_err() {
            Error::Parse { line, .. } => assert_eq!(line, 1),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn query_turn_must_be_user() {
        let bad = MINIMAL.replace(r#""turn":0"#, r#""turn":1"#);
        assert!(matches!(parse_corpus(&bad), Err(Error::Integrity { .. })));
    }

    #[test]
    fn write_then_parse_roundtrips() {
        let c = parse_corpus(MINIMAL).unwrap();
        let mut buf = Vec::new();
        write_corpus(&c, &mut buf).unwrap();
        let again = parse_corpus(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(c, again);
    }
}
