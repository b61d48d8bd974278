use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Reserved tokens. They occupy ids `0..SpecialToken::COUNT` in every vocabulary.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SpecialToken {
    Cls,
    Sep,
    Usr,
    Sys,
    Persona,
    Knowledge,
    Response,
    Unk,
    Pad,
}

impl SpecialToken {
    pub const COUNT: usize = 9;
    pub const ALL: [SpecialToken; Self::COUNT] = [
        SpecialToken::Cls,
        SpecialToken::Sep,
        SpecialToken::Usr,
        SpecialToken::Sys,
        SpecialToken::Persona,
        SpecialToken::Knowledge,
        SpecialToken::Response,
        SpecialToken::Unk,
        SpecialToken::Pad,
    ];

    pub fn id(self) -> u32 {
        self as u32
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SpecialToken::Cls => "[CLS]",
            SpecialToken::Sep => "[SEP]",
            SpecialToken::Usr => "[USR]",
            SpecialToken::Sys => "[SYS]",
            SpecialToken::Persona => "[PERSONA]",
            SpecialToken::Knowledge => "[KNOWLEDGE]",
            SpecialToken::Response => "[RESPONSE]",
            SpecialToken::Unk => "[UNK]",
            SpecialToken::Pad => "[PAD]",
        }
    }
}

/// Token ↔ id map: special tokens first, then corpus tokens by descending
/// frequency with lexicographic tie-breaking.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "Vec<String>", try_from = "Vec<String>")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from whitespace-tokenized texts.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut counts: BTreeMap<&str, u64> = BTreeMap::new();
        for text in texts {
            for tok in text.split_whitespace() {
                *counts.entry(tok).or_default() += 1;
            }
        }
        let mut ranked: Vec<(&str, u64)> = counts
            .into_iter()
            .filter(|(t, _)| !SpecialToken::ALL.iter().any(|s| s.as_str() == *t))
            .collect();
        // BTreeMap iteration is lexicographic and the sort is stable.
        ranked.sort_by(|a, b| b.1.cmp(&a.1));
        let tokens = SpecialToken::ALL
            .iter()
            .map(|s| s.as_str().to_string())
            .chain(ranked.into_iter().map(|(t, _)| t.to_string()))
            .collect();
        Self::from_tokens(tokens).expect("specials are unique and counted tokens are distinct")
    }

    /// Rebuilds a vocabulary from its id-ordered token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        for (i, s) in SpecialToken::ALL.iter().enumerate() {
            if tokens.get(i).map(String::as_str) != Some(s.as_str()) {
                return Err(Error::Integrity {
                    id: s.as_str().to_string(),
                    message: format!("special token missing at id {i}"),
                });
            }
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Integrity {
                    id: t.clone(),
                    message: "duplicate vocabulary token".into(),
                });
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> u32 {
        self.id(token).unwrap_or(SpecialToken::Unk.id())
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl From<Vocab> for Vec<String> {
    fn from(v: Vocab) -> Self {
        v.tokens
    }
}

impl TryFrom<Vec<String>> for Vocab {
    type Error = Error;

    fn try_from(tokens: Vec<String>) -> Result<Self> {
        Vocab::from_tokens(tokens)
    }
}
