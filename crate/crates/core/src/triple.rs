//! Triples, samples, and the control-token serialization used as the
//! generation target:
//!
//! ```text
//! [HEAD] i [RELN] [has_profession] [TAIL] receptionist
//! ```

use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::{Relation, RelationRegistry};
use crate::text;

pub const HEAD: &str = "[HEAD]";
pub const RELN: &str = "[RELN]";
pub const TAIL: &str = "[TAIL]";

/// True for bracketed atomic tokens (control, relation, separator, eos).
///
/// The tokenizer always splits `[` off, so text tokens never look like this.
pub fn is_atomic(token: &str) -> bool {
    token.len() > 2 && token.starts_with('[') && token.ends_with(']')
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Task {
    Extraction,
    Inference,
}

impl Task {
    pub fn as_str(self) -> &'static str {
        match self {
            Task::Extraction => "extraction",
            Task::Inference => "inference",
        }
    }
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Task {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "extraction" => Ok(Task::Extraction),
            "inference" => Ok(Task::Inference),
            other => Err(Error::Config(format!("unknown task {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Dev, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "train" => Ok(Split::Train),
            "dev" | "valid" | "validation" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split {other:?}"))),
        }
    }
}

/// A (head, relation, tail) personal-attribute fact. Entities are stored as
/// lowercase token sequences.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Triple {
    pub head: Vec<String>,
    pub relation: Relation,
    pub tail: Vec<String>,
}

impl Triple {
    /// Tokenize `head` and `tail` and validate the relation against `registry`.
    pub fn new(head: &str, relation: &str, tail: &str, registry: &RelationRegistry) -> Result<Self> {
        let relation = registry
            .get(relation)
            .ok_or_else(|| Error::InvalidTriple(format!("unregistered relation {relation}")))?
            .clone();
        Self::from_tokens(text::tokenize(head), relation, text::tokenize(tail))
    }

    pub fn from_tokens(head: Vec<String>, relation: Relation, tail: Vec<String>) -> Result<Self> {
        if head.is_empty() {
            return Err(Error::InvalidTriple("empty head".into()));
        }
        if tail.is_empty() {
            return Err(Error::InvalidTriple("empty tail".into()));
        }
        if let Some(tok) = head.iter().chain(&tail).find(|t| is_atomic(t)) {
            return Err(Error::InvalidTriple(format!("entity contains atomic token {tok}")));
        }
        Ok(Self { head, relation, tail })
    }

    pub fn head_text(&self) -> String {
        self.head.join(" ")
    }

    pub fn tail_text(&self) -> String {
        self.tail.join(" ")
    }
}

impl fmt::Display for Triple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.head_text(), self.relation, self.tail_text())
    }
}

/// Control-token serialization of a triple with the field boundaries.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FlattenedSequence {
    pub tokens: Vec<String>,
    pub head: Range<usize>,
    pub relation: usize,
    pub tail: Range<usize>,
}

impl FlattenedSequence {
    pub fn as_text(&self) -> String {
        self.tokens.join(" ")
    }
}

/// Serialize a triple. Fails if the relation is not in `registry`.
pub fn flatten(triple: &Triple, registry: &RelationRegistry) -> Result<FlattenedSequence> {
    if !registry.contains(triple.relation.as_str()) {
        return Err(Error::InvalidTriple(format!("unregistered relation {}", triple.relation)));
    }
    if triple.head.is_empty() || triple.tail.is_empty() {
        return Err(Error::InvalidTriple("empty entity".into()));
    }
    let mut tokens = Vec::with_capacity(triple.head.len() + triple.tail.len() + 4);
    tokens.push(HEAD.to_string());
    tokens.extend(triple.head.iter().cloned());
    let head = 1..tokens.len();
    tokens.push(RELN.to_string());
    let relation = tokens.len();
    tokens.push(triple.relation.as_str().to_string());
    tokens.push(TAIL.to_string());
    let tail_start = tokens.len();
    tokens.extend(triple.tail.iter().cloned());
    let tail = tail_start..tokens.len();
    Ok(FlattenedSequence { tokens, head, relation, tail })
}

/// Why a token sequence does not describe a triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Malformed {
    MissingHead,
    MissingReln,
    MissingTail,
    EmptyHead,
    EmptyTail,
    /// Zero or several tokens between `[RELN]` and `[TAIL]`.
    RelationArity(usize),
    UnknownRelation(String),
    /// A control, relation or other atomic token inside an entity.
    StrayToken(String),
}

impl fmt::Display for Malformed {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Malformed::MissingHead => write!(f, "sequence does not start with {HEAD}"),
            Malformed::MissingReln => write!(f, "missing {RELN}"),
            Malformed::MissingTail => write!(f, "missing {TAIL}"),
            Malformed::EmptyHead => write!(f, "empty head entity"),
            Malformed::EmptyTail => write!(f, "empty tail entity"),
            Malformed::RelationArity(n) => write!(f, "expected one relation token, found {n}"),
            Malformed::UnknownRelation(r) => write!(f, "unregistered relation {r}"),
            Malformed::StrayToken(t) => write!(f, "stray token {t} inside an entity"),
        }
    }
}

/// Parse decoder output back into a triple. Never panics.
pub fn parse_flattened<S: AsRef<str>>(
    tokens: &[S],
    registry: &RelationRegistry,
) -> std::result::Result<Triple, Malformed> {
    let toks: Vec<&str> = tokens.iter().map(AsRef::as_ref).collect();
    if toks.first() != Some(&HEAD) {
        return Err(Malformed::MissingHead);
    }
    let reln = toks.iter().position(|t| *t == RELN).ok_or(Malformed::MissingReln)?;
    let tail = toks.iter().position(|t| *t == TAIL).ok_or(Malformed::MissingTail)?;
    if tail < reln {
        return Err(Malformed::MissingTail);
    }
    let head = &toks[1..reln];
    let rel = &toks[reln + 1..tail];
    let tail_toks = &toks[tail + 1..];
    if head.is_empty() {
        return Err(Malformed::EmptyHead);
    }
    if rel.len() != 1 {
        return Err(Malformed::RelationArity(rel.len()));
    }
    let relation = registry
        .get(rel[0])
        .ok_or_else(|| Malformed::UnknownRelation(rel[0].to_string()))?;
    if tail_toks.is_empty() {
        return Err(Malformed::EmptyTail);
    }
    if let Some(t) = head.iter().chain(tail_toks).find(|t| is_atomic(t)) {
        return Err(Malformed::StrayToken(t.to_string()));
    }
    Ok(Triple {
        head: head.iter().map(|s| s.to_string()).collect(),
        relation: relation.clone(),
        tail: tail_toks.iter().map(|s| s.to_string()).collect(),
    })
}

/// Whitespace-split convenience wrapper around [`parse_flattened`].
pub fn parse_flattened_str(
    text: &str,
    registry: &RelationRegistry,
) -> std::result::Result<Triple, Malformed> {
    let toks: Vec<&str> = text.split_whitespace().collect();
    parse_flattened(&toks, registry)
}

/// An utterance paired with its annotated triple.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub source_id: String,
    /// Normalized (tokenized, space-joined) utterance.
    pub sentence: String,
    pub gold: Triple,
    pub task: Task,
    pub split: Split,
}

impl Sample {
    pub fn sentence_tokens(&self) -> Vec<String> {
        self.sentence.split(' ').filter(|s| !s.is_empty()).map(str::to_string).collect()
    }

    pub fn to_record(&self) -> SampleRecord {
        SampleRecord {
            source_id: self.source_id.clone(),
            sentence: self.sentence.clone(),
            head: self.gold.head_text(),
            relation: self.gold.relation.as_str().to_string(),
            tail: self.gold.tail_text(),
            task: self.task,
            split: self.split,
        }
    }

    pub fn from_record(rec: SampleRecord, registry: &RelationRegistry) -> Result<Self> {
        let gold = Triple::new(&rec.head, &rec.relation, &rec.tail, registry)
            .map_err(|e| Error::MalformedRecord(format!("{}: {e}", rec.source_id)))?;
        Ok(Self {
            source_id: rec.source_id,
            sentence: text::normalize(&rec.sentence),
            gold,
            task: rec.task,
            split: rec.split,
        })
    }
}

/// Line-delimited on-disk form of a [`Sample`].
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub source_id: String,
    pub sentence: String,
    pub head: String,
    pub relation: String,
    pub tail: String,
    pub task: Task,
    pub split: Split,
}
