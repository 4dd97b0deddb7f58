//! Word-level vocabulary with atomic control and relation tokens.

use std::collections::{BTreeSet, HashMap};
use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::RelationRegistry;
use crate::triple::{HEAD, RELN, TAIL};

pub type TokenId = u32;

pub const UNK: &str = "[UNK]";
/// Separates the sentence context from the generated (or scored) triple.
pub const SEP: &str = "[SEP]";
pub const EOS: &str = "[EOS]";

pub const UNK_ID: TokenId = 0;
pub const SEP_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;
pub const HEAD_ID: TokenId = 3;
pub const RELN_ID: TokenId = 4;
pub const TAIL_ID: TokenId = 5;

const SPECIALS: [&str; 6] = [UNK, SEP, EOS, HEAD, RELN, TAIL];

/// Ids `0..6` are the specials above, followed by one id per registered
/// relation, followed by text tokens in sorted order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, TokenId>,
    relation_range: (TokenId, TokenId),
}

impl Vocabulary {
    /// Build from the registry plus every text token yielded by `words`.
    pub fn build<'a>(registry: &RelationRegistry, words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut tokens: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        let rel_start = tokens.len() as TokenId;
        tokens.extend(registry.iter().map(|r| r.as_str().to_string()));
        let rel_end = tokens.len() as TokenId;
        let text: BTreeSet<&str> = words
            .into_iter()
            .filter(|w| !w.is_empty() && !crate::triple::is_atomic(w))
            .collect();
        tokens.extend(text.into_iter().map(str::to_string));
        Self::from_tokens(tokens, (rel_start, rel_end))
    }

    fn from_tokens(tokens: Vec<String>, relation_range: (TokenId, TokenId)) -> Self {
        let index = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
        Self { tokens, index, relation_range }
    }

    /// Rebuild the lookup table after deserialization.
    pub fn reindex(&mut self) {
        self.index = self.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i as TokenId)).collect();
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    /// Id of `token`, or [`UNK_ID`].
    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.id(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id_or_unk(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).to_string()).collect()
    }

    pub fn relation_ids(&self) -> std::ops::Range<TokenId> {
        self.relation_range.0..self.relation_range.1
    }

    pub fn is_relation(&self, id: TokenId) -> bool {
        self.relation_ids().contains(&id)
    }

    /// Ordinary word or punctuation token (not special, not relation).
    pub fn is_text(&self, id: TokenId) -> bool {
        id >= self.relation_range.1 && (id as usize) < self.tokens.len()
    }

    pub fn text_ids(&self) -> std::ops::Range<TokenId> {
        self.relation_range.1..self.tokens.len() as TokenId
    }

    /// One token per line; the first line records the relation id range.
    pub fn write<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "#relations\t{}\t{}", self.relation_range.0, self.relation_range.1)?;
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: BufRead>(input: R) -> Result<Self> {
        let mut lines = input.lines();
        let header = lines
            .next()
            .transpose()
            .map_err(|e| Error::Format(e.to_string()))?
            .ok_or_else(|| Error::Format("empty vocabulary file".into()))?;
        let cols: Vec<&str> = header.split('\t').collect();
        let range = match cols.as_slice() {
            ["#relations", a, b] => (
                a.parse().map_err(|_| Error::Format("bad relation range".into()))?,
                b.parse().map_err(|_| Error::Format("bad relation range".into()))?,
            ),
            _ => return Err(Error::Format("missing vocabulary header".into())),
        };
        let tokens = lines.collect::<std::io::Result<Vec<_>>>().map_err(|e| Error::Format(e.to_string()))?;
        Ok(Self::from_tokens(tokens, range))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        self.write(std::io::BufWriter::new(f)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read(std::io::BufReader::new(f))
    }
}
