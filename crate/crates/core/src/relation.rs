//! The closed relation registry and the raw-to-canonical alias table.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Size of the canonical registry shipped with the crate.
pub const REGISTRY_SIZE: usize = 39;

const DEFAULT_TABLE: &str = include_str!("../data/relations.tsv");

/// A canonical relation token in bracketed form, e.g. `[has_profession]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Relation(String);

impl Relation {
    pub fn as_str(&self) -> &str {
        &self.0
    }

    /// Bare name without brackets.
    pub fn name(&self) -> &str {
        self.0.trim_start_matches('[').trim_end_matches(']')
    }
}

impl fmt::Display for Relation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

/// Outcome of mapping a corpus relation string onto the registry.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Canonical {
    Relation(Relation),
    /// Under-specified (`favorite`, bare `have`, ...) or unknown.
    Dropped,
}

/// Immutable registry of canonical relations plus the alias table that feeds it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RelationRegistry {
    members: BTreeSet<Relation>,
    aliases: BTreeMap<String, Option<Relation>>,
}

impl RelationRegistry {
    /// The alias table bundled in `data/relations.tsv`.
    pub fn bundled() -> Self {
        Self::parse_table(DEFAULT_TABLE).expect("bundled relation table is well formed")
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse_table(&text)
    }

    /// Parse the two-column `raw<TAB>canonical` table; `-` marks a dropped relation.
    pub fn parse_table(text: &str) -> Result<Self> {
        let mut members = BTreeSet::new();
        let mut aliases = BTreeMap::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split('\t');
            let (Some(raw), Some(target), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(Error::Format(format!(
                    "relation table line {}: expected two tab-separated columns",
                    lineno + 1
                )));
            };
            let key = raw_key(raw);
            let target = target.trim();
            if target == "-" {
                aliases.insert(key, None);
                continue;
            }
            let name = raw_key(target);
            if name.is_empty() {
                return Err(Error::Format(format!("relation table line {}: empty target", lineno + 1)));
            }
            let relation = Relation(format!("[{name}]"));
            members.insert(relation.clone());
            aliases.insert(key, Some(relation));
        }
        Ok(Self { members, aliases })
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    /// Registered relations in sorted order.
    pub fn iter(&self) -> impl Iterator<Item = &Relation> {
        self.members.iter()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.get(token).is_some()
    }

    /// Look up a registered relation by its bracketed token.
    pub fn get(&self, token: &str) -> Option<&Relation> {
        self.members.get(&Relation(token.to_owned()))
    }

    /// Map a corpus relation string onto the registry.
    ///
    /// Accepts bare (`favourite_food`) or bracketed (`[like_food]`) forms and
    /// either spelling of favourite. Unknown strings are dropped with a warning.
    pub fn canonicalize(&self, raw: &str) -> Canonical {
        let key = raw_key(raw);
        match self.aliases.get(&key) {
            Some(Some(rel)) => Canonical::Relation(rel.clone()),
            Some(None) => Canonical::Dropped,
            None => {
                log::warn!("unregistered relation {raw:?} dropped");
                Canonical::Dropped
            }
        }
    }

    /// Write the alias table back out in the same two-column format.
    pub fn write_table<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "# raw<TAB>canonical ; '-' marks a dropped relation")?;
        for (raw, target) in &self.aliases {
            match target {
                Some(rel) => writeln!(out, "{raw}\t{rel}")?,
                None => writeln!(out, "{raw}\t-")?,
            }
        }
        Ok(())
    }
}

impl Default for RelationRegistry {
    fn default() -> Self {
        Self::bundled()
    }
}

fn raw_key(raw: &str) -> String {
    raw.trim()
        .trim_start_matches('[')
        .trim_end_matches(']')
        .trim()
        .to_lowercase()
        .replace("favourite", "favorite")
        .split_whitespace()
        .collect::<Vec<_>>()
        .join("_")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_registry_has_39_members() {
        let reg = RelationRegistry::bundled();
        assert_eq!(reg.len(), REGISTRY_SIZE);
        for name in [
            "[have_pet]",
            "[like_activity]",
            "[has_profession]",
            "[has_hobby]",
            "[have_children]",
            "[like_general]",
            "[other]",
            "[like_food]",
            "[misc_attribute]",
            "[physical_attribute]",
            "[want_job]",
            "[favorite_music_artist]",
            "[employed_by_general]",
            "[have_family]",
            "[like_animal]",
            "[like_music]",
        ] {
            assert!(reg.contains(name), "{name} missing");
        }
    }

    #[test]
    fn merges_and_drops() {
        let reg = RelationRegistry::bundled();
        let like_food = reg.get("[like_food]").unwrap().clone();
        assert_eq!(reg.canonicalize("favourite_food"), Canonical::Relation(like_food.clone()));
        assert_eq!(reg.canonicalize("favorite_food"), Canonical::Relation(like_food));
        assert_eq!(
            reg.canonicalize("[has_profession]"),
            Canonical::Relation(reg.get("[has_profession]").unwrap().clone())
        );
        assert_eq!(reg.canonicalize("favorite"), Canonical::Dropped);
        assert_eq!(reg.canonicalize("have"), Canonical::Dropped);
        assert_eq!(reg.canonicalize("no_such_relation"), Canonical::Dropped);
    }

    #[test]
    fn table_roundtrip() {
        let reg = RelationRegistry::bundled();
        let mut buf = Vec::new();
        reg.write_table(&mut buf).unwrap();
        let again = RelationRegistry::parse_table(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(reg, again);
    }

    #[test]
    fn malformed_table_rejected() {
        assert!(RelationRegistry::parse_table("only_one_column\n").is_err());
    }
}
