//! Lexical neighbour tables and tail-word transformation coverage.

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::porter::stem;
use crate::error::{Error, Result};
use crate::triple::Sample;

/// ConceptNet tables keep at most this many neighbours per word.
pub const CONCEPTNET_CAP: usize = 100;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResourceKind {
    ConceptnetRelated,
    ConceptnetConnect,
    WordnetSynonym,
    WordnetHypernym,
    WordnetHyponym,
}

impl ResourceKind {
    pub const ALL: [ResourceKind; 5] = [
        ResourceKind::ConceptnetRelated,
        ResourceKind::ConceptnetConnect,
        ResourceKind::WordnetSynonym,
        ResourceKind::WordnetHypernym,
        ResourceKind::WordnetHyponym,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ResourceKind::ConceptnetRelated => "conceptnet_related",
            ResourceKind::ConceptnetConnect => "conceptnet_connect",
            ResourceKind::WordnetSynonym => "wordnet_synonym",
            ResourceKind::WordnetHypernym => "wordnet_hypernym",
            ResourceKind::WordnetHyponym => "wordnet_hyponym",
        }
    }

    pub fn is_conceptnet(self) -> bool {
        matches!(self, ResourceKind::ConceptnetRelated | ResourceKind::ConceptnetConnect)
    }

    /// Conventional file name inside a resource directory.
    pub fn file_name(self) -> String {
        format!("{}.tsv", self.as_str())
    }
}

impl fmt::Display for ResourceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ResourceKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ResourceKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown resource kind {s:?}")))
    }
}

/// `word -> neighbours` for one transformation.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LexicalResource {
    pub kind: ResourceKind,
    neighbors: HashMap<String, Vec<String>>,
    /// Component words of every neighbour, for reachability checks.
    reachable: HashMap<String, HashSet<String>>,
}

impl LexicalResource {
    pub fn new(kind: ResourceKind) -> Self {
        Self { kind, neighbors: HashMap::new(), reachable: HashMap::new() }
    }

    pub fn insert(&mut self, word: &str, neighbors: impl IntoIterator<Item = String>) {
        let word = word.to_lowercase();
        let list = self.neighbors.entry(word.clone()).or_default();
        for n in neighbors {
            if self.kind.is_conceptnet() && list.len() >= CONCEPTNET_CAP {
                break;
            }
            let n = n.trim().to_lowercase();
            if n.is_empty() || list.contains(&n) {
                continue;
            }
            let parts = self.reachable.entry(word.clone()).or_default();
            parts.extend(n.split(['_', ' ']).filter(|p| !p.is_empty()).map(str::to_string));
            list.push(n);
        }
    }

    /// Parse `word<TAB>n1,n2,...` lines. Blank lines and `#` comments are skipped.
    pub fn parse(kind: ResourceKind, text: &str) -> Result<Self> {
        let mut r = Self::new(kind);
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (word, rest) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("{kind} line {}: expected word<TAB>neighbours", i + 1)))?;
            r.insert(word.trim(), rest.split(',').map(str::to_string));
        }
        Ok(r)
    }

    pub fn load(kind: ResourceKind, path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingResource(format!("{kind} table not found at {}", path.display())));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(kind, &text)
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn neighbors(&self, word: &str) -> &[String] {
        self.neighbors.get(word).map_or(&[], Vec::as_slice)
    }

    /// True iff `target` is a neighbour of `word` or a word of a
    /// multi-word neighbour.
    pub fn reaches(&self, word: &str, target: &str) -> bool {
        self.reachable.get(word).is_some_and(|s| s.contains(target))
    }
}

/// Load every `<kind>.tsv` present in `dir`; `required` kinds must exist.
pub fn load_resource_dir(dir: &Path, required: &[ResourceKind]) -> Result<Vec<LexicalResource>> {
    let mut out = Vec::new();
    for kind in ResourceKind::ALL {
        let path = dir.join(kind.file_name());
        if path.exists() || required.contains(&kind) {
            out.push(LexicalResource::load(kind, &path)?);
        }
    }
    Ok(out)
}

pub fn stopwords() -> &'static HashSet<&'static str> {
    static WORDS: OnceLock<HashSet<&'static str>> = OnceLock::new();
    WORDS.get_or_init(|| include_str!("../../data/stopwords.txt").lines().filter(|l| !l.is_empty()).collect())
}

fn is_content_word(w: &str) -> bool {
    w.chars().any(char::is_alphanumeric) && !stopwords().contains(w)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub transformation: String,
    pub covered: usize,
    /// Percentage in [0, 100].
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageReport {
    pub samples: usize,
    /// Percentage of tails whose every word occurs in the sentence.
    pub directly_identifiable: f64,
    pub not_directly_identifiable: f64,
    pub rows: Vec<CoverageRow>,
}

fn percent(n: usize, total: usize) -> f64 {
    if total == 0 {
        0.0
    } else {
        100.0 * n as f64 / total as f64
    }
}

/// Share of samples whose tail words are all reachable from the sentence.
///
/// `Same_stem` matches stems against every sentence word; resource
/// transformations match neighbours of sentence content words.
pub fn transformation_coverage(samples: &[Sample], resources: &[LexicalResource]) -> CoverageReport {
    let mut direct = 0;
    let mut same = 0;
    let mut by_kind: BTreeMap<ResourceKind, usize> = resources.iter().map(|r| (r.kind, 0)).collect();
    for s in samples {
        let words = s.sentence_tokens();
        let word_set: BTreeSet<&str> = words.iter().map(String::as_str).collect();
        let tail = &s.gold.tail;
        if tail.iter().all(|t| word_set.contains(t.as_str())) {
            direct += 1;
        }
        let stems: BTreeSet<String> = words.iter().map(|w| stem(w)).collect();
        if tail.iter().all(|t| stems.contains(&stem(t))) {
            same += 1;
        }
        let content: Vec<&str> = word_set.iter().copied().filter(|w| is_content_word(w)).collect();
        for r in resources {
            if tail.iter().all(|t| content.iter().any(|w| r.reaches(w, t))) {
                *by_kind.get_mut(&r.kind).unwrap() += 1;
            }
        }
    }
    let n = samples.len();
    let mut rows = vec![CoverageRow { transformation: "same_stem".into(), covered: same, percent: percent(same, n) }];
    rows.extend(by_kind.into_iter().map(|(k, c)| CoverageRow {
        transformation: k.as_str().into(),
        covered: c,
        percent: percent(c, n),
    }));
    CoverageReport {
        samples: n,
        directly_identifiable: percent(direct, n),
        not_directly_identifiable: if n == 0 { 0.0 } else { 100.0 - percent(direct, n) },
        rows,
    }
}

pub fn render_coverage(report: &CoverageReport) -> String {
    let mut out = format!(
        "{} samples; tails not directly identifiable: {:.1}%\n",
        report.samples, report.not_directly_identifiable
    );
    for r in &report.rows {
        out.push_str(&format!("{:<20} {:>6.1}%  ({})\n", r.transformation, r.percent, r.covered));
    }
    out
}
