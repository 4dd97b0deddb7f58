//! Column-format dependency parses and tail-entity label histograms.
//!
//! One token per line with whitespace-separated columns
//! `token POS head dep`, heads 1-based with 0 for the root, and a blank line
//! between sentences. A `# source_id = ID` comment line before a sentence
//! ties it to a sample.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::text::find_span;
use crate::triple::Sample;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParsedSentence {
    pub source_id: Option<String>,
    pub tokens: Vec<String>,
    pub pos: Vec<String>,
    /// 1-based head index per token; 0 is the root.
    pub heads: Vec<usize>,
    pub deps: Vec<String>,
}

impl ParsedSentence {
    pub fn validate(&self) -> Result<()> {
        let n = self.tokens.len();
        if n == 0 || self.pos.len() != n || self.heads.len() != n || self.deps.len() != n {
            return Err(Error::Format("parse columns have inconsistent lengths".into()));
        }
        if let Some(h) = self.heads.iter().find(|&&h| h > n) {
            return Err(Error::Format(format!("head index {h} out of range for {n} tokens")));
        }
        let roots = self.heads.iter().filter(|&&h| h == 0).count();
        if roots != 1 {
            return Err(Error::Format(format!("expected exactly one root, found {roots}")));
        }
        Ok(())
    }
}

pub fn parse_parses(text: &str) -> Result<Vec<ParsedSentence>> {
    let mut out = Vec::new();
    let mut cur = ParsedSentence { source_id: None, tokens: vec![], pos: vec![], heads: vec![], deps: vec![] };
    let flush = |cur: &mut ParsedSentence, out: &mut Vec<ParsedSentence>| -> Result<()> {
        if !cur.tokens.is_empty() {
            cur.validate()?;
            out.push(std::mem::replace(
                cur,
                ParsedSentence { source_id: None, tokens: vec![], pos: vec![], heads: vec![], deps: vec![] },
            ));
        }
        Ok(())
    };
    for (i, line) in text.lines().enumerate() {
        let line = line.trim_end();
        if line.trim().is_empty() {
            flush(&mut cur, &mut out)?;
            continue;
        }
        if let Some(comment) = line.strip_prefix('#') {
            if let Some((k, v)) = comment.split_once('=') {
                if k.trim() == "source_id" {
                    cur.source_id = Some(v.trim().to_string());
                }
            }
            continue;
        }
        let cols: Vec<&str> = line.split_whitespace().collect();
        let [token, pos, head, dep] = cols[..] else {
            return Err(Error::Format(format!("parse line {}: expected 4 columns, got {}", i + 1, cols.len())));
        };
        let head = head
            .parse()
            .map_err(|_| Error::Format(format!("parse line {}: bad head index {head:?}", i + 1)))?;
        cur.tokens.push(token.to_lowercase());
        cur.pos.push(pos.to_string());
        cur.heads.push(head);
        cur.deps.push(dep.to_string());
    }
    flush(&mut cur, &mut out)?;
    Ok(out)
}

pub fn read_parses(path: &Path) -> Result<Vec<ParsedSentence>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_parses(&text)
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub counts: BTreeMap<String, usize>,
    pub total: usize,
    /// Samples whose tail could not be located (lenient mode only).
    pub skipped: usize,
}

impl Histogram {
    /// The `k` most frequent labels with their share of the total.
    pub fn top(&self, k: usize) -> Vec<(String, usize, f64)> {
        let mut v: Vec<(&String, &usize)> = self.counts.iter().collect();
        v.sort_by(|a, b| b.1.cmp(a.1).then_with(|| a.0.cmp(b.0)));
        v.into_iter()
            .take(k)
            .map(|(l, &c)| (l.clone(), c, c as f64 / self.total.max(1) as f64))
            .collect()
    }

    pub fn share(&self, label: &str) -> f64 {
        self.counts.get(label).map_or(0.0, |&c| c as f64 / self.total.max(1) as f64)
    }
}

/// Pair each sample with its parse: by `source_id` comments when every
/// parse has one, otherwise by position.
fn align<'a>(parses: &'a [ParsedSentence], samples: &'a [Sample]) -> Result<Vec<(&'a Sample, &'a ParsedSentence)>> {
    if !parses.is_empty() && parses.iter().all(|p| p.source_id.is_some()) {
        let by_id: HashMap<&str, &ParsedSentence> =
            parses.iter().map(|p| (p.source_id.as_deref().unwrap(), p)).collect();
        return samples
            .iter()
            .map(|s| {
                by_id
                    .get(s.source_id.as_str())
                    .map(|p| (s, *p))
                    .ok_or_else(|| Error::AlignmentFailure(format!("no parse for {}", s.source_id)))
            })
            .collect();
    }
    if parses.len() != samples.len() {
        return Err(Error::AlignmentFailure(format!(
            "{} parses for {} samples and no source_id comments",
            parses.len(),
            samples.len()
        )));
    }
    Ok(samples.iter().zip(parses).collect())
}

fn tail_histogram(
    parses: &[ParsedSentence],
    samples: &[Sample],
    strict: bool,
    column: impl Fn(&ParsedSentence, usize) -> &str,
) -> Result<Histogram> {
    let mut h = Histogram::default();
    for (sample, parse) in align(parses, samples)? {
        match find_span(&parse.tokens, &sample.gold.tail) {
            Some(start) => {
                for i in start..start + sample.gold.tail.len() {
                    *h.counts.entry(column(parse, i).to_string()).or_default() += 1;
                    h.total += 1;
                }
            }
            None if strict => {
                return Err(Error::AlignmentFailure(format!(
                    "tail {:?} of {} not found in parse tokens",
                    sample.gold.tail_text(),
                    sample.source_id
                )))
            }
            None => h.skipped += 1,
        }
    }
    Ok(h)
}

/// Dependency labels of tail-entity tokens.
pub fn tail_dependency_distribution(parses: &[ParsedSentence], samples: &[Sample], strict: bool) -> Result<Histogram> {
    tail_histogram(parses, samples, strict, |p, i| &p.deps[i])
}

/// POS tags of tail-entity tokens.
pub fn tail_pos_distribution(parses: &[ParsedSentence], samples: &[Sample], strict: bool) -> Result<Histogram> {
    tail_histogram(parses, samples, strict, |p, i| &p.pos[i])
}

/// Share of tokens whose tag is not nominal (`NN*`, `NOUN`, `PROPN`).
pub fn non_noun_share(pos: &Histogram) -> f64 {
    if pos.total == 0 {
        return 0.0;
    }
    let nouns: usize = pos
        .counts
        .iter()
        .filter(|(t, _)| t.starts_with("NN") || *t == "NOUN" || *t == "PROPN")
        .map(|(_, c)| c)
        .sum();
    1.0 - nouns as f64 / pos.total as f64
}

pub fn render_histogram(title: &str, h: &Histogram, k: usize) -> String {
    let mut out = format!("{title} ({} tokens, {} skipped)\n", h.total, h.skipped);
    for (label, count, share) in h.top(k) {
        out.push_str(&format!("{label:<10} {count:>7} {:>6.1}%\n", 100.0 * share));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::RelationRegistry;
    use crate::triple::{Split, Task, Triple};

    const PARSE: &str = "# source_id = a
i PRP 2 nsubj
have VBP 0 ROOT
a DT 4 det
dog NN 2 dobj

# source_id = b
i PRP 2 nsubj
live VBP 0 ROOT
in IN 2 prep
new NNP 5 compound
york NNP 3 pobj
";

    fn sample(id: &str, tail: &str) -> Sample {
        Sample {
            source_id: id.into(),
            sentence: "x".into(),
            gold: Triple::new("i", "[own]", tail, &RelationRegistry::bundled()).unwrap(),
            task: Task::Extraction,
            split: Split::Train,
        }
    }

    #[test]
    fn reads_and_counts() {
        let parses = parse_parses(PARSE).unwrap();
        assert_eq!(parses.len(), 2);
        assert_eq!(parses[1].source_id.as_deref(), Some("b"));
        let samples = [sample("b", "new york"), sample("a", "dog")];
        let deps = tail_dependency_distribution(&parses, &samples, true).unwrap();
        assert_eq!(deps.total, 3);
        assert_eq!(deps.counts["dobj"], 1);
        assert_eq!(deps.counts["pobj"], 1);
        let pos = tail_pos_distribution(&parses, &samples, true).unwrap();
        assert_eq!(non_noun_share(&pos), 0.0);
        assert!(render_histogram("pos", &pos, 10).contains("NNP"));
    }

    #[test]
    fn invalid_trees_rejected() {
        assert!(parse_parses("a DT 0 ROOT\nb NN 0 ROOT\n").is_err());
        assert!(parse_parses("a DT 5 det\nb NN 0 ROOT\n").is_err());
        assert!(parse_parses("a DT 0\n").is_err());
    }

    #[test]
    fn alignment_failures() {
        let parses = parse_parses(PARSE).unwrap();
        let missing = [sample("zzz", "dog")];
        assert!(matches!(tail_pos_distribution(&parses, &missing, true), Err(Error::AlignmentFailure(_))));
        let wrong_tail = [sample("a", "cat")];
        assert!(matches!(tail_pos_distribution(&parses, &wrong_tail, true), Err(Error::AlignmentFailure(_))));
        let lenient = tail_pos_distribution(&parses, &wrong_tail, false).unwrap();
        assert_eq!((lenient.total, lenient.skipped), (0, 1));
    }

    #[test]
    fn empty_corpus() {
        let h = tail_pos_distribution(&[], &[], true).unwrap();
        assert_eq!(h, Histogram::default());
        assert_eq!(non_noun_share(&h), 0.0);
    }
}
