//! Corpus ingestion, normalization, and the Extraction/Inference partition.

use std::collections::{BTreeMap, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::relation::{Canonical, RelationRegistry};
use crate::text;
use crate::triple::{Sample, Split, Task, Triple};

/// One (utterance, annotated triple) pair as found in the source corpus.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawRecord {
    pub source_id: String,
    pub sentence: Option<String>,
    pub head: Option<String>,
    pub relation: Option<String>,
    pub tail: Option<String>,
    pub split: Split,
}

/// Why [`normalize`] discarded a record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum DropReason {
    /// A field is `None` or `<blank>`.
    Placeholder,
    /// Under-specified or unregistered relation.
    Relation,
    EmptySentence,
    EmptyEntity,
    Duplicate,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Normalized {
    Kept(Sample),
    Dropped(DropReason),
}

/// True iff the entity tokens occur contiguously in the sentence tokens.
///
/// Matching is token-level and case-insensitive, so `cat` is not contained
/// in `i have two cats`.
pub fn is_span_contained(sentence: &str, entity: &str) -> bool {
    text::contains_span(&text::tokenize(sentence), &text::tokenize(entity))
}

fn is_placeholder(field: &str) -> bool {
    let f = field.trim().to_ascii_lowercase();
    f == "none" || f.contains("<blank>")
}

/// Apply the cleaning rules to one raw record.
///
/// Placeholders and dropped relations discard the record; a leading quantity
/// is stripped from the tail; the task tag comes from span containment of
/// both entities.
pub fn normalize(record: &RawRecord, registry: &RelationRegistry) -> Result<Normalized> {
    let missing = |field: &str| {
        Error::MalformedRecord(format!("{}: missing field {field}", record.source_id))
    };
    let sentence = record.sentence.as_deref().ok_or_else(|| missing("sentence"))?;
    let head = record.head.as_deref().ok_or_else(|| missing("head"))?;
    let relation = record.relation.as_deref().ok_or_else(|| missing("relation"))?;
    let tail = record.tail.as_deref().ok_or_else(|| missing("tail"))?;

    if [head, relation, tail].iter().any(|f| is_placeholder(f)) {
        return Ok(Normalized::Dropped(DropReason::Placeholder));
    }
    let Canonical::Relation(relation) = registry.canonicalize(relation) else {
        return Ok(Normalized::Dropped(DropReason::Relation));
    };
    let sentence_tokens = text::tokenize(sentence);
    if sentence_tokens.is_empty() {
        log::warn!("{}: empty sentence dropped", record.source_id);
        return Ok(Normalized::Dropped(DropReason::EmptySentence));
    }
    let head_tokens = text::tokenize(head);
    let tail_tokens = text::strip_number_prefix(&text::tokenize(tail));
    let Ok(gold) = Triple::from_tokens(head_tokens, relation, tail_tokens) else {
        return Ok(Normalized::Dropped(DropReason::EmptyEntity));
    };
    let task = task_for(&sentence_tokens, &gold);
    Ok(Normalized::Kept(Sample {
        source_id: record.source_id.clone(),
        sentence: sentence_tokens.join(" "),
        gold,
        task,
        split: record.split,
    }))
}

fn task_for(sentence_tokens: &[String], gold: &Triple) -> Task {
    if text::contains_span(sentence_tokens, &gold.head) && text::contains_span(sentence_tokens, &gold.tail) {
        Task::Extraction
    } else {
        Task::Inference
    }
}

/// Split samples into (extraction, inference), re-deriving each task tag.
pub fn partition(samples: impl IntoIterator<Item = Sample>) -> (Vec<Sample>, Vec<Sample>) {
    let mut extraction = Vec::new();
    let mut inference = Vec::new();
    for mut s in samples {
        s.task = task_for(&s.sentence_tokens(), &s.gold);
        match s.task {
            Task::Extraction => extraction.push(s),
            Task::Inference => inference.push(s),
        }
    }
    (extraction, inference)
}

/// Counts of what happened to every raw record during a build.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct BuildReport {
    pub raw_records: usize,
    pub kept: usize,
    pub dropped: BTreeMap<DropReason, usize>,
}

#[derive(Debug, Clone)]
pub struct BuiltDatasets {
    pub extraction: Vec<Sample>,
    pub inference: Vec<Sample>,
    pub report: BuildReport,
}

impl BuiltDatasets {
    pub fn task(&self, task: Task) -> &[Sample] {
        match task {
            Task::Extraction => &self.extraction,
            Task::Inference => &self.inference,
        }
    }
}

/// Normalize, optionally deduplicate, and partition a raw corpus.
///
/// Deduplication keys on (split, sentence, triple) after normalization and
/// keeps the first occurrence, so output order follows input order.
pub fn build(records: &[RawRecord], registry: &RelationRegistry, dedup: bool) -> Result<BuiltDatasets> {
    let mut report = BuildReport { raw_records: records.len(), ..Default::default() };
    let mut seen = HashSet::new();
    let mut kept = Vec::new();
    for rec in records {
        let reason = match normalize(rec, registry)? {
            Normalized::Kept(sample) => {
                let key = (sample.split, sample.sentence.clone(), sample.gold.clone());
                if !dedup || seen.insert(key) {
                    kept.push(sample);
                    continue;
                }
                DropReason::Duplicate
            }
            Normalized::Dropped(reason) => reason,
        };
        *report.dropped.entry(reason).or_default() += 1;
    }
    report.kept = kept.len();
    let (extraction, inference) = partition(kept);
    Ok(BuiltDatasets { extraction, inference, report })
}

/// Read one split of the source corpus.
///
/// Accepts a JSON array or JSON lines. Each object is either an NLI pair
/// (`sentence1`, `triple1`, `sentence2`, `triple2`), contributing one record
/// per side, or a flat record with `sentence`, `head`, `relation`, `tail`.
pub fn read_raw_split(path: &Path, split: Split) -> Result<Vec<RawRecord>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let trimmed = text.trim_start();
    let values: Vec<Value> = if trimmed.starts_with('[') {
        serde_json::from_str(trimmed)
            .map_err(|source| Error::Json { path: path.to_path_buf(), line: 1, source })?
    } else {
        let mut vals = Vec::new();
        for (i, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            vals.push(serde_json::from_str(line).map_err(|source| Error::Json {
                path: path.to_path_buf(),
                line: i + 1,
                source,
            })?);
        }
        vals
    };
    let mut out = Vec::new();
    for (index, value) in values.iter().enumerate() {
        raw_from_value(value, index, split, &mut out)?;
    }
    Ok(out)
}

fn raw_from_value(value: &Value, index: usize, split: Split, out: &mut Vec<RawRecord>) -> Result<()> {
    let obj = value
        .as_object()
        .ok_or_else(|| Error::MalformedRecord(format!("{split} record {index} is not an object")))?;
    let id = match obj.get("id").or_else(|| obj.get("source_id")) {
        Some(Value::String(s)) => s.clone(),
        Some(Value::Number(n)) => n.to_string(),
        _ => index.to_string(),
    };
    let string = |key: &str| obj.get(key).and_then(Value::as_str).map(str::to_string);
    if obj.contains_key("sentence1") || obj.contains_key("triple1") {
        for side in ["1", "2"] {
            let (head, relation, tail) = triple_fields(obj.get(&format!("triple{side}")));
            out.push(RawRecord {
                source_id: format!("{split}:{id}:{side}"),
                sentence: string(&format!("sentence{side}")),
                head,
                relation,
                tail,
                split,
            });
        }
    } else {
        let source_id = if obj.contains_key("source_id") { id } else { format!("{split}:{id}") };
        let (mut head, mut relation, mut tail) = triple_fields(obj.get("triple"));
        head = head.or_else(|| string("head"));
        relation = relation.or_else(|| string("relation"));
        tail = tail.or_else(|| string("tail"));
        out.push(RawRecord { source_id, sentence: string("sentence"), head, relation, tail, split });
    }
    Ok(())
}

type Fields = (Option<String>, Option<String>, Option<String>);

fn triple_fields(value: Option<&Value>) -> Fields {
    let as_text = |v: &Value| match v {
        Value::String(s) => Some(s.clone()),
        Value::Null => Some("None".to_string()),
        other => Some(other.to_string()),
    };
    match value {
        Some(Value::Array(items)) if items.len() == 3 => {
            (as_text(&items[0]), as_text(&items[1]), as_text(&items[2]))
        }
        Some(Value::Object(o)) => (
            o.get("head").and_then(as_text),
            o.get("relation").and_then(as_text),
            o.get("tail").and_then(as_text),
        ),
        _ => (None, None, None),
    }
}

/// Descriptive statistics of one task dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub unique_heads: usize,
    pub unique_relations: usize,
    pub unique_tails: usize,
    pub avg_head_words: f64,
    pub avg_relation_words: f64,
    pub avg_tail_words: f64,
    pub avg_sentence_words: f64,
    /// Share of samples whose head entity is exactly `i`.
    pub head_i_share: f64,
}

pub fn compute_stats(dataset: &[Sample]) -> DatasetStats {
    let count = |split| dataset.iter().filter(|s| s.split == split).count();
    let n = dataset.len();
    let mean = |f: &dyn Fn(&Sample) -> usize| {
        if n == 0 {
            0.0
        } else {
            dataset.iter().map(f).sum::<usize>() as f64 / n as f64
        }
    };
    let heads: HashSet<&[String]> = dataset.iter().map(|s| s.gold.head.as_slice()).collect();
    let relations: HashSet<&str> = dataset.iter().map(|s| s.gold.relation.as_str()).collect();
    let tails: HashSet<&[String]> = dataset.iter().map(|s| s.gold.tail.as_slice()).collect();
    let head_i = dataset.iter().filter(|s| s.gold.head == ["i"]).count();
    DatasetStats {
        train: count(Split::Train),
        dev: count(Split::Dev),
        test: count(Split::Test),
        unique_heads: heads.len(),
        unique_relations: relations.len(),
        unique_tails: tails.len(),
        avg_head_words: mean(&|s| s.gold.head.len()),
        avg_relation_words: mean(&|_| 1),
        avg_tail_words: mean(&|s| s.gold.tail.len()),
        avg_sentence_words: mean(&|s| s.sentence_tokens().len()),
        head_i_share: if n == 0 { 0.0 } else { head_i as f64 / n as f64 },
    }
}

/// Side-by-side human-readable table for the two task datasets.
pub fn render_stats_table(extraction: &DatasetStats, inference: &DatasetStats) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{:<22}{:>12}{:>12}", "", "Extraction", "Inference");
    let rows: [(&str, String, String); 12] = [
        ("samples: train", extraction.train.to_string(), inference.train.to_string()),
        ("samples: dev", extraction.dev.to_string(), inference.dev.to_string()),
        ("samples: test", extraction.test.to_string(), inference.test.to_string()),
        ("unique heads", extraction.unique_heads.to_string(), inference.unique_heads.to_string()),
        ("unique relations", extraction.unique_relations.to_string(), inference.unique_relations.to_string()),
        ("unique tails", extraction.unique_tails.to_string(), inference.unique_tails.to_string()),
        ("avg words: head", format!("{:.2}", extraction.avg_head_words), format!("{:.2}", inference.avg_head_words)),
        ("avg words: relation", format!("{:.2}", extraction.avg_relation_words), format!("{:.2}", inference.avg_relation_words)),
        ("avg words: tail", format!("{:.2}", extraction.avg_tail_words), format!("{:.2}", inference.avg_tail_words)),
        ("avg words: sentence", format!("{:.1}", extraction.avg_sentence_words), format!("{:.1}", inference.avg_sentence_words)),
        ("head = i (%)", format!("{:.1}", 100.0 * extraction.head_i_share), format!("{:.1}", 100.0 * inference.head_i_share)),
        ("", String::new(), String::new()),
    ];
    for (label, a, b) in rows.iter().filter(|r| !r.0.is_empty()) {
        let _ = writeln!(out, "{label:<22}{a:>12}{b:>12}");
    }
    out
}
