//! Exact-match scoring, per-relation breakdowns and run-level significance.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::decode::CandidateSet;
use crate::error::{Error, Result};
use crate::relation::RelationRegistry;
use crate::triple::{Sample, Triple};

pub use crate::decode::max_possible_recall as recall_at_k;

/// The final output for one utterance. `triple == None` is an abstention.
#[derive(Debug, Clone, PartialEq)]
pub struct Prediction {
    pub source_id: String,
    pub triple: Option<Triple>,
    pub rerank_score: Option<f64>,
    pub generator_score: Option<f64>,
}

impl Prediction {
    pub fn abstain(source_id: impl Into<String>) -> Self {
        Self { source_id: source_id.into(), triple: None, rerank_score: None, generator_score: None }
    }

    pub fn to_record(&self) -> PredictionRecord {
        PredictionRecord {
            source_id: self.source_id.clone(),
            head: self.triple.as_ref().map(Triple::head_text),
            relation: self.triple.as_ref().map(|t| t.relation.to_string()),
            tail: self.triple.as_ref().map(Triple::tail_text),
            rerank_score: self.rerank_score,
            generator_score: self.generator_score,
        }
    }

    pub fn from_record(rec: PredictionRecord, registry: &RelationRegistry) -> Result<Self> {
        let triple = match (&rec.head, &rec.relation, &rec.tail) {
            (Some(h), Some(r), Some(t)) => Some(
                Triple::new(h, r, t, registry).map_err(|e| Error::MalformedRecord(format!("{}: {e}", rec.source_id)))?,
            ),
            (None, None, None) => None,
            _ => return Err(Error::MalformedRecord(format!("{}: partial triple", rec.source_id))),
        };
        Ok(Self { source_id: rec.source_id, triple, rerank_score: rec.rerank_score, generator_score: rec.generator_score })
    }
}

/// On-disk prediction; head, relation and tail are all null for an abstention.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub source_id: String,
    pub head: Option<String>,
    pub relation: Option<String>,
    pub tail: Option<String>,
    pub rerank_score: Option<f64>,
    pub generator_score: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub true_positives: usize,
    /// Non-abstaining predictions.
    pub predicted: usize,
    pub gold: usize,
}

impl Prf {
    fn from_counts(tp: usize, predicted: usize, gold: usize) -> Self {
        let precision = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
        let recall = if gold == 0 { 0.0 } else { tp as f64 / gold as f64 };
        let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
        Self { precision, recall, f1, true_positives: tp, predicted, gold }
    }
}

fn index_predictions<'a>(preds: &'a [Prediction], golds: &[Sample]) -> Result<HashMap<&'a str, &'a Prediction>> {
    let mut seen = HashSet::new();
    for g in golds {
        if !seen.insert(g.source_id.as_str()) {
            return Err(Error::DuplicateId(g.source_id.clone()));
        }
    }
    let mut by_id = HashMap::new();
    for p in preds {
        if !seen.contains(p.source_id.as_str()) {
            return Err(Error::IdMismatch(format!("prediction for unknown source_id {:?}", p.source_id)));
        }
        if by_id.insert(p.source_id.as_str(), p).is_some() {
            return Err(Error::DuplicateId(p.source_id.clone()));
        }
    }
    Ok(by_id)
}

/// Micro-averaged exact-match precision, recall and F1.
///
/// A gold sample without a prediction, or with an abstention, counts against
/// recall only.
pub fn micro_prf(preds: &[Prediction], golds: &[Sample]) -> Result<Prf> {
    let by_id = index_predictions(preds, golds)?;
    let predicted = by_id.values().filter(|p| p.triple.is_some()).count();
    let tp = golds
        .iter()
        .filter(|g| by_id.get(g.source_id.as_str()).and_then(|p| p.triple.as_ref()) == Some(&g.gold))
        .count();
    Ok(Prf::from_counts(tp, predicted, golds.len()))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelationRow {
    pub relation: String,
    pub prf: Prf,
    /// Most frequent predicted relations for gold samples of this relation.
    pub predicted_relations: Vec<(String, usize)>,
    pub top_gold_tails: Vec<(String, usize)>,
    pub top_predicted_tails: Vec<(String, usize)>,
}

fn top3(counts: BTreeMap<String, usize>) -> Vec<(String, usize)> {
    let mut v: Vec<_> = counts.into_iter().collect();
    v.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    v.truncate(3);
    v
}

/// One row per relation occurring in the golds or the predictions.
pub fn per_relation_report(preds: &[Prediction], golds: &[Sample]) -> Result<Vec<RelationRow>> {
    let by_id = index_predictions(preds, golds)?;
    #[derive(Default)]
    struct Acc {
        tp: usize,
        predicted: usize,
        gold: usize,
        confusions: BTreeMap<String, usize>,
        gold_tails: BTreeMap<String, usize>,
        pred_tails: BTreeMap<String, usize>,
    }
    let mut rows: BTreeMap<String, Acc> = BTreeMap::new();
    for g in golds {
        let rel = g.gold.relation.to_string();
        let pred = by_id.get(g.source_id.as_str()).and_then(|p| p.triple.as_ref());
        let acc = rows.entry(rel).or_default();
        acc.gold += 1;
        *acc.gold_tails.entry(g.gold.tail_text()).or_default() += 1;
        let label = pred.map_or_else(|| "<abstain>".to_string(), |t| t.relation.to_string());
        *acc.confusions.entry(label).or_default() += 1;
        if pred == Some(&g.gold) {
            acc.tp += 1;
        }
    }
    for p in by_id.values() {
        if let Some(t) = &p.triple {
            let acc = rows.entry(t.relation.to_string()).or_default();
            acc.predicted += 1;
            *acc.pred_tails.entry(t.tail_text()).or_default() += 1;
        }
    }
    Ok(rows
        .into_iter()
        .map(|(relation, a)| RelationRow {
            relation,
            prf: Prf::from_counts(a.tp, a.predicted, a.gold),
            predicted_relations: top3(a.confusions),
            top_gold_tails: top3(a.gold_tails),
            top_predicted_tails: top3(a.pred_tails),
        })
        .collect())
}

pub fn render_relation_table(rows: &[RelationRow]) -> String {
    let mut out = format!("{:<26} {:>6} {:>6} {:>6} {:>6}  {}\n", "relation", "gold", "P", "R", "F1", "predicted as");
    for r in rows {
        let conf: Vec<String> = r.predicted_relations.iter().map(|(k, n)| format!("{k}:{n}")).collect();
        out.push_str(&format!(
            "{:<26} {:>6} {:>6.1} {:>6.1} {:>6.1}  {}\n",
            r.relation,
            r.prf.gold,
            100.0 * r.prf.precision,
            100.0 * r.prf.recall,
            100.0 * r.prf.f1,
            conf.join(" ")
        ));
    }
    out
}

/// Everything `evaluate` reports for one prediction file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub micro: Prf,
    /// Gold samples without a (non-abstaining) prediction.
    pub abstentions: usize,
    pub relations: Vec<RelationRow>,
    /// `(k, recall@k)` for k = 1..=L, when candidate sets are supplied.
    pub recall_at_k: Vec<(usize, f64)>,
}

pub fn evaluate(
    preds: &[Prediction],
    golds: &[Sample],
    candidates: Option<&[CandidateSet]>,
    max_k: usize,
) -> Result<EvalReport> {
    let micro = micro_prf(preds, golds)?;
    let relations = per_relation_report(preds, golds)?;
    let recall_at_k = match candidates {
        Some(sets) => (1..=max_k).map(|k| (k, recall_at_k(sets, golds, k))).collect(),
        None => Vec::new(),
    };
    Ok(EvalReport { abstentions: micro.gold - micro.predicted, micro, relations, recall_at_k })
}

pub fn render_report(report: &EvalReport, per_relation: bool) -> String {
    let m = &report.micro;
    let mut out = format!(
        "P {:.1}  R {:.1}  F1 {:.1}  (correct {}, predicted {}, gold {}, abstained {})\n",
        100.0 * m.precision,
        100.0 * m.recall,
        100.0 * m.f1,
        m.true_positives,
        m.predicted,
        m.gold,
        report.abstentions
    );
    if !report.recall_at_k.is_empty() {
        let cells: Vec<String> = report.recall_at_k.iter().map(|(k, r)| format!("@{k} {:.1}", 100.0 * r)).collect();
        out.push_str(&format!("recall {}\n", cells.join("  ")));
    }
    if per_relation {
        out.push('\n');
        out.push_str(&render_relation_table(&report.relations));
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TTest {
    pub t: f64,
    pub p_value: f64,
    pub df: f64,
}

fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var)
}

/// Two-sided two-sample Student t-test with pooled variance.
pub fn significance(a: &[f64], b: &[f64]) -> Result<TTest> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::InsufficientRuns { a: a.len(), b: b.len() });
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = na + nb - 2.0;
    let pooled = ((na - 1.0) * va + (nb - 1.0) * vb) / df;
    let se = (pooled * (1.0 / na + 1.0 / nb)).sqrt();
    if se == 0.0 {
        return Ok(if ma == mb {
            TTest { t: 0.0, p_value: 1.0, df }
        } else {
            TTest { t: (ma - mb).signum() * f64::INFINITY, p_value: 0.0, df }
        });
    }
    let t = (ma - mb) / se;
    let dist = StudentsT::new(0.0, 1.0, df).map_err(|e| Error::Config(e.to_string()))?;
    let p_value = (2.0 * dist.cdf(-t.abs())).min(1.0);
    Ok(TTest { t, p_value, df })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::{Split, Task};

    fn reg() -> RelationRegistry {
        RelationRegistry::bundled()
    }

    fn gold(id: &str, r: &str, t: &str) -> Sample {
        Sample {
            source_id: id.into(),
            sentence: "x".into(),
            gold: Triple::new("i", r, t, &reg()).unwrap(),
            task: Task::Extraction,
            split: Split::Test,
        }
    }

    fn pred(id: &str, r: &str, t: &str) -> Prediction {
        Prediction {
            source_id: id.into(),
            triple: Some(Triple::new("i", r, t, &reg()).unwrap()),
            rerank_score: None,
            generator_score: None,
        }
    }

    #[test]
    fn abstention_counts_against_recall_only() {
        let golds = [gold("1", "[have_pet]", "dog"), gold("2", "[like_food]", "pizza"), gold("3", "[own]", "car")];
        let preds = [pred("1", "[have_pet]", "dog"), pred("2", "[like_food]", "pasta"), Prediction::abstain("3")];
        let prf = micro_prf(&preds, &golds).unwrap();
        assert_eq!((prf.true_positives, prf.predicted, prf.gold), (1, 2, 3));
        assert!((prf.precision - 0.5).abs() < 1e-12);
        assert!((prf.recall - 1.0 / 3.0).abs() < 1e-12);
        assert!((prf.f1 - 0.4).abs() < 1e-12);
    }

    #[test]
    fn all_abstain_is_zero() {
        let golds = [gold("1", "[have_pet]", "dog")];
        let prf = micro_prf(&[Prediction::abstain("1")], &golds).unwrap();
        assert_eq!((prf.precision, prf.recall, prf.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn duplicate_and_unknown_ids() {
        let golds = [gold("1", "[have_pet]", "dog")];
        let dup = [pred("1", "[have_pet]", "dog"), pred("1", "[have_pet]", "cat")];
        assert!(matches!(micro_prf(&dup, &golds), Err(Error::DuplicateId(_))));
        assert!(matches!(micro_prf(&[pred("9", "[own]", "car")], &golds), Err(Error::IdMismatch(_))));
    }

    #[test]
    fn per_relation_rows() {
        let golds = [gold("1", "[have_pet]", "dog"), gold("2", "[have_pet]", "cat"), gold("3", "[own]", "car")];
        let preds = [pred("1", "[have_pet]", "dog"), pred("2", "[like_animal]", "cat"), pred("3", "[own]", "car")];
        let rows = per_relation_report(&preds, &golds).unwrap();
        let names: Vec<&str> = rows.iter().map(|r| r.relation.as_str()).collect();
        assert_eq!(names, ["[have_pet]", "[like_animal]", "[own]"]);
        assert_eq!(rows[0].prf.recall, 0.5);
        assert_eq!(rows[0].predicted_relations, vec![("[have_pet]".into(), 1), ("[like_animal]".into(), 1)]);
        assert_eq!(rows[1].prf.gold, 0);
        assert_eq!(rows[1].prf.precision, 0.0);
        assert!(render_relation_table(&rows).contains("[own]"));
    }

    #[test]
    fn record_roundtrip() {
        let p = pred("7", "[have_pet]", "dog");
        assert_eq!(Prediction::from_record(p.to_record(), &reg()).unwrap(), p);
        let a = Prediction::abstain("8");
        let rec = a.to_record();
        assert_eq!(serde_json::to_string(&rec).unwrap(),
            r#"{"source_id":"8","head":null,"relation":null,"tail":null,"rerank_score":null,"generator_score":null}"#);
        assert_eq!(Prediction::from_record(rec, &reg()).unwrap(), a);
    }

    #[test]
    fn t_test_against_reference_values() {
        // reference values from scipy.stats.ttest_ind(equal_var=True)
        let cases: [(&[f64], &[f64], f64, f64); 3] = [
            (&[59.0, 59.2, 59.4, 59.1, 59.3], &[55.1, 55.4, 55.2, 55.6, 55.2], 34.205262752974356, 5.832033727167373e-10),
            (&[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0, 8.0], -1.872563351797078, 0.12001763774189389),
            (&[51.0, 50.2, 52.3], &[50.8, 51.5, 49.9], 0.5646839155919959, 0.6024517822279429),
        ];
        for (a, b, t, p) in cases {
            let r = significance(a, b).unwrap();
            assert!((r.t - t).abs() < 1e-9, "{} vs {t}", r.t);
            assert!((r.p_value - p).abs() / p < 1e-6, "{} vs {p}", r.p_value);
        }
    }

    #[test]
    fn t_test_edge_cases() {
        let same = significance(&[1.0, 1.0, 1.0], &[1.0, 1.0, 1.0]).unwrap();
        assert_eq!((same.t, same.p_value), (0.0, 1.0));
        assert!(matches!(significance(&[1.0], &[1.0, 2.0]), Err(Error::InsufficientRuns { a: 1, b: 2 })));
    }
}
