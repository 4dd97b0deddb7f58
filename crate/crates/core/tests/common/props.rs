//! Property checks. Each returns a one-line summary on success and a
//! description of the first counterexample on failure.

use std::collections::BTreeSet;
use std::sync::atomic::{AtomicUsize, Ordering};

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use persona_attr::decode::{max_possible_recall, Candidate, CandidateSet};
use persona_attr::eval::{micro_prf, Prediction};
use persona_attr::rerank::{select_all, OracleReranker};
use persona_attr::triple::{flatten, parse_flattened};
use persona_attr::{Relation, Sample, Split, Task, Triple};

use super::{registry, Toy};

pub type Check = Result<String, String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new_with_rng(
        Config { cases, failure_persistence: None, ..Config::default() },
        proptest::test_runner::TestRng::deterministic_rng(proptest::test_runner::RngAlgorithm::ChaCha),
    )
}

fn relations() -> Vec<Relation> {
    registry().iter().cloned().collect()
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,8}"
}

pub fn arb_triple() -> impl Strategy<Value = Triple> {
    (
        prop::collection::vec(word(), 1..4),
        prop::sample::select(relations()),
        prop::collection::vec(word(), 1..5),
    )
        .prop_map(|(h, r, t)| Triple::from_tokens(h, r, t).unwrap())
}

pub fn roundtrip(cases: u32) -> Check {
    runner(cases)
        .run(&arb_triple(), |t| {
            let flat = flatten(&t, registry()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let back = parse_flattened(&flat.tokens, registry()).map_err(|e| TestCaseError::fail(e.to_string()))?;
            prop_assert_eq!(back, t);
            Ok(())
        })
        .map(|()| format!("{cases} random triples roundtrip"))
        .map_err(|e| e.to_string())
}

fn arb_token() -> impl Strategy<Value = String> {
    let rels: Vec<String> = registry().iter().map(|r| r.as_str().to_string()).collect();
    prop_oneof![
        prop::sample::select(vec!["[HEAD]", "[RELN]", "[TAIL]", "[SEP]", "[EOS]", "[UNK]", "", "[", "]", "[x]", "[[have_pet]]"])
            .prop_map(str::to_string),
        prop::sample::select(rels),
        word(),
        any::<String>(),
    ]
}

/// Fully random token lists, or valid flattened triples with a few random
/// insertions, deletions and substitutions.
fn arb_sequence() -> impl Strategy<Value = Vec<String>> {
    let edits = prop::collection::vec((0..3u8, any::<prop::sample::Index>(), arb_token()), 0..3);
    prop_oneof![
        prop::collection::vec(arb_token(), 0..12),
        (arb_triple(), edits).prop_map(|(t, edits)| {
            let mut toks = flatten(&t, registry()).unwrap().tokens;
            for (op, at, tok) in edits {
                let i = at.index(toks.len() + 1);
                match op {
                    0 => toks.insert(i, tok),
                    1 if i < toks.len() => {
                        toks.remove(i);
                    }
                    _ if i < toks.len() => toks[i] = tok,
                    _ => {}
                }
            }
            toks
        }),
    ]
}

/// The parser never panics, and whatever it accepts flattens back to the
/// same tokens.
pub fn parse_totality(cases: u32) -> Check {
    let accepted = AtomicUsize::new(0);
    runner(cases)
        .run(&arb_sequence(), |toks| {
            if let Ok(t) = parse_flattened(&toks, registry()) {
                accepted.fetch_add(1, Ordering::Relaxed);
                let again = flatten(&t, registry()).map_err(|e| TestCaseError::fail(e.to_string()))?;
                prop_assert_eq!(parse_flattened(&again.tokens, registry()).ok(), Some(t));
            }
            Ok(())
        })
        .map(|()| format!("{cases} random sequences, {} parsed, no panics", accepted.into_inner()))
        .map_err(|e| e.to_string())
}

/// Independent token-window oracle for span containment.
pub fn window_contains(sentence: &[String], entity: &[String]) -> bool {
    let hay = format!(" {} ", sentence.join(" "));
    let needle = format!(" {} ", entity.join(" "));
    !entity.is_empty() && hay.contains(&needle)
}

pub fn span_containment(cases: u32) -> Check {
    let words = prop::sample::select(vec!["i", "have", "a", "dog", "cat", "cats", "my", "new", "york", "work", "as"]);
    let strat = (prop::collection::vec(words.clone(), 1..10), prop::collection::vec(words, 1..3), any::<bool>(), any::<prop::sample::Index>());
    runner(cases)
        .run(&strat, |(sentence, entity, take_slice, at)| {
            let sentence: Vec<String> = sentence.into_iter().map(str::to_string).collect();
            let entity: Vec<String> = if take_slice {
                let start = at.index(sentence.len());
                let end = (start + entity.len()).min(sentence.len());
                sentence[start..end].to_vec()
            } else {
                entity.into_iter().map(str::to_string).collect()
            };
            let got = persona_attr::dataset::is_span_contained(&sentence.join(" "), &entity.join(" "));
            prop_assert_eq!(got, window_contains(&sentence, &entity));
            Ok(())
        })
        .map(|()| format!("{cases} random pairs agree with the window oracle"))
        .map_err(|e| e.to_string())
}

/// Constrained toy decodes obey the task masks and the relation registry.
pub fn mask_soundness(sentences: usize) -> Check {
    let mut audited = 0;
    let mut candidates = 0;
    let mut violations = Vec::new();
    for task in [Task::Extraction, Task::Inference] {
        let toy = Toy::new(task);
        let pool: Vec<Sample> = [&toy.test, &toy.dev, &toy.train].into_iter().flatten().cloned().collect();
        let take = (sentences / 2).min(pool.len());
        let samples = &pool[..take];
        audited += take;
        for (set, s) in toy.decode(samples, true).iter().zip(samples) {
            let words: BTreeSet<String> = s.sentence_tokens().into_iter().collect();
            for c in &set.candidates {
                candidates += 1;
                let Some(t) = &c.triple else {
                    violations.push(format!("{}: malformed {:?}", s.source_id, c.tokens));
                    continue;
                };
                if !registry().contains(t.relation.as_str()) {
                    violations.push(format!("{}: relation {}", s.source_id, t.relation));
                }
                match task {
                    Task::Extraction => {
                        if !t.tail.iter().chain(&t.head).all(|w| words.contains(w)) {
                            violations.push(format!("{}: entity outside sentence {:?}", s.source_id, c.tokens));
                        }
                    }
                    Task::Inference => {
                        if !toy.index.contains(t.relation.as_str(), &t.tail) {
                            violations.push(format!("{}: pair not indexed {:?}", s.source_id, c.tokens));
                        }
                    }
                }
            }
        }
    }
    if violations.is_empty() {
        Ok(format!("{audited} sentences, {candidates} candidates, 0 violations"))
    } else {
        Err(format!("{} violations, first: {}", violations.len(), violations[0]))
    }
}

fn small_triple(i: usize) -> Triple {
    let rels = relations();
    let tails = ["dog", "cat", "pizza", "nurse", "tall"];
    Triple::from_tokens(vec!["i".into()], rels[i % 3].clone(), vec![tails[(i / 3) % tails.len()].into()]).unwrap()
}

fn gold(i: usize, triple: Triple) -> Sample {
    Sample {
        source_id: format!("s{i}"),
        sentence: "i said something".into(),
        gold: triple,
        task: Task::Extraction,
        split: Split::Test,
    }
}

fn arb_sets() -> impl Strategy<Value = (Vec<Sample>, Vec<CandidateSet>)> {
    prop::collection::vec((0..15usize, prop::collection::vec(prop::option::weighted(0.9, 0..15usize), 0..10)), 1..20).prop_map(
        |rows| {
            let mut golds = Vec::new();
            let mut sets = Vec::new();
            for (i, (g, cands)) in rows.into_iter().enumerate() {
                golds.push(gold(i, small_triple(g)));
                let candidates = cands
                    .into_iter()
                    .enumerate()
                    .map(|(r, c)| Candidate {
                        tokens: vec![],
                        generator_score: -(r as f64),
                        triple: c.map(small_triple),
                        rank: r + 1,
                    })
                    .collect();
                sets.push(CandidateSet { source_id: format!("s{i}"), candidates });
            }
            (golds, sets)
        },
    )
}

pub fn recall_monotone(cases: u32) -> Check {
    runner(cases)
        .run(&arb_sets(), |(golds, sets)| {
            let mut prev = 0.0;
            for k in 1..=12 {
                let r = max_possible_recall(&sets, &golds, k);
                prop_assert!(r >= prev, "recall@{} = {} < {}", k, r, prev);
                prev = r;
            }
            Ok(())
        })
        .map(|()| format!("{cases} random candidate collections, k = 1..12"))
        .map_err(|e| e.to_string())
}

/// Brute-force counts, written without reference to the library.
fn oracle_prf(preds: &[Option<Option<Triple>>], golds: &[Sample]) -> (usize, usize, usize, f64, f64, f64) {
    let mut tp = 0;
    let mut predicted = 0;
    for (p, g) in preds.iter().zip(golds) {
        if let Some(Some(t)) = p {
            predicted += 1;
            if *t == g.gold {
                tp += 1;
            }
        }
    }
    let p = if predicted == 0 { 0.0 } else { tp as f64 / predicted as f64 };
    let r = tp as f64 / golds.len() as f64;
    let f = if p + r == 0.0 { 0.0 } else { 2.0 * p * r / (p + r) };
    (tp, predicted, golds.len(), p, r, f)
}

pub fn prf_oracle(cases: u32) -> Check {
    // per gold: missing prediction, abstention, or a triple from a small pool
    let strat = prop::collection::vec((0..15usize, prop::option::of(prop::option::of(0..15usize))), 1..12);
    runner(cases)
        .run(&strat, |rows| {
            let golds: Vec<Sample> = rows.iter().enumerate().map(|(i, (g, _))| gold(i, small_triple(*g))).collect();
            let choice: Vec<Option<Option<Triple>>> =
                rows.iter().map(|(_, p)| p.map(|x| x.map(small_triple))).collect();
            let preds: Vec<Prediction> = choice
                .iter()
                .enumerate()
                .filter_map(|(i, p)| {
                    p.as_ref().map(|t| Prediction {
                        source_id: format!("s{i}"),
                        triple: t.clone(),
                        rerank_score: None,
                        generator_score: None,
                    })
                })
                .collect();
            let got = micro_prf(&preds, &golds).map_err(|e| TestCaseError::fail(e.to_string()))?;
            let (tp, predicted, n, p, r, f) = oracle_prf(&choice, &golds);
            prop_assert_eq!((got.true_positives, got.predicted, got.gold), (tp, predicted, n));
            prop_assert_eq!((got.precision, got.recall, got.f1), (p, r, f));
            Ok(())
        })
        .map(|()| format!("{cases} random instances match the counting oracle exactly"))
        .map_err(|e| e.to_string())
}

/// Selecting with gold-label scores recovers exactly the top-L ceiling.
pub fn oracle_identity() -> Check {
    let mut out = Vec::new();
    for task in [Task::Extraction, Task::Inference] {
        let toy = Toy::new(task);
        let sets = toy.decode(&toy.test, true);
        let preds = select_all(&sets, &toy.test, &OracleReranker::new(&toy.test)).map_err(|e| e.to_string())?;
        let recall = micro_prf(&preds, &toy.test).map_err(|e| e.to_string())?.recall;
        let ceiling = max_possible_recall(&sets, &toy.test, 10);
        if recall != ceiling {
            return Err(format!("{task}: oracle recall {recall} != ceiling {ceiling}"));
        }
        out.push(format!("{task} {:.1}", 100.0 * recall));
    }
    Ok(format!("oracle recall == recall@10 ({})", out.join(", ")))
}
