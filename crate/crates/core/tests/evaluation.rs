mod common;

use common::registry;
use persona_attr::eval::{micro_prf, per_relation_report, Prediction};
use persona_attr::{Sample, Split, Task, Triple};

fn sample(i: usize, r: &str, t: &str) -> Sample {
    Sample {
        source_id: format!("s{i}"),
        sentence: "i said something".into(),
        gold: Triple::new("i", r, t, registry()).unwrap(),
        task: Task::Inference,
        split: Split::Test,
    }
}

fn pred(i: usize, triple: Option<Triple>) -> Prediction {
    Prediction { source_id: format!("s{i}"), triple, rerank_score: None, generator_score: None }
}

fn fixture() -> (Vec<Sample>, Vec<Prediction>) {
    let rels = ["[have_pet]", "[like_food]", "[has_profession]"];
    let tails = ["dog", "pizza", "nurse", "cat", "sushi"];
    let golds: Vec<Sample> = (0..10).map(|i| sample(i, rels[i % 3], tails[i % 5])).collect();
    // 3 correct, 5 wrong, 2 abstentions
    let preds = (0..10)
        .map(|i| match i {
            0..=2 => pred(i, Some(golds[i].gold.clone())),
            3..=7 => pred(i, Some(Triple::new("i", rels[(i + 1) % 3], "tea", registry()).unwrap())),
            _ => pred(i, None),
        })
        .collect();
    (golds, preds)
}

#[test]
fn hand_counted_instance() {
    let (golds, preds) = fixture();
    let prf = micro_prf(&preds, &golds).unwrap();
    assert_eq!(prf.precision, 3.0 / 8.0);
    assert_eq!(prf.recall, 3.0 / 10.0);
    let f1 = 2.0 * (3.0 / 8.0) * (3.0 / 10.0) / (3.0 / 8.0 + 3.0 / 10.0);
    assert!((prf.f1 - f1).abs() < 1e-15);
}

#[test]
fn relation_rows_reconcile_with_micro_counts() {
    let (golds, preds) = fixture();
    let micro = micro_prf(&preds, &golds).unwrap();
    let rows = per_relation_report(&preds, &golds).unwrap();
    let sum = |f: fn(&persona_attr::eval::RelationRow) -> usize| rows.iter().map(f).sum::<usize>();
    assert_eq!(sum(|r| r.prf.true_positives), micro.true_positives);
    assert_eq!(sum(|r| r.prf.predicted), micro.predicted);
    assert_eq!(sum(|r| r.prf.gold), micro.gold);
    // relations seen in neither golds nor predictions get no row
    assert!(rows.iter().all(|r| r.relation != "[like_music]"));
}

#[test]
fn consistent_retokenization_preserves_scores() {
    let (golds, preds) = fixture();
    let remap = |t: &Triple| Triple {
        head: t.head.iter().map(|w| format!("{w}x")).collect(),
        relation: t.relation.clone(),
        tail: t.tail.iter().rev().map(|w| format!("x{w}")).collect(),
    };
    let golds2: Vec<Sample> = golds.iter().map(|g| Sample { gold: remap(&g.gold), ..g.clone() }).collect();
    let preds2: Vec<Prediction> = preds.iter().map(|p| Prediction { triple: p.triple.as_ref().map(remap), ..p.clone() }).collect();
    assert_eq!(micro_prf(&preds, &golds).unwrap(), micro_prf(&preds2, &golds2).unwrap());
}

#[test]
fn perfect_predictions_score_one() {
    let (golds, _) = fixture();
    let preds: Vec<Prediction> = golds.iter().enumerate().map(|(i, g)| pred(i, Some(g.gold.clone()))).collect();
    let prf = micro_prf(&preds, &golds).unwrap();
    assert_eq!((prf.precision, prf.recall, prf.f1), (1.0, 1.0, 1.0));
}
