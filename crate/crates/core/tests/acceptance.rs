//! Acceptance report: one PASS / FAIL / SKIP line per criterion.
//!
//! Corpus-dependent criteria run when `PERSONA_ATTR_CORPUS_DIR` points at a
//! directory holding the raw train/dev/test splits; the analysis criterion
//! also needs `PERSONA_ATTR_RESOURCES`.

mod common;

use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use common::{props, registry, Toy};
use persona_attr::analysis::{load_resource_dir, transformation_coverage, ResourceKind};
use persona_attr::dataset::{build, compute_stats, read_raw_split, BuiltDatasets};
use persona_attr::decode::RelationTailIndex;
use persona_attr::eval::micro_prf;
use persona_attr::pipeline::{run_variant, split_of, Variant};
use persona_attr::synthetic::template_count;
use persona_attr::{Split, Task};

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
    NotRun(String),
}

struct Report {
    lines: Vec<(String, Outcome)>,
}

impl Report {
    fn record(&mut self, name: &str, outcome: Outcome) {
        let (tag, detail) = match &outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => ("FAIL", d),
            Outcome::Skip(d) => ("SKIP", d),
            Outcome::NotRun(d) => ("NOT RUN", d),
        };
        println!("{tag:<8} {name}: {detail}");
        self.lines.push((name.to_string(), outcome));
    }

    fn failures(&self) -> Vec<&str> {
        self.lines.iter().filter(|(_, o)| matches!(o, Outcome::Fail(_))).map(|(n, _)| n.as_str()).collect()
    }
}

fn within(value: f64, target: f64, tol: f64) -> bool {
    (value - target).abs() <= tol
}

fn timed(limit: Duration, start: Instant, result: Result<String, String>) -> Outcome {
    let took = start.elapsed();
    match result {
        Ok(d) if took <= limit => Outcome::Pass(format!("{d} [{:.1}s]", took.as_secs_f64())),
        Ok(d) => Outcome::Fail(format!("{d} but took {:.0}s", took.as_secs_f64())),
        Err(e) => Outcome::Fail(e),
    }
}

fn property_suite() -> Result<String, String> {
    let checks = [
        ("roundtrip", props::roundtrip(1_000)),
        ("parse totality", props::parse_totality(10_000)),
        ("mask soundness", props::mask_soundness(500)),
        ("recall@k monotone", props::recall_monotone(256)),
        ("P/R/F1 oracle", props::prf_oracle(200)),
        ("oracle identity", props::oracle_identity()),
    ];
    let mut parts = Vec::new();
    for (name, check) in checks {
        parts.push(format!("{name}: {}", check.map_err(|e| format!("{name}: {e}"))?));
    }
    Ok(parts.join("; "))
}

fn synthetic_end_to_end() -> Result<String, String> {
    let templates = template_count();
    if templates < 200 {
        return Err(format!("only {templates} templates"));
    }
    let mut parts = vec![format!("{templates} templates")];
    for task in [Task::Extraction, Task::Inference] {
        let toy = Toy::new(task);
        let reranker = toy.reranker();
        let decode = persona_attr::decode::DecodeConfig::for_task(task);
        let f1 = |v: Variant| -> Result<f64, String> {
            let preds = run_variant(v, &toy.scorer, &reranker, &toy.test, &decode, &toy.index, registry())
                .map_err(|e| e.to_string())?;
            Ok(micro_prf(&preds, &toy.test).map_err(|e| e.to_string())?.f1)
        };
        let (full, free, top1) = (f1(Variant::Full)?, f1(Variant::NoConstraints)?, f1(Variant::NoReranker)?);
        let line = format!(
            "{task} full {:.1} / no-reranker {:.1} / no-constraints {:.1}",
            100.0 * full,
            100.0 * top1,
            100.0 * free
        );
        if !(full > top1 && full > free) {
            return Err(line);
        }
        parts.push(line);
    }
    Ok(parts.join("; "))
}

fn raw_file(dir: &Path, split: Split) -> Option<PathBuf> {
    let s = split.as_str();
    [format!("{s}.jsonl"), format!("{s}.json"), format!("dialogue_nli_{s}.jsonl"), format!("dialogue_nli_{s}.json")]
        .into_iter()
        .map(|n| dir.join(n))
        .find(|p| p.is_file())
}

fn load_corpus() -> Option<Result<BuiltDatasets, String>> {
    let dir = PathBuf::from(std::env::var_os("PERSONA_ATTR_CORPUS_DIR")?);
    let mut raw = Vec::new();
    for split in Split::ALL {
        let Some(path) = raw_file(&dir, split) else {
            return Some(Err(format!("no {split} split under {}", dir.display())));
        };
        match read_raw_split(&path, split) {
            Ok(r) => raw.extend(r),
            Err(e) => return Some(Err(e.to_string())),
        }
    }
    Some(build(&raw, registry(), true).map_err(|e| e.to_string()))
}

fn dataset_reconstruction(built: &BuiltDatasets) -> Result<String, String> {
    let targets = [(Task::Extraction, [22911, 2676, 2746]), (Task::Inference, [25328, 2658, 2452])];
    let mut parts = Vec::new();
    let mut ok = true;
    let mut heads = (0.0, 0);
    for (task, sizes) in targets {
        let data = built.task(task);
        let st = compute_stats(data);
        for (got, want) in [st.train, st.dev, st.test].into_iter().zip(sizes) {
            ok &= within(got as f64, want as f64, 0.01 * want as f64);
            parts.push(format!("{task} {got}/{want}"));
        }
        heads.0 += st.head_i_share * data.len() as f64;
        heads.1 += data.len();
    }
    let share = 100.0 * heads.0 / heads.1.max(1) as f64;
    ok &= within(share, 93.3, 1.0);
    parts.push(format!("head \"i\" {share:.1}% vs 93.3%"));
    let line = parts.join(", ");
    if ok {
        Ok(line)
    } else {
        Err(line)
    }
}

fn index_ceiling(built: &BuiltDatasets) -> Result<String, String> {
    let data = built.task(Task::Inference);
    let index = RelationTailIndex::build(&split_of(data, Split::Train));
    let ceiling = 100.0 * index.max_possible_recall(&split_of(data, Split::Test));
    let line = format!("{ceiling:.1} vs 75.7");
    if within(ceiling, 75.7, 2.0) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn analysis_reproduction(built: &BuiltDatasets, resources: &Path) -> Result<String, String> {
    let tables = load_resource_dir(resources, &ResourceKind::ALL).map_err(|e| e.to_string())?;
    let rep = transformation_coverage(built.task(Task::Inference), &tables);
    let same = rep.rows[0].percent;
    let line = format!(
        "same_stem {same:.1} vs 43.3, not directly identifiable {:.1} vs 79.2",
        rep.not_directly_identifiable
    );
    if within(same, 43.3, 3.0) && within(rep.not_directly_identifiable, 79.2, 2.0) {
        Ok(line)
    } else {
        Err(line)
    }
}

fn main() {
    let mut report = Report { lines: Vec::new() };

    let t = Instant::now();
    let r = property_suite();
    report.record("property suite", timed(Duration::from_secs(300), t, r));

    let t = Instant::now();
    let r = synthetic_end_to_end();
    report.record("synthetic end-to-end", timed(Duration::from_secs(900), t, r));

    match load_corpus() {
        None => {
            let why = "PERSONA_ATTR_CORPUS_DIR not set; source corpus unavailable".to_string();
            report.record("dataset reconstruction", Outcome::Skip(why.clone()));
            report.record("index ceiling", Outcome::Skip(why.clone()));
            report.record("analysis reproduction", Outcome::Skip(why));
        }
        Some(Err(e)) => {
            for name in ["dataset reconstruction", "index ceiling", "analysis reproduction"] {
                report.record(name, Outcome::Fail(e.clone()));
            }
        }
        Some(Ok(built)) => {
            let t = Instant::now();
            let r = dataset_reconstruction(&built);
            report.record("dataset reconstruction", timed(Duration::from_secs(600), t, r));
            report.record("index ceiling", timed(Duration::MAX, Instant::now(), index_ceiling(&built)));
            match std::env::var_os("PERSONA_ATTR_RESOURCES") {
                Some(dir) => {
                    let r = analysis_reproduction(&built, Path::new(&dir));
                    report.record("analysis reproduction", timed(Duration::MAX, Instant::now(), r));
                }
                None => report.record(
                    "analysis reproduction",
                    Outcome::Skip("PERSONA_ATTR_RESOURCES not set".into()),
                ),
            }
        }
    }

    report.record(
        "pretrained generator and reranker",
        Outcome::NotRun("extended criterion; needs pretrained models and an accelerator".into()),
    );

    let failed = report.failures();
    if !failed.is_empty() {
        eprintln!("failed criteria: {failed:?}");
        std::process::exit(1);
    }
}
