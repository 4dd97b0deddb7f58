//! One function per subcommand.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use log::info;
use persona_attr::analysis::{
    load_resource_dir, non_noun_share, read_parses, render_coverage, render_histogram, tail_dependency_distribution,
    tail_pos_distribution, transformation_coverage, ResourceKind,
};
use persona_attr::dataset::{build, compute_stats, read_raw_split, render_stats_table};
use persona_attr::decode::{
    build_relation_tail_index, decode_samples, from_records, max_possible_recall, to_records, CandidateSet,
    RelationTailIndex,
};
use persona_attr::eval::{evaluate, micro_prf, render_report, significance, Prediction, PredictionRecord};
use persona_attr::generator::{save_checkpoint, train_generator};
use persona_attr::io::{read_jsonl, read_samples, write_jsonl, write_samples};
use persona_attr::loglinear::LogLinearScorer;
use persona_attr::manifest::{check_upstream, config_hash, ManifestBuilder};
use persona_attr::pipeline::{build_vocabulary, run_variant, Variant};
use persona_attr::rerank::{build_rerank_dataset, select_all, select_top, train_reranker, Reranker};
use persona_attr::synthetic::{generate, write_split, SyntheticConfig};
use persona_attr::{Error, RelationRegistry, Sample, Split, Task};
use serde::Serialize;

use crate::config::{ConfigError, PipelineConfig};
use crate::layout::{raw_split_file, Layout};

pub struct Ctx {
    pub cfg: PipelineConfig,
    pub seeds: Vec<u64>,
    pub args: Vec<String>,
    pub layout: Layout,
    pub registry: RelationRegistry,
}

impl Ctx {
    pub fn new(cfg: PipelineConfig, seeds: Vec<u64>, args: Vec<String>) -> Result<Self> {
        let work = &cfg.paths.work_dir;
        std::fs::create_dir_all(work).with_context(|| format!("creating work dir {}", work.display()))?;
        let root = work.canonicalize()?;
        Ok(Self { cfg, seeds, args, layout: Layout { root }, registry: RelationRegistry::bundled() })
    }

    /// Record `inputs` and refuse to run if any upstream artifact changed.
    fn begin(&self, command: &str, inputs: &[PathBuf]) -> Result<ManifestBuilder> {
        let mut m = ManifestBuilder::new(command, self.args.clone(), config_hash(&self.cfg)?, self.seeds.clone());
        for p in inputs {
            m.input(p)?;
        }
        check_upstream(&self.layout.root, m.inputs())?;
        Ok(m)
    }

    fn finish(&self, mut m: ManifestBuilder, outputs: &[PathBuf]) -> Result<()> {
        for p in outputs {
            m.output(p)?;
        }
        m.finish(&self.layout.root)?;
        Ok(())
    }

    fn samples(&self, task: Task, split: Split) -> Result<Vec<Sample>> {
        Ok(read_samples(&self.layout.samples(task, split), &self.registry)?)
    }

    fn index(&self, task: Task) -> Result<RelationTailIndex> {
        Ok(build_relation_tail_index(&self.samples(task, Split::Train)?))
    }

    fn candidates(&self, path: &Path) -> Result<Vec<CandidateSet>> {
        Ok(from_records(read_jsonl(path)?, &self.registry))
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n")
        .with_context(|| format!("writing {}", path.display()))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn write_predictions(path: &Path, preds: &[Prediction]) -> Result<()> {
    Ok(write_jsonl(path, preds.iter().map(Prediction::to_record))?)
}

pub fn synth(ctx: &Ctx, out: Option<PathBuf>, corpus: SyntheticConfig) -> Result<()> {
    let out = out.unwrap_or_else(|| ctx.layout.root.join("raw"));
    let m = ctx.begin("synth", &[])?;
    let records = generate(&corpus);
    let mut outputs = Vec::new();
    for split in Split::ALL {
        let path = out.join(format!("{split}.jsonl"));
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent)?;
        }
        write_split(&path, &records, split)?;
        outputs.push(path);
    }
    ctx.finish(m, &outputs)?;
    println!("wrote {} raw records to {}", records.len(), out.display());
    Ok(())
}

pub fn build_dataset(ctx: &Ctx, raw: Option<PathBuf>) -> Result<()> {
    let raw = raw
        .or_else(|| ctx.cfg.paths.raw.clone())
        .ok_or_else(|| ConfigError("no raw corpus directory: set paths.raw or pass --raw".into()))?;
    let mut files = Vec::new();
    for split in Split::ALL {
        let f = raw_split_file(&raw, split).ok_or_else(|| Error::MissingInput(raw.join(format!("{split}.jsonl"))))?;
        files.push((split, f));
    }
    let m = ctx.begin("build-dataset", &files.iter().map(|(_, f)| f.clone()).collect::<Vec<_>>())?;
    let mut records = Vec::new();
    for (split, f) in &files {
        records.extend(read_raw_split(f, *split)?);
    }
    let built = build(&records, &ctx.registry, ctx.cfg.dataset.dedup)?;
    let mut outputs = Vec::new();
    for task in [Task::Extraction, Task::Inference] {
        for split in Split::ALL {
            let path = ctx.layout.samples(task, split);
            let rows: Vec<Sample> = built.task(task).iter().filter(|s| s.split == split).cloned().collect();
            if let Some(parent) = path.parent() {
                std::fs::create_dir_all(parent)?;
            }
            write_samples(&path, &rows)?;
            outputs.push(path);
        }
    }
    let ext = compute_stats(&built.extraction);
    let inf = compute_stats(&built.inference);
    let table = render_stats_table(&ext, &inf);
    let stats_txt = ctx.layout.data_dir().join("stats.txt");
    let stats_json = ctx.layout.data_dir().join("stats.json");
    write_text(&stats_txt, &table)?;
    write_json(
        &stats_json,
        &serde_json::json!({ "extraction": ext, "inference": inf, "build": built.report }),
    )?;
    outputs.extend([stats_txt, stats_json]);
    ctx.finish(m, &outputs)?;
    print!("{table}");
    println!("kept {} of {} raw records", built.report.kept, built.report.raw_records);
    Ok(())
}

fn task_data(ctx: &Ctx, task: Task) -> Vec<PathBuf> {
    Split::ALL.iter().map(|&s| ctx.layout.samples(task, s)).collect()
}

pub fn train_generator_cmd(ctx: &Ctx, task: Task) -> Result<()> {
    for &seed in &ctx.seeds {
        ctx.cfg.generator(task, seed).validate().map_err(|e| ConfigError(e.to_string()))?;
    }
    let m = ctx.begin("train-generator", &task_data(ctx, task))?;
    let train = ctx.samples(task, Split::Train)?;
    let dev = ctx.samples(task, Split::Dev)?;
    let test = ctx.samples(task, Split::Test)?;
    let index = build_relation_tail_index(&train);
    let mut outputs = Vec::new();
    for &seed in &ctx.seeds {
        let gcfg = ctx.cfg.generator(task, seed);
        let vocab = build_vocabulary(&ctx.registry, &[&train, &dev, &test]);
        info!("training {task} generator, seed {seed}, {} train samples", train.len());
        let trained = train_generator(&train, &dev, vocab, &ctx.registry, &index, &gcfg)?;
        let dir = ctx.layout.generator(task, seed);
        save_checkpoint(&dir, &trained, &gcfg)?;
        match &trained.best {
            Some(b) => println!(
                "seed {seed}: {} steps, best at step {} (dev F1 {}, dev loss {})",
                trained.steps,
                b.step,
                b.dev_f1.map_or("-".into(), |f| format!("{:.1}", 100.0 * f)),
                b.dev_loss.map_or("-".into(), |l| format!("{l:.3}"))
            ),
            None => println!("seed {seed}: {} steps, no validation data", trained.steps),
        }
        outputs.push(dir);
    }
    ctx.finish(m, &outputs)
}

pub fn decode_cmd(ctx: &Ctx, task: Task, splits: &[Split], free: bool) -> Result<()> {
    let mut inputs = vec![ctx.layout.samples(task, Split::Train)];
    inputs.extend(splits.iter().map(|&s| ctx.layout.samples(task, s)));
    inputs.extend(ctx.seeds.iter().map(|&seed| ctx.layout.generator(task, seed)));
    inputs.dedup();
    let dcfg = ctx.cfg.decode(task, !free);
    dcfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    let m = ctx.begin("decode", &inputs)?;
    let index = ctx.index(task)?;
    let mut outputs = Vec::new();
    for &seed in &ctx.seeds {
        let model = LogLinearScorer::load(&ctx.layout.generator(task, seed))?;
        for &split in splits {
            let samples = ctx.samples(task, split)?;
            let sets = decode_samples(&model, &samples, &dcfg, &index, &ctx.registry)?;
            let path = ctx.layout.candidates(task, seed, split, free);
            write_jsonl(&path, to_records(&sets))?;
            println!(
                "seed {seed} {split}: {} sets, recall@{} {:.1}",
                sets.len(),
                dcfg.candidates,
                100.0 * max_possible_recall(&sets, &samples, dcfg.candidates)
            );
            outputs.push(path);
        }
    }
    ctx.finish(m, &outputs)
}

pub fn train_reranker_cmd(ctx: &Ctx, task: Task) -> Result<()> {
    let mut inputs = vec![ctx.layout.samples(task, Split::Train), ctx.layout.samples(task, Split::Dev)];
    for &seed in &ctx.seeds {
        inputs.push(ctx.layout.candidates(task, seed, Split::Train, false));
        inputs.push(ctx.layout.candidates(task, seed, Split::Dev, false));
    }
    let m = ctx.begin("train-reranker", &inputs)?;
    let train = ctx.samples(task, Split::Train)?;
    let dev = ctx.samples(task, Split::Dev)?;
    let mut outputs = Vec::new();
    for &seed in &ctx.seeds {
        let train_ex = build_rerank_dataset(&ctx.candidates(&ctx.layout.candidates(task, seed, Split::Train, false))?, &train)?;
        let dev_ex = build_rerank_dataset(&ctx.candidates(&ctx.layout.candidates(task, seed, Split::Dev, false))?, &dev)?;
        let rcfg = ctx.cfg.reranker(seed);
        info!("training {task} reranker, seed {seed}, {} examples", train_ex.len());
        let trained = train_reranker(&train_ex, &dev_ex, &rcfg)?;
        let dir = ctx.layout.reranker(task, seed);
        trained.model.save(&dir.join("reranker.bin"))?;
        write_json(&dir.join("config.json"), &rcfg)?;
        write_jsonl(&dir.join("metrics.jsonl"), &trained.history)?;
        let run = ctx.layout.run_dir(task, seed);
        write_jsonl(&run.join("rerank.train.jsonl"), &train_ex)?;
        write_jsonl(&run.join("rerank.dev.jsonl"), &dev_ex)?;
        if let Some(b) = &trained.best {
            println!(
                "seed {seed}: {} steps, best dev selection accuracy {:.1} at step {}",
                trained.steps,
                100.0 * b.dev_selection_accuracy,
                b.step
            );
        }
        outputs.extend([dir, run.join("rerank.train.jsonl"), run.join("rerank.dev.jsonl")]);
    }
    ctx.finish(m, &outputs)
}

pub fn predict_cmd(ctx: &Ctx, task: Task, split: Split, no_reranker: bool) -> Result<()> {
    let mut inputs = vec![ctx.layout.samples(task, split)];
    for &seed in &ctx.seeds {
        inputs.push(ctx.layout.candidates(task, seed, split, false));
        if !no_reranker {
            inputs.push(ctx.layout.reranker(task, seed).join("reranker.bin"));
        }
    }
    let m = ctx.begin("predict", &inputs)?;
    let samples = ctx.samples(task, split)?;
    let mut outputs = Vec::new();
    for &seed in &ctx.seeds {
        let sets = ctx.candidates(&ctx.layout.candidates(task, seed, split, false))?;
        let preds = if no_reranker {
            sets.iter().map(select_top).collect()
        } else {
            let reranker = Reranker::load(&ctx.layout.reranker(task, seed).join("reranker.bin"))?;
            select_all(&sets, &samples, &reranker)?
        };
        let path = ctx.layout.predictions(task, seed, split, no_reranker);
        write_predictions(&path, &preds)?;
        let prf = micro_prf(&preds, &samples)?;
        println!("seed {seed} {split}: F1 {:.1}", 100.0 * prf.f1);
        outputs.push(path);
    }
    ctx.finish(m, &outputs)
}

pub struct EvaluateArgs {
    pub pred: PathBuf,
    pub gold: PathBuf,
    pub candidates: Option<PathBuf>,
    pub recall_at: Option<usize>,
    pub per_relation: bool,
    pub out: Option<PathBuf>,
}

pub fn evaluate_cmd(ctx: &Ctx, a: EvaluateArgs) -> Result<()> {
    let mut inputs = vec![a.pred.clone(), a.gold.clone()];
    inputs.extend(a.candidates.clone());
    let m = ctx.begin("evaluate", &inputs)?;
    let golds = read_samples(&a.gold, &ctx.registry)?;
    let preds = read_jsonl::<PredictionRecord>(&a.pred)?
        .into_iter()
        .map(|r| Prediction::from_record(r, &ctx.registry))
        .collect::<persona_attr::Result<Vec<_>>>()?;
    let sets = a.candidates.as_deref().map(|p| ctx.candidates(p)).transpose()?;
    if a.recall_at.is_some() && sets.is_none() {
        bail!(ConfigError("--recall-at needs --candidates".into()));
    }
    let k = a.recall_at.unwrap_or(ctx.cfg.decode.candidates);
    let report = evaluate(&preds, &golds, sets.as_deref(), k)?;
    print!("{}", render_report(&report, a.per_relation));
    if let Some(out) = &a.out {
        write_json(out, &report)?;
        ctx.finish(m, std::slice::from_ref(out))?;
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct AblationRecord {
    seed: u64,
    variant: Variant,
    precision: f64,
    recall: f64,
    f1: f64,
}

pub fn ablate_cmd(ctx: &Ctx, task: Task, split: Split) -> Result<()> {
    let mut inputs = vec![ctx.layout.samples(task, Split::Train), ctx.layout.samples(task, split)];
    for &seed in &ctx.seeds {
        inputs.push(ctx.layout.generator(task, seed));
        inputs.push(ctx.layout.reranker(task, seed).join("reranker.bin"));
    }
    inputs.dedup();
    let dcfg = ctx.cfg.decode(task, true);
    dcfg.validate().map_err(|e| ConfigError(e.to_string()))?;
    let m = ctx.begin("ablate", &inputs)?;
    let index = ctx.index(task)?;
    let samples = ctx.samples(task, split)?;
    let mut rows = Vec::new();
    let mut outputs = Vec::new();
    for &seed in &ctx.seeds {
        let model = LogLinearScorer::load(&ctx.layout.generator(task, seed))?;
        let reranker = Reranker::load(&ctx.layout.reranker(task, seed).join("reranker.bin"))?;
        for variant in Variant::ALL {
            let preds = run_variant(variant, &model, &reranker, &samples, &dcfg, &index, &ctx.registry)?;
            let path = ctx.layout.run_dir(task, seed).join("ablation").join(format!("{variant}.{split}.jsonl"));
            write_predictions(&path, &preds)?;
            outputs.push(path);
            let prf = micro_prf(&preds, &samples)?;
            rows.push(AblationRecord { seed, variant, precision: prf.precision, recall: prf.recall, f1: prf.f1 });
        }
    }
    let table = render_ablation_summary(&rows)?;
    let jsonl = ctx.layout.ablation(task, split, "jsonl");
    let txt = ctx.layout.ablation(task, split, "txt");
    write_jsonl(&jsonl, &rows)?;
    write_text(&txt, &table)?;
    outputs.extend([jsonl, txt]);
    ctx.finish(m, &outputs)?;
    print!("{table}");
    Ok(())
}

fn render_ablation_summary(rows: &[AblationRecord]) -> Result<String> {
    let mut by_variant: BTreeMap<usize, (Variant, Vec<&AblationRecord>)> = BTreeMap::new();
    for r in rows {
        let pos = Variant::ALL.iter().position(|v| *v == r.variant).unwrap_or(usize::MAX);
        by_variant.entry(pos).or_insert((r.variant, Vec::new())).1.push(r);
    }
    let seeds = by_variant.values().next().map_or(0, |v| v.1.len());
    let mut out = format!("{:<16} {:>6} {:>6} {:>6} {:>6}  ({seeds} seeds)\n", "variant", "P", "R", "F1", "sd");
    let mean = |x: &[f64]| x.iter().sum::<f64>() / x.len().max(1) as f64;
    let f1s = |rs: &[&AblationRecord]| rs.iter().map(|r| 100.0 * r.f1).collect::<Vec<_>>();
    for (variant, rs) in by_variant.values() {
        let f = f1s(rs);
        let m = mean(&f);
        let sd = if f.len() > 1 {
            (f.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (f.len() - 1) as f64).sqrt()
        } else {
            0.0
        };
        out.push_str(&format!(
            "{:<16} {:>6.1} {:>6.1} {:>6.1} {:>6.2}\n",
            variant.as_str(),
            mean(&rs.iter().map(|r| 100.0 * r.precision).collect::<Vec<_>>()),
            mean(&rs.iter().map(|r| 100.0 * r.recall).collect::<Vec<_>>()),
            m,
            sd
        ));
    }
    if seeds >= 2 {
        if let Some((_, full)) = by_variant.get(&0) {
            for (variant, rs) in by_variant.values().skip(1) {
                let t = significance(&f1s(full), &f1s(rs))?;
                out.push_str(&format!("full vs {variant}: t = {:.3}, p = {:.4}\n", t.t, t.p_value));
            }
        }
    }
    Ok(out)
}

pub fn analyze_cmd(ctx: &Ctx, resources: Option<PathBuf>, parses: Option<PathBuf>, lenient: bool) -> Result<()> {
    let resources = resources
        .or_else(|| ctx.cfg.resources())
        .ok_or_else(|| ConfigError("no resource directory: set paths.resources or pass --resources".into()))?;
    let parses = parses.or_else(|| ctx.cfg.paths.parses.clone());
    let mut inputs = task_data(ctx, Task::Inference);
    inputs.push(resources.clone());
    if let Some(p) = &parses {
        inputs.extend(task_data(ctx, Task::Extraction));
        inputs.push(p.clone());
    }
    let m = ctx.begin("analyze", &inputs)?;
    let tables = load_resource_dir(&resources, &ResourceKind::ALL)?;
    let mut inference = Vec::new();
    for split in Split::ALL {
        inference.extend(ctx.samples(Task::Inference, split)?);
    }
    let coverage = transformation_coverage(&inference, &tables);
    let mut report = render_coverage(&coverage);
    let dir = ctx.layout.analysis();
    write_json(&dir.join("coverage.json"), &coverage)?;
    let mut outputs = vec![dir.join("coverage.json")];
    if let Some(p) = &parses {
        let parsed = read_parses(p)?;
        let mut extraction = Vec::new();
        for split in Split::ALL {
            extraction.extend(ctx.samples(Task::Extraction, split)?);
        }
        let strict = ctx.cfg.analysis.strict && !lenient;
        let deps = tail_dependency_distribution(&parsed, &extraction, strict)?;
        let pos = tail_pos_distribution(&parsed, &extraction, strict)?;
        report.push('\n');
        report.push_str(&render_histogram("tail dependency labels", &deps, 10));
        report.push('\n');
        report.push_str(&render_histogram("tail POS tags", &pos, 10));
        report.push_str(&format!("non-noun share {:.1}%\n", 100.0 * non_noun_share(&pos)));
        write_json(&dir.join("tail_dependencies.json"), &deps)?;
        write_json(&dir.join("tail_pos.json"), &pos)?;
        outputs.extend([dir.join("tail_dependencies.json"), dir.join("tail_pos.json")]);
    }
    write_text(&dir.join("report.txt"), &report)?;
    outputs.push(dir.join("report.txt"));
    ctx.finish(m, &outputs)?;
    print!("{report}");
    Ok(())
}
