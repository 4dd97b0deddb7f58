//! Binary candidate classifier and final-triple selection.
//!
//! The classifier is logistic regression over hashed indicator features of
//! `sentence ⊕ [SEP] ⊕ candidate`. Its output is the probability that the
//! candidate equals the gold triple.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{Candidate, CandidateSet};
use crate::error::{Error, Result};
use crate::eval::Prediction;
use crate::optim::{AdamW, GradBuffer, LinearSchedule};
use crate::triple::{Sample, Triple, HEAD, RELN, TAIL};
use crate::vocab::SEP;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Correct,
    Incorrect,
}

impl Label {
    pub fn is_correct(self) -> bool {
        self == Label::Correct
    }
}

/// One (sentence, candidate) pair with its correctness label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankExample {
    pub source_id: String,
    pub rank: usize,
    pub label: Label,
    /// Sentence tokens, `[SEP]`, then the candidate's flattened tokens.
    pub tokens: Vec<String>,
}

pub fn rerank_tokens(sentence: &[String], candidate: &[String]) -> Vec<String> {
    let mut tokens = sentence.to_vec();
    tokens.push(SEP.to_string());
    tokens.extend_from_slice(candidate);
    tokens
}

/// One example per candidate, labelled by exact match with the gold triple.
/// Malformed candidates are labelled incorrect.
pub fn build_rerank_dataset(sets: &[CandidateSet], golds: &[Sample]) -> Result<Vec<RerankExample>> {
    let by_id: HashMap<&str, &Sample> = golds.iter().map(|g| (g.source_id.as_str(), g)).collect();
    let mut out = Vec::new();
    for set in sets {
        let gold = by_id
            .get(set.source_id.as_str())
            .ok_or_else(|| Error::IdMismatch(format!("no gold sample for candidate set {:?}", set.source_id)))?;
        let sentence = gold.sentence_tokens();
        for c in &set.candidates {
            let label = if c.triple.as_ref() == Some(&gold.gold) { Label::Correct } else { Label::Incorrect };
            out.push(RerankExample {
                source_id: set.source_id.clone(),
                rank: c.rank,
                label,
                tokens: rerank_tokens(&sentence, &c.tokens),
            });
        }
    }
    Ok(out)
}

pub const FEATURE_BITS: u32 = 20;

fn hash(s: &str) -> u32 {
    let mut h = FnvHasher::default();
    h.write(s.as_bytes());
    (h.finish() & ((1 << FEATURE_BITS) - 1)) as u32
}

struct Parts<'a> {
    head: &'a [String],
    relation: &'a str,
    tail: &'a [String],
}

fn split_candidate(cand: &[String]) -> Option<Parts<'_>> {
    let pos = |t: &str| cand.iter().position(|x| x == t);
    let (h, r, t) = (pos(HEAD)?, pos(RELN)?, pos(TAIL)?);
    if h != 0 || r <= h + 1 || t != r + 2 {
        return None;
    }
    Some(Parts { head: &cand[h + 1..r], relation: &cand[r + 1], tail: &cand[t + 1..] })
}

/// Hashed, de-duplicated feature ids of a rerank input sequence.
pub fn features(tokens: &[String]) -> Vec<u32> {
    let sep = tokens.iter().position(|t| t == SEP).unwrap_or(tokens.len());
    let sentence = &tokens[..sep];
    let cand = tokens.get(sep + 1..).unwrap_or(&[]);
    let mut f: Vec<String> = vec!["bias".into()];
    for t in cand {
        f.push(format!("ctok={t}"));
    }
    let Some(p) = split_candidate(cand) else {
        f.push("malformed".into());
        return finish(f);
    };
    let r = p.relation;
    let head = p.head.join(" ");
    let tail = p.tail.join(" ");
    f.push(format!("rel={r}"));
    f.push(format!("head={head}"));
    f.push(format!("rel={r}|tail={tail}"));
    f.push(format!("rel={r}|tlen={}", p.tail.len().min(4)));
    for w in sentence {
        f.push(format!("rel={r}|w={w}"));
        f.push(format!("tail={tail}|w={w}"));
    }
    for t in p.tail {
        f.push(format!("rel={r}|tw={t}"));
    }
    f.push(format!("head_in_sent={}", crate::text::contains_span(sentence, p.head)));
    match crate::text::find_span(sentence, p.tail) {
        Some(i) => {
            let j = i + p.tail.len();
            let left = if i > 0 { sentence[i - 1].as_str() } else { "<s>" };
            let left2 = if i > 1 { sentence[i - 2].as_str() } else { "<s>" };
            let right = sentence.get(j).map_or("</s>", String::as_str);
            let right_tok_in_sent = sentence.get(j).is_some_and(|w| w.chars().all(char::is_alphanumeric));
            f.push(format!("rel={r}|tail_in_sent"));
            f.push(format!("rel={r}|left={left}"));
            f.push(format!("rel={r}|left2={left2} {left}"));
            f.push(format!("rel={r}|right={right}"));
            f.push(format!("left={left}"));
            f.push(format!("right={right}"));
            f.push(format!("left2={left2} {left}"));
            f.push(format!("right_is_word={right_tok_in_sent}"));
        }
        None => f.push(format!("rel={r}|tail_not_in_sent")),
    }
    finish(f)
}

fn finish(f: Vec<String>) -> Vec<u32> {
    let mut ids: Vec<u32> = f.iter().map(|s| hash(s)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// Anything that can score a candidate for a sentence; higher is better.
pub trait CandidateScorer: Sync {
    fn score(&self, source_id: &str, sentence: &[String], candidate: &Candidate) -> f64;
}

/// Trained logistic reranker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reranker {
    weights: Vec<f32>,
}

impl Default for Reranker {
    fn default() -> Self {
        Self { weights: vec![0.0; 1 << FEATURE_BITS] }
    }
}

impl Reranker {
    fn logit(&self, feats: &[u32]) -> f64 {
        feats.iter().map(|&i| self.weights[i as usize] as f64).sum()
    }

    /// Probability that the candidate in `tokens` is correct.
    pub fn probability(&self, tokens: &[String]) -> f64 {
        sigmoid(self.logit(&features(tokens)))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        // store only non-zero weights; the dense vector is mostly empty
        let sparse: Vec<(u32, f32)> = self
            .weights
            .iter()
            .enumerate()
            .filter(|(_, w)| **w != 0.0)
            .map(|(i, w)| (i as u32, *w))
            .collect();
        let bytes = bincode::serialize(&sparse)?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let sparse: Vec<(u32, f32)> = bincode::deserialize(&bytes)?;
        let mut r = Self::default();
        for (i, w) in sparse {
            let slot = r
                .weights
                .get_mut(i as usize)
                .ok_or_else(|| Error::Format(format!("feature index {i} out of range")))?;
            *slot = w;
        }
        Ok(r)
    }
}

impl CandidateScorer for Reranker {
    fn score(&self, _source_id: &str, sentence: &[String], candidate: &Candidate) -> f64 {
        self.probability(&rerank_tokens(sentence, &candidate.tokens))
    }
}

/// Scores 1 for the gold triple and 0 otherwise.
pub struct OracleReranker {
    golds: HashMap<String, Triple>,
}

impl OracleReranker {
    pub fn new(golds: &[Sample]) -> Self {
        Self { golds: golds.iter().map(|g| (g.source_id.clone(), g.gold.clone())).collect() }
    }
}

impl CandidateScorer for OracleReranker {
    fn score(&self, source_id: &str, _sentence: &[String], candidate: &Candidate) -> f64 {
        let hit = candidate.triple.is_some() && candidate.triple.as_ref() == self.golds.get(source_id);
        if hit {
            1.0
        } else {
            0.0
        }
    }
}

/// Highest-scoring well-formed candidate; ties go to the higher generator
/// score, then the better rank. Abstains when nothing is well-formed.
pub fn select_best(set: &CandidateSet, sentence: &[String], scorer: &dyn CandidateScorer) -> Prediction {
    let best = set
        .candidates
        .iter()
        .filter(|c| c.triple.is_some())
        .map(|c| (scorer.score(&set.source_id, sentence, c), c))
        .max_by(|(sa, a), (sb, b)| {
            sa.total_cmp(sb)
                .then_with(|| a.generator_score.total_cmp(&b.generator_score))
                .then_with(|| b.rank.cmp(&a.rank))
        });
    match best {
        Some((score, c)) => Prediction {
            source_id: set.source_id.clone(),
            triple: c.triple.clone(),
            rerank_score: Some(score),
            generator_score: Some(c.generator_score),
        },
        None => Prediction::abstain(set.source_id.clone()),
    }
}

/// The generator's own choice: the rank-1 candidate, or abstain if it is malformed.
pub fn select_top(set: &CandidateSet) -> Prediction {
    match set.candidates.iter().min_by_key(|c| c.rank) {
        Some(c) if c.triple.is_some() => Prediction {
            source_id: set.source_id.clone(),
            triple: c.triple.clone(),
            rerank_score: None,
            generator_score: Some(c.generator_score),
        },
        _ => Prediction::abstain(set.source_id.clone()),
    }
}

/// Apply [`select_best`] to every set, looking sentences up in `samples`.
pub fn select_all(sets: &[CandidateSet], samples: &[Sample], scorer: &dyn CandidateScorer) -> Result<Vec<Prediction>> {
    let by_id: HashMap<&str, &Sample> = samples.iter().map(|s| (s.source_id.as_str(), s)).collect();
    sets.par_iter()
        .map(|set| {
            let sample = by_id
                .get(set.source_id.as_str())
                .ok_or_else(|| Error::IdMismatch(format!("no sample for candidate set {:?}", set.source_id)))?;
            Ok(select_best(set, &sample.sentence_tokens(), scorer))
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RerankerConfig {
    pub lr: f64,
    pub max_epochs: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub validation_interval: f64,
    pub weight_decay: f64,
    /// Multiplier on the loss of positive examples; `None` means 1.
    pub pos_weight: Option<f64>,
    pub max_steps: Option<usize>,
}

impl Default for RerankerConfig {
    fn default() -> Self {
        Self {
            lr: 5e-6,
            max_epochs: 8,
            warmup_steps: 100,
            batch_size: 10,
            seed: 40,
            validation_interval: 0.25,
            weight_decay: 0.0,
            pos_weight: None,
            max_steps: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RerankValidation {
    pub step: usize,
    pub epoch: f64,
    pub train_loss: f64,
    pub dev_loss: f64,
    /// Share of dev candidate sets whose top-scored candidate is correct.
    pub dev_selection_accuracy: f64,
}

#[derive(Debug, Clone)]
pub struct TrainedReranker {
    pub model: Reranker,
    pub best: Option<RerankValidation>,
    pub history: Vec<RerankValidation>,
    pub steps: usize,
}

struct Encoded {
    source_id: String,
    rank: usize,
    label: bool,
    feats: Vec<u32>,
}

fn encode(examples: &[RerankExample]) -> Vec<Encoded> {
    examples
        .par_iter()
        .map(|e| Encoded {
            source_id: e.source_id.clone(),
            rank: e.rank,
            label: e.label.is_correct(),
            feats: features(&e.tokens),
        })
        .collect()
}

fn bce(p: f64, label: bool, pos_weight: f64) -> f64 {
    let p = p.clamp(1e-12, 1.0 - 1e-12);
    if label {
        -pos_weight * p.ln()
    } else {
        -(1.0 - p).ln()
    }
}

fn evaluate(model: &Reranker, dev: &[Encoded], pos_weight: f64) -> (f64, f64) {
    if dev.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    let mut groups: BTreeMap<&str, (f64, usize, bool)> = BTreeMap::new();
    for e in dev {
        let p = sigmoid(model.logit(&e.feats));
        loss += bce(p, e.label, pos_weight);
        let entry = groups.entry(&e.source_id).or_insert((f64::NEG_INFINITY, usize::MAX, false));
        if p > entry.0 || (p == entry.0 && e.rank < entry.1) {
            *entry = (p, e.rank, e.label);
        }
    }
    let hits = groups.values().filter(|g| g.2).count();
    (loss / dev.len() as f64, hits as f64 / groups.len() as f64)
}

/// Train the reranker with binary cross-entropy, keeping the checkpoint with
/// the best dev selection accuracy (ties: lower dev loss).
pub fn train_reranker(train: &[RerankExample], dev: &[RerankExample], cfg: &RerankerConfig) -> Result<TrainedReranker> {
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    if cfg.batch_size == 0 || !(cfg.lr > 0.0 && cfg.lr.is_finite()) {
        return Err(Error::Config("reranker needs a positive batch size and learning rate".into()));
    }
    let pos_weight = cfg.pos_weight.unwrap_or(1.0);
    let train_enc = encode(train);
    let dev_enc = encode(dev);
    let mut model = Reranker::default();
    let n = model.weights.len();
    let steps_per_epoch = train_enc.len().div_ceil(cfg.batch_size);
    let mut total_steps = steps_per_epoch * cfg.max_epochs;
    if let Some(m) = cfg.max_steps {
        total_steps = total_steps.min(m);
    }
    let schedule = LinearSchedule { base_lr: cfg.lr, warmup_steps: cfg.warmup_steps, total_steps };
    let val_every = ((steps_per_epoch as f64 * cfg.validation_interval).round() as usize).max(1);
    let mut opt = AdamW::new(n, cfg.weight_decay);
    let mut buf = GradBuffer::new(n);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..train_enc.len()).collect();

    let mut history = Vec::new();
    let mut best: Option<(RerankValidation, Reranker)> = None;
    let mut step = 0;
    let (mut window_loss, mut window_n) = (0.0, 0usize);
    'outer: for _ in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if step == total_steps {
                break 'outer;
            }
            let mut loss = 0.0;
            for &i in batch {
                let e = &train_enc[i];
                let p = sigmoid(model.logit(&e.feats));
                loss += bce(p, e.label, pos_weight);
                let g = if e.label { pos_weight * (p - 1.0) } else { p };
                for &f in &e.feats {
                    buf.add(f, g as f32);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("reranker loss {loss} at step {step}")));
            }
            buf.scale(1.0 / batch.len() as f32);
            opt.step(&mut model.weights, &buf.grads, &buf.touched, schedule.lr(step));
            buf.clear();
            step += 1;
            window_loss += loss;
            window_n += batch.len();

            if !dev_enc.is_empty() && (step % val_every == 0 || step == total_steps) {
                let (dev_loss, acc) = evaluate(&model, &dev_enc, pos_weight);
                if !dev_loss.is_finite() {
                    return Err(Error::Divergence(format!("reranker dev loss {dev_loss} at step {step}")));
                }
                let point = RerankValidation {
                    step,
                    epoch: step as f64 / steps_per_epoch as f64,
                    train_loss: window_loss / window_n as f64,
                    dev_loss,
                    dev_selection_accuracy: acc,
                };
                log::info!("reranker step {step} dev_loss {dev_loss:.4} dev_acc {acc:.4}");
                (window_loss, window_n) = (0.0, 0);
                let improved = best.as_ref().is_none_or(|(b, _)| {
                    match point.dev_selection_accuracy.total_cmp(&b.dev_selection_accuracy) {
                        Ordering::Greater => true,
                        Ordering::Equal => point.dev_loss < b.dev_loss,
                        Ordering::Less => false,
                    }
                });
                if improved {
                    best = Some((point.clone(), model.clone()));
                }
                history.push(point);
            }
        }
    }
    Ok(match best {
        Some((point, m)) => TrainedReranker { model: m, best: Some(point), history, steps: step },
        None => TrainedReranker { model, best: None, history, steps: step },
    })
}
