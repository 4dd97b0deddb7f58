//! Next-token scoring contract used by the decoder, plus the count-based
//! bigram scorer that implements it without any trained model.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::RelationRegistry;
use crate::triple::{flatten, Sample};
use crate::vocab::{TokenId, Vocabulary, EOS_ID, SEP_ID};

/// Default context window, in tokens.
pub const DEFAULT_WINDOW: usize = 1024;

/// Anything that can score the next token given `sentence ⊕ [SEP] ⊕ prefix`.
///
/// Scores are unnormalized log-scores (logits): higher is more likely and the
/// softmax over the vocabulary is the model's next-token distribution.
/// Implementations must be deterministic and safe to share across threads.
pub trait Scorer: Send + Sync {
    fn vocab(&self) -> &Vocabulary;

    fn context_window(&self) -> usize;

    fn next_token_scores(&self, context: &[TokenId]) -> Result<Vec<f32>>;

    fn check_window(&self, context: &[TokenId]) -> Result<()> {
        if context.len() > self.context_window() {
            return Err(Error::ContextTooLong { len: context.len(), limit: self.context_window() });
        }
        Ok(())
    }
}

/// Numerically stable softmax. Entries at `-inf` get probability zero.
pub fn softmax(scores: &[f32]) -> Vec<f64> {
    let max = scores.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    if !max.is_finite() {
        return vec![0.0; scores.len()];
    }
    let exps: Vec<f64> = scores.iter().map(|&s| (s as f64 - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Log-softmax restricted to `allowed`; every other id is impossible.
pub fn masked_log_softmax(scores: &[f32], allowed: &[TokenId]) -> Vec<(TokenId, f64)> {
    let max = allowed
        .iter()
        .map(|&i| scores[i as usize] as f64)
        .fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return Vec::new();
    }
    let z: f64 = allowed.iter().map(|&i| (scores[i as usize] as f64 - max).exp()).sum();
    let log_z = max + z.ln();
    allowed.iter().map(|&i| (i, scores[i as usize] as f64 - log_z)).collect()
}

/// Split a scorer context into (sentence, generated prefix) at the first `[SEP]`.
pub fn split_context(context: &[TokenId]) -> (&[TokenId], &[TokenId]) {
    match context.iter().position(|&t| t == SEP_ID) {
        Some(p) => (&context[..p], &context[p + 1..]),
        None => (&[], context),
    }
}

/// A training example: the sentence as context and the flattened triple as target.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSequence {
    /// Sentence ids followed by `[SEP]`.
    pub context: Vec<TokenId>,
    /// Flattened triple ids followed by `[EOS]`.
    pub target: Vec<TokenId>,
    /// Per-position labels over `context ⊕ target`; position `i` is
    /// predicted from positions `..i`.
    pub labels: Vec<TokenId>,
    /// True exactly on the target positions.
    pub loss_mask: Vec<bool>,
}

impl TrainingSequence {
    pub fn input(&self) -> Vec<TokenId> {
        let mut v = self.context.clone();
        v.extend_from_slice(&self.target);
        v
    }

    pub fn len(&self) -> usize {
        self.context.len() + self.target.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn build_training_sequence(
    sample: &Sample,
    vocab: &Vocabulary,
    registry: &RelationRegistry,
) -> Result<TrainingSequence> {
    let flat = flatten(&sample.gold, registry)?;
    let mut context = vocab.encode(&sample.sentence_tokens());
    context.push(SEP_ID);
    let mut target = vocab.encode(&flat.tokens);
    target.push(EOS_ID);
    let labels: Vec<TokenId> = context.iter().chain(&target).copied().collect();
    let loss_mask = (0..labels.len()).map(|i| i >= context.len()).collect();
    Ok(TrainingSequence { context, target, labels, loss_mask })
}

/// Sum of `-log p(label)` over masked positions under `scorer`.
pub fn sequence_nll(scorer: &dyn Scorer, seq: &TrainingSequence) -> Result<f64> {
    let input = seq.input();
    let mut nll = 0.0;
    for (i, (&label, &on)) in seq.labels.iter().zip(&seq.loss_mask).enumerate() {
        if !on {
            continue;
        }
        let probs = softmax(&scorer.next_token_scores(&input[..i])?);
        nll -= probs[label as usize].max(f64::MIN_POSITIVE).ln();
    }
    Ok(nll)
}

/// Add-alpha smoothed bigram model over flattened training targets.
///
/// It ignores the sentence entirely, which makes it a useful lower bound and
/// a model-free stand-in for the decoder and reranker tests.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BigramScorer {
    vocab: Vocabulary,
    window: usize,
    alpha: f64,
    /// Row-major `prev -> next` counts, sparse by row.
    rows: Vec<Vec<(TokenId, u32)>>,
    row_totals: Vec<u32>,
}

impl BigramScorer {
    pub fn fit(vocab: Vocabulary, sequences: &[TrainingSequence], alpha: f64) -> Self {
        let v = vocab.len();
        let mut counts: Vec<std::collections::BTreeMap<TokenId, u32>> = vec![Default::default(); v];
        for seq in sequences {
            let mut prev = SEP_ID;
            for &tok in &seq.target {
                *counts[prev as usize].entry(tok).or_default() += 1;
                prev = tok;
            }
        }
        let rows: Vec<Vec<(TokenId, u32)>> = counts.into_iter().map(|m| m.into_iter().collect()).collect();
        let row_totals = rows.iter().map(|r| r.iter().map(|(_, c)| c).sum()).collect();
        Self { vocab, window: DEFAULT_WINDOW, alpha, rows, row_totals }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.window = window;
        self
    }
}

impl Scorer for BigramScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> usize {
        self.window
    }

    fn next_token_scores(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        self.check_window(context)?;
        let (_, prefix) = split_context(context);
        let prev = prefix.last().copied().unwrap_or(SEP_ID) as usize;
        let v = self.vocab.len() as f64;
        let total = self.row_totals.get(prev).copied().unwrap_or(0) as f64;
        let denom = (total + self.alpha * v).ln();
        let mut scores = vec![(self.alpha.ln() - denom) as f32; self.vocab.len()];
        if let Some(row) = self.rows.get(prev) {
            for &(tok, c) in row {
                scores[tok as usize] = ((c as f64 + self.alpha).ln() - denom) as f32;
            }
        }
        Ok(scores)
    }
}

/// Every token equally likely.
#[derive(Debug, Clone)]
pub struct UniformScorer {
    vocab: Vocabulary,
}

impl UniformScorer {
    pub fn new(vocab: Vocabulary) -> Self {
        Self { vocab }
    }
}

impl Scorer for UniformScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> usize {
        DEFAULT_WINDOW
    }

    fn next_token_scores(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        self.check_window(context)?;
        Ok(vec![0.0; self.vocab.len()])
    }
}

/// Mean reciprocal rank of each gold target token under `scorer`.
///
/// Tied tokens share the mean of the ranks they span, so a constant scorer
/// ranks every token at `(|V| + 1) / 2`.
pub fn mean_reciprocal_rank(scorer: &dyn Scorer, sequences: &[TrainingSequence]) -> Result<f64> {
    let mut total = 0.0;
    let mut n = 0usize;
    for seq in sequences {
        let input = seq.input();
        for (i, (&label, &on)) in seq.labels.iter().zip(&seq.loss_mask).enumerate() {
            if !on {
                continue;
            }
            let scores = scorer.next_token_scores(&input[..i])?;
            let gold = scores[label as usize];
            let higher = scores.iter().filter(|&&s| s > gold).count();
            let tied = scores.iter().filter(|&&s| s == gold).count() - 1;
            total += 1.0 / (1.0 + higher as f64 + tied as f64 / 2.0);
            n += 1;
        }
    }
    Ok(if n == 0 { 0.0 } else { total / n as f64 })
}
