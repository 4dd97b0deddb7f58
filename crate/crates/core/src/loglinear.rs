//! Trainable feature-based next-token model.
//!
//! `score(y) = bias[y] + Σ w[context feature, y] + copy(y)` where the
//! context features look at the previous tokens, the current grammar
//! section and the sentence words, and the copy term rewards tokens that
//! occur in the sentence at positions whose neighbourhood resembles those
//! seen during training.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::{softmax, split_context, Scorer, TrainingSequence, DEFAULT_WINDOW};
use crate::vocab::{TokenId, Vocabulary, EOS_ID, HEAD_ID, RELN_ID, SEP_ID, TAIL_ID, UNK_ID};

const SECTIONS: usize = 5;
/// Dense copy indicators per section: in sentence, follows the previous
/// token in the sentence, already emitted in the current entity.
const DENSE_PER_SECTION: usize = 3;

const T_PREV1: u64 = 1;
const T_PREV2: u64 = 2;
const T_CROSS: u64 = 3;
const T_CROSS_REL: u64 = 4;
const T_REL_PREV: u64 = 5;
const C_LEFT: u64 = 10;
const C_RIGHT: u64 = 11;
const C_LEFT2: u64 = 12;

fn key(template: u64, section: usize, a: TokenId, b: TokenId) -> u64 {
    debug_assert!(a < 1 << 26 && b < 1 << 26);
    template << 56 | (section as u64) << 52 | (a as u64) << 26 | b as u64
}

/// Grammar section, derived from the last control token of the prefix.
fn section(prefix: &[TokenId], vocab: &Vocabulary) -> usize {
    for &t in prefix.iter().rev() {
        match t {
            HEAD_ID => return 1,
            RELN_ID => return 2,
            TAIL_ID | EOS_ID => return 4,
            _ if vocab.is_relation(t) => return 3,
            _ => {}
        }
    }
    0
}

fn current_relation(prefix: &[TokenId], vocab: &Vocabulary) -> TokenId {
    prefix.iter().rev().copied().find(|&t| vocab.is_relation(t)).unwrap_or(0)
}

/// Tokens emitted since the last control token.
fn current_entity<'a>(prefix: &'a [TokenId], vocab: &Vocabulary) -> &'a [TokenId] {
    let start = prefix
        .iter()
        .rposition(|&t| !vocab.is_text(t))
        .map_or(0, |p| p + 1);
    &prefix[start..]
}

/// Everything that fires for one (sentence, prefix) context.
#[derive(Debug, Default)]
struct Active {
    context_keys: Vec<u64>,
    /// (token, dense feature index)
    dense: Vec<(TokenId, usize)>,
    /// Per sentence position: (token, copy keys at that position).
    copy: Vec<(TokenId, [u64; 3])>,
}

fn active_features(sentence: &[TokenId], prefix: &[TokenId], vocab: &Vocabulary) -> Active {
    let sec = section(prefix, vocab);
    let rel = if sec >= 3 { current_relation(prefix, vocab) } else { 0 };
    let p1 = prefix.last().copied().unwrap_or(SEP_ID);
    let p2 = if prefix.len() >= 2 { prefix[prefix.len() - 2] } else { SEP_ID };

    let mut context_keys = vec![key(T_PREV1, sec, p1, 0), key(T_PREV2, sec, p2, p1)];
    if sec == 4 {
        context_keys.push(key(T_REL_PREV, sec, rel, p1));
    }
    let mut words: Vec<TokenId> = sentence.iter().copied().filter(|&t| t != UNK_ID).collect();
    words.sort_unstable();
    words.dedup();
    for &w in &words {
        context_keys.push(key(T_CROSS, sec, w, 0));
        if sec >= 3 {
            context_keys.push(key(T_CROSS_REL, sec, w, rel));
        }
    }

    let entity = current_entity(prefix, vocab);
    let mut dense: Vec<(TokenId, usize)> = Vec::new();
    let base = sec * DENSE_PER_SECTION;
    for &w in &words {
        dense.push((w, base));
    }
    if let Some(&last) = entity.last() {
        for i in 1..sentence.len() {
            if sentence[i - 1] == last && sentence[i] != UNK_ID {
                dense.push((sentence[i], base + 1));
            }
        }
    }
    for &t in entity {
        dense.push((t, base + 2));
    }
    dense.sort_unstable();
    dense.dedup();

    let copy = sentence
        .iter()
        .enumerate()
        .filter(|(_, &t)| t != UNK_ID && vocab.is_text(t))
        .map(|(i, &t)| {
            let left = if i > 0 { sentence[i - 1] } else { SEP_ID };
            let left2 = if i > 1 { sentence[i - 2] } else { SEP_ID };
            let right = sentence.get(i + 1).copied().unwrap_or(EOS_ID);
            (t, [key(C_LEFT, sec, left, rel), key(C_RIGHT, sec, right, rel), key(C_LEFT2, sec, left2, left)])
        })
        .collect();

    Active { context_keys, dense, copy }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Weights {
    vocab_size: usize,
    /// bias (vocab) | dense copy block | sparse pair weights | copy key weights
    params: Vec<f32>,
    /// context key -> [(token, param index)], sorted by token
    pairs: BTreeMap<u64, Vec<(TokenId, u32)>>,
    /// copy key -> param index
    copy_keys: BTreeMap<u64, u32>,
    window: usize,
}

/// Feature-based generator over the flattened-triple vocabulary.
#[derive(Debug, Clone)]
pub struct LogLinearScorer {
    vocab: Vocabulary,
    w: Weights,
}

impl LogLinearScorer {
    /// Allocate parameters (all zero) for every feature observed with a
    /// gold token in `sequences`.
    pub fn new(vocab: Vocabulary, sequences: &[TrainingSequence]) -> Self {
        let v = vocab.len();
        let mut n = v + SECTIONS * DENSE_PER_SECTION;
        let mut support: BTreeMap<u64, Vec<TokenId>> = BTreeMap::new();
        let mut copy_support: BTreeMap<u64, ()> = BTreeMap::new();
        for seq in sequences {
            let sentence = &seq.context[..seq.context.len().saturating_sub(1)];
            for j in 0..seq.target.len() {
                let gold = seq.target[j];
                let act = active_features(sentence, &seq.target[..j], &vocab);
                for k in act.context_keys {
                    support.entry(k).or_default().push(gold);
                }
                for (t, keys) in act.copy {
                    if t == gold {
                        for k in keys {
                            copy_support.insert(k, ());
                        }
                    }
                }
            }
        }
        let mut pairs = BTreeMap::new();
        for (k, mut ys) in support {
            ys.sort_unstable();
            ys.dedup();
            let list: Vec<(TokenId, u32)> = ys
                .into_iter()
                .map(|y| {
                    n += 1;
                    (y, (n - 1) as u32)
                })
                .collect();
            pairs.insert(k, list);
        }
        let copy_keys = copy_support
            .into_keys()
            .map(|k| {
                n += 1;
                (k, (n - 1) as u32)
            })
            .collect();
        let w = Weights { vocab_size: v, params: vec![0.0; n], pairs, copy_keys, window: DEFAULT_WINDOW };
        Self { vocab, w }
    }

    pub fn with_window(mut self, window: usize) -> Self {
        self.w.window = window;
        self
    }

    pub fn num_params(&self) -> usize {
        self.w.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.w.params
    }

    pub fn params_mut(&mut self) -> &mut [f32] {
        &mut self.w.params
    }

    fn dense_index(&self, feature: usize) -> usize {
        self.w.vocab_size + feature
    }

    /// Scores plus, per token, the copy keys of its best-scoring sentence position.
    fn score_active(&self, act: &Active) -> (Vec<f32>, BTreeMap<TokenId, Vec<u32>>) {
        let p = &self.w.params;
        let mut scores = p[..self.w.vocab_size].to_vec();
        for k in &act.context_keys {
            if let Some(list) = self.w.pairs.get(k) {
                for &(y, idx) in list {
                    scores[y as usize] += p[idx as usize];
                }
            }
        }
        for &(y, f) in &act.dense {
            scores[y as usize] += p[self.dense_index(f)];
        }
        let mut best: BTreeMap<TokenId, (f32, Vec<u32>)> = BTreeMap::new();
        for (y, keys) in &act.copy {
            let idxs: Vec<u32> = keys.iter().filter_map(|k| self.w.copy_keys.get(k).copied()).collect();
            let s: f32 = idxs.iter().map(|&i| p[i as usize]).sum();
            match best.get(y) {
                Some((b, _)) if *b >= s => {}
                _ => {
                    best.insert(*y, (s, idxs));
                }
            }
        }
        let mut chosen = BTreeMap::new();
        for (y, (s, idxs)) in best {
            scores[y as usize] += s;
            chosen.insert(y, idxs);
        }
        (scores, chosen)
    }

    /// Negative log-likelihood of `seq`'s target tokens.
    pub fn nll(&self, seq: &TrainingSequence) -> f64 {
        let sentence = &seq.context[..seq.context.len().saturating_sub(1)];
        (0..seq.target.len())
            .map(|j| {
                let act = active_features(sentence, &seq.target[..j], &self.vocab);
                let probs = softmax(&self.score_active(&act).0);
                -probs[seq.target[j] as usize].max(f64::MIN_POSITIVE).ln()
            })
            .sum()
    }

    /// Negative log-likelihood of `seq` and its sparse gradient, as
    /// `(param index, d loss / d param)` pairs in a deterministic order.
    pub fn nll_and_grad(&self, seq: &TrainingSequence) -> (f64, Vec<(u32, f32)>) {
        let sentence = &seq.context[..seq.context.len().saturating_sub(1)];
        let mut nll = 0.0;
        let mut grad = Vec::new();
        for j in 0..seq.target.len() {
            let gold = seq.target[j];
            let act = active_features(sentence, &seq.target[..j], &self.vocab);
            let (scores, chosen) = self.score_active(&act);
            let probs = softmax(&scores);
            nll -= probs[gold as usize].max(f64::MIN_POSITIVE).ln();
            let d = |y: TokenId| (probs[y as usize] - if y == gold { 1.0 } else { 0.0 }) as f32;

            for y in 0..self.w.vocab_size as TokenId {
                let g = d(y);
                if g != 0.0 {
                    grad.push((y, g));
                }
            }
            for k in &act.context_keys {
                if let Some(list) = self.w.pairs.get(k) {
                    for &(y, idx) in list {
                        grad.push((idx, d(y)));
                    }
                }
            }
            for &(y, f) in &act.dense {
                grad.push((self.dense_index(f) as u32, d(y)));
            }
            for (y, idxs) in &chosen {
                let g = d(*y);
                for &i in idxs {
                    grad.push((i, g));
                }
            }
        }
        (nll, grad)
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join("weights.bin");
        let bytes = bincode::serialize(&self.w)?;
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        self.vocab.save(&dir.join("vocab.txt"))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let vocab = Vocabulary::load(&dir.join("vocab.txt"))?;
        let path = dir.join("weights.bin");
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        let w: Weights = bincode::deserialize(&bytes)?;
        if w.vocab_size != vocab.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} vocabulary entries, vocab.txt has {}",
                w.vocab_size,
                vocab.len()
            )));
        }
        Ok(Self { vocab, w })
    }
}

impl PartialEq for LogLinearScorer {
    fn eq(&self, other: &Self) -> bool {
        self.w == other.w && self.vocab == other.vocab
    }
}

impl Scorer for LogLinearScorer {
    fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    fn context_window(&self) -> usize {
        self.w.window
    }

    fn next_token_scores(&self, context: &[TokenId]) -> Result<Vec<f32>> {
        self.check_window(context)?;
        let (sentence, prefix) = split_context(context);
        let act = active_features(sentence, prefix, &self.vocab);
        Ok(self.score_active(&act).0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::relation::RelationRegistry;
    use crate::scoring::{build_training_sequence, sequence_nll};
    use crate::triple::{Sample, Split, Task, Triple};

    fn setup() -> (LogLinearScorer, Vec<TrainingSequence>) {
        let reg = RelationRegistry::bundled();
        let samples: Vec<Sample> = [("i have a dog", "[have_pet]", "dog"), ("i love pizza", "[like_food]", "pizza")]
            .iter()
            .enumerate()
            .map(|(i, (s, r, t))| Sample {
                source_id: i.to_string(),
                sentence: s.to_string(),
                gold: Triple::new("i", r, t, &reg).unwrap(),
                task: Task::Extraction,
                split: Split::Train,
            })
            .collect();
        let vocab = Vocabulary::build(&reg, ["i", "have", "a", "dog", "love", "pizza"]);
        let seqs: Vec<_> = samples.iter().map(|s| build_training_sequence(s, &vocab, &reg).unwrap()).collect();
        (LogLinearScorer::new(vocab, &seqs), seqs)
    }

    #[test]
    fn zero_weights_are_uniform() {
        let (m, seqs) = setup();
        let nll = sequence_nll(&m, &seqs[0]).unwrap();
        let expected = seqs[0].target.len() as f64 * (m.vocab().len() as f64).ln();
        assert!((nll - expected).abs() < 1e-6);
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let (mut m, seqs) = setup();
        for (i, p) in m.params_mut().iter_mut().enumerate() {
            *p = ((i * 7919) % 13) as f32 * 0.05 - 0.3;
        }
        let (nll, grad) = m.nll_and_grad(&seqs[0]);
        let mut dense = vec![0.0f64; m.num_params()];
        for (i, g) in grad {
            dense[i as usize] += g as f64;
        }
        let probe: Vec<usize> = (0..m.num_params()).step_by(7).collect();
        for i in probe {
            let eps = 1e-2f32;
            let mut plus = m.clone();
            plus.params_mut()[i] += eps;
            let (up, _) = plus.nll_and_grad(&seqs[0]);
            let mut minus = m.clone();
            minus.params_mut()[i] -= eps;
            let (down, _) = minus.nll_and_grad(&seqs[0]);
            let numeric = (up - down) / (2.0 * eps as f64);
            assert!((numeric - dense[i]).abs() < 5e-3, "param {i}: {numeric} vs {} (nll {nll})", dense[i]);
        }
    }

    #[test]
    fn save_load_roundtrip() {
        let (mut m, _) = setup();
        m.params_mut()[3] = 1.5;
        let dir = tempfile::tempdir().unwrap();
        m.save(dir.path()).unwrap();
        let back = LogLinearScorer::load(dir.path()).unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn window_is_enforced() {
        let (m, _) = setup();
        let m = m.with_window(4);
        let err = m.next_token_scores(&[6, 7, 8, 9, 10]);
        assert!(matches!(err, Err(Error::ContextTooLong { len: 5, limit: 4 })));
    }
}
