//! Grammar-constrained beam search over the flattened-triple format.
//!
//! The decoder walks the grammar
//!
//! ```text
//! [HEAD] head+ [RELN] relation [TAIL] tail+ [EOS]
//! ```
//!
//! and, when constrained, zeroes the probability of every token the grammar
//! state and task mode forbid before renormalizing:
//!
//! * after `[RELN]` only registered relation tokens;
//! * extraction mode: head and tail tokens must occur in the sentence;
//! * inference mode: the tail must follow a path in the relation's tail trie.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::relation::RelationRegistry;
use crate::scoring::{masked_log_softmax, Scorer};
use crate::triple::{parse_flattened, Sample, Task, Triple};
use crate::vocab::{TokenId, Vocabulary, EOS_ID, HEAD_ID, RELN_ID, SEP_ID, TAIL_ID, UNK_ID};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecodeConfig {
    pub mode: Task,
    /// Apply grammar and task masks. Off reproduces free decoding.
    pub constrained: bool,
    /// Number of candidates returned (L).
    pub candidates: usize,
    pub beam: usize,
    /// Maximum generated tokens, `[EOS]` included.
    pub max_len: usize,
    /// Extraction tails must be a contiguous sentence span instead of a bag
    /// of sentence tokens.
    pub strict_span_tails: bool,
    /// Rank by mean instead of summed log-probability.
    pub length_normalized: bool,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        Self {
            mode: Task::Extraction,
            constrained: true,
            candidates: 10,
            beam: 10,
            max_len: 32,
            strict_span_tails: false,
            length_normalized: false,
        }
    }
}

impl DecodeConfig {
    pub fn for_task(mode: Task) -> Self {
        Self { mode, ..Self::default() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.beam == 0 || self.candidates == 0 {
            return Err(Error::Config("beam and candidate count must be positive".into()));
        }
        if self.candidates > self.beam {
            return Err(Error::Config(format!(
                "candidate count {} exceeds beam width {}",
                self.candidates, self.beam
            )));
        }
        if self.max_len < 6 {
            return Err(Error::Config("max_len too short for any triple".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
struct TrieNode {
    children: BTreeMap<String, u32>,
    terminal: bool,
}

/// Prefix trie over tokenized tail entities.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TailTrie {
    nodes: Vec<TrieNode>,
}

impl Default for TailTrie {
    fn default() -> Self {
        Self { nodes: vec![TrieNode::default()] }
    }
}

impl TailTrie {
    pub fn insert(&mut self, tail: &[String]) {
        let mut node = 0usize;
        for tok in tail {
            node = match self.nodes[node].children.get(tok) {
                Some(&next) => next as usize,
                None => {
                    let next = self.nodes.len();
                    self.nodes.push(TrieNode::default());
                    self.nodes[node].children.insert(tok.clone(), next as u32);
                    next
                }
            };
        }
        self.nodes[node].terminal = true;
    }

    fn walk<S: AsRef<str>>(&self, prefix: &[S]) -> Option<&TrieNode> {
        let mut node = &self.nodes[0];
        for tok in prefix {
            node = &self.nodes[*node.children.get(tok.as_ref())? as usize];
        }
        Some(node)
    }

    pub fn contains<S: AsRef<str>>(&self, tail: &[S]) -> bool {
        !tail.is_empty() && self.walk(tail).is_some_and(|n| n.terminal)
    }

    /// Tokens that may follow `prefix`, and whether `prefix` is a stored tail.
    /// `None` when `prefix` is not on any stored path.
    pub fn continuations<S: AsRef<str>>(&self, prefix: &[S]) -> Option<(Vec<&str>, bool)> {
        let node = self.walk(prefix)?;
        Some((node.children.keys().map(String::as_str).collect(), node.terminal && !prefix.is_empty()))
    }

    /// Every stored tail, in lexicographic token order.
    pub fn tails(&self) -> Vec<Vec<String>> {
        let mut out = Vec::new();
        let mut stack = vec![(0usize, Vec::new())];
        while let Some((node, path)) = stack.pop() {
            if self.nodes[node].terminal && !path.is_empty() {
                out.push(path.clone());
            }
            for (tok, &child) in self.nodes[node].children.iter().rev() {
                let mut p = path.clone();
                p.push(tok.clone());
                stack.push((child as usize, p));
            }
        }
        out
    }
}

/// Relation token -> trie of tails observed with it in training data.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationTailIndex {
    tries: BTreeMap<String, TailTrie>,
}

impl RelationTailIndex {
    pub fn build(samples: &[Sample]) -> Self {
        let mut index = Self::default();
        for s in samples {
            index.insert(s.gold.relation.as_str(), &s.gold.tail);
        }
        index
    }

    pub fn insert(&mut self, relation: &str, tail: &[String]) {
        self.tries.entry(relation.to_string()).or_default().insert(tail);
    }

    pub fn is_empty(&self) -> bool {
        self.tries.is_empty()
    }

    pub fn contains(&self, relation: &str, tail: &[String]) -> bool {
        self.tries.get(relation).is_some_and(|t| t.contains(tail))
    }

    pub fn trie(&self, relation: &str) -> Option<&TailTrie> {
        self.tries.get(relation)
    }

    /// All stored (relation, tail) pairs.
    pub fn pairs(&self) -> Vec<(String, Vec<String>)> {
        self.tries
            .iter()
            .flat_map(|(r, t)| t.tails().into_iter().map(move |tail| (r.clone(), tail)))
            .collect()
    }

    /// Share of `samples` whose gold tail is stored under the gold relation:
    /// the recall ceiling the inference-mode tail mask imposes.
    pub fn max_possible_recall(&self, samples: &[Sample]) -> f64 {
        if samples.is_empty() {
            return 0.0;
        }
        let hits = samples
            .iter()
            .filter(|s| self.contains(s.gold.relation.as_str(), &s.gold.tail))
            .count();
        hits as f64 / samples.len() as f64
    }
}

pub fn build_relation_tail_index(train: &[Sample]) -> RelationTailIndex {
    RelationTailIndex::build(train)
}

/// Position within the flattened grammar.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Phase {
    /// Nothing emitted yet; `[HEAD]` comes next.
    Start,
    Head,
    /// Just emitted `[RELN]`.
    Relation,
    /// Just emitted the relation token; `[TAIL]` comes next.
    AfterRelation,
    Tail,
    Done,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecodeState {
    pub phase: Phase,
    pub head_len: usize,
    pub relation: Option<TokenId>,
    pub tail: Vec<TokenId>,
}

impl Default for DecodeState {
    fn default() -> Self {
        Self { phase: Phase::Start, head_len: 0, relation: None, tail: Vec::new() }
    }
}

impl DecodeState {
    /// State after consuming `prefix`; fails if the prefix leaves the grammar.
    pub fn from_prefix(prefix: &[TokenId], vocab: &Vocabulary) -> Result<Self> {
        prefix.iter().try_fold(Self::default(), |s, &t| s.advance(t, vocab))
    }

    pub fn advance(&self, token: TokenId, vocab: &Vocabulary) -> Result<Self> {
        let bad = || Error::InvalidState(format!("token {:?} not allowed in {:?}", vocab.token(token), self.phase));
        let mut next = self.clone();
        match self.phase {
            Phase::Start if token == HEAD_ID => next.phase = Phase::Head,
            Phase::Head if vocab.is_text(token) => next.head_len += 1,
            Phase::Head if token == RELN_ID && self.head_len > 0 => next.phase = Phase::Relation,
            Phase::Relation if vocab.is_relation(token) => {
                next.phase = Phase::AfterRelation;
                next.relation = Some(token);
            }
            Phase::AfterRelation if token == TAIL_ID => next.phase = Phase::Tail,
            Phase::Tail if vocab.is_text(token) => next.tail.push(token),
            Phase::Tail if token == EOS_ID && !self.tail.is_empty() => next.phase = Phase::Done,
            _ => return Err(bad()),
        }
        Ok(next)
    }
}

/// Sorted, de-duplicated text-token ids of the sentence (unknown words excluded).
pub fn sentence_text_ids(sentence_ids: &[TokenId], vocab: &Vocabulary) -> Vec<TokenId> {
    let mut ids: Vec<TokenId> = sentence_ids.iter().copied().filter(|&t| t != UNK_ID && vocab.is_text(t)).collect();
    ids.sort_unstable();
    ids.dedup();
    ids
}

/// Tokens the constrained grammar permits next, sorted ascending.
pub fn allowed_tokens(
    state: &DecodeState,
    config: &DecodeConfig,
    sentence_ids: &[TokenId],
    index: &RelationTailIndex,
    vocab: &Vocabulary,
) -> Result<Vec<TokenId>> {
    let mut out = match state.phase {
        Phase::Start => vec![HEAD_ID],
        Phase::Head => {
            let mut ids = match config.mode {
                Task::Extraction => sentence_text_ids(sentence_ids, vocab),
                Task::Inference => vocab.text_ids().collect(),
            };
            if state.head_len > 0 {
                ids.push(RELN_ID);
            }
            ids
        }
        Phase::Relation => vocab.relation_ids().collect(),
        Phase::AfterRelation => vec![TAIL_ID],
        Phase::Tail => {
            let mut ids = match config.mode {
                Task::Extraction if config.strict_span_tails => span_continuations(&state.tail, sentence_ids, vocab),
                Task::Extraction => sentence_text_ids(sentence_ids, vocab),
                Task::Inference => {
                    let relation = state
                        .relation
                        .ok_or_else(|| Error::InvalidState("tail phase without a relation".into()))?;
                    trie_continuations(index, vocab.token(relation), &state.tail, vocab)
                }
            };
            let can_stop = !state.tail.is_empty()
                && match config.mode {
                    Task::Extraction => true,
                    Task::Inference => {
                        let rel = vocab.token(state.relation.unwrap_or(UNK_ID));
                        index.contains(rel, &vocab.decode(&state.tail))
                    }
                };
            if can_stop {
                ids.push(EOS_ID);
            }
            ids
        }
        Phase::Done => return Err(Error::InvalidState("sequence already complete".into())),
    };
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

fn span_continuations(tail: &[TokenId], sentence_ids: &[TokenId], vocab: &Vocabulary) -> Vec<TokenId> {
    if tail.is_empty() {
        return sentence_text_ids(sentence_ids, vocab);
    }
    let n = tail.len();
    let mut out = Vec::new();
    for end in n..sentence_ids.len() {
        if sentence_ids[end - n..end] == *tail {
            let next = sentence_ids[end];
            if next != UNK_ID && vocab.is_text(next) {
                out.push(next);
            }
        }
    }
    out
}

fn trie_continuations(index: &RelationTailIndex, relation: &str, tail: &[TokenId], vocab: &Vocabulary) -> Vec<TokenId> {
    let Some(trie) = index.trie(relation) else {
        return Vec::new();
    };
    match trie.continuations(&vocab.decode(tail)) {
        Some((children, _)) => children.into_iter().filter_map(|t| vocab.id(t)).collect(),
        None => Vec::new(),
    }
}

/// One decoded sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    /// Flattened tokens, `[EOS]` excluded.
    pub tokens: Vec<String>,
    /// Ranking score: summed (or length-normalized) log-probability.
    pub generator_score: f64,
    /// `None` when the tokens do not parse as a triple.
    pub triple: Option<Triple>,
    /// 1-based position in the candidate list.
    pub rank: usize,
}

impl Candidate {
    pub fn is_well_formed(&self) -> bool {
        self.triple.is_some()
    }
}

/// The top-L candidates for one utterance. Empty when decoding found no
/// valid sequence, which the pipeline treats as an abstention.
#[derive(Debug, Clone, PartialEq)]
pub struct CandidateSet {
    pub source_id: String,
    pub candidates: Vec<Candidate>,
}

struct Hyp {
    tokens: Vec<TokenId>,
    logp: f64,
    state: DecodeState,
}

fn rank_score(logp: f64, len: usize, config: &DecodeConfig) -> f64 {
    if config.length_normalized {
        logp / len.max(1) as f64
    } else {
        logp
    }
}

/// Score-descending, then token-id lexicographic.
fn cmp_ranked(a: (f64, &[TokenId]), b: (f64, &[TokenId])) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// Beam search returning up to `config.candidates` complete sequences.
pub fn beam_decode(
    scorer: &dyn Scorer,
    sentence: &[String],
    config: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<Vec<Candidate>> {
    config.validate()?;
    let vocab = scorer.vocab();
    let sentence_ids = vocab.encode(sentence);
    let mut context = sentence_ids.clone();
    context.push(SEP_ID);
    let all_ids: Vec<TokenId> = (0..vocab.len() as TokenId).collect();

    let mut live = vec![Hyp { tokens: Vec::new(), logp: 0.0, state: DecodeState::default() }];
    let mut finished: Vec<(Vec<TokenId>, f64)> = Vec::new();

    for _ in 0..config.max_len {
        let mut exts: Vec<(f64, f64, usize, TokenId)> = Vec::new();
        for (hi, hyp) in live.iter().enumerate() {
            let mut ctx = context.clone();
            ctx.extend_from_slice(&hyp.tokens);
            let scores = scorer.next_token_scores(&ctx)?;
            let allowed = if config.constrained {
                allowed_tokens(&hyp.state, config, &sentence_ids, index, vocab)?
            } else {
                all_ids.clone()
            };
            for (tok, lp) in masked_log_softmax(&scores, &allowed) {
                if lp.is_finite() {
                    let logp = hyp.logp + lp;
                    exts.push((rank_score(logp, hyp.tokens.len() + 1, config), logp, hi, tok));
                }
            }
        }
        if exts.is_empty() {
            break;
        }
        exts.sort_by(|a, b| {
            b.0.total_cmp(&a.0)
                .then_with(|| live[a.2].tokens.cmp(&live[b.2].tokens))
                .then_with(|| a.3.cmp(&b.3))
        });

        let mut next = Vec::with_capacity(config.beam);
        for (r, &(_, logp, hi, tok)) in exts.iter().enumerate() {
            if next.len() == config.beam {
                break;
            }
            let hyp = &live[hi];
            if tok == EOS_ID {
                if r < config.beam {
                    finished.push((hyp.tokens.clone(), logp));
                }
                continue;
            }
            let state = if config.constrained {
                hyp.state.advance(tok, vocab)?
            } else {
                hyp.state.clone()
            };
            let mut tokens = hyp.tokens.clone();
            tokens.push(tok);
            next.push(Hyp { tokens, logp, state });
        }
        live = next;
        if live.is_empty() {
            break;
        }
        if !config.length_normalized && finished.len() >= config.candidates {
            let mut scores: Vec<f64> = finished.iter().map(|f| f.1).collect();
            scores.sort_by(|a, b| b.total_cmp(a));
            let worst_kept = scores[config.candidates - 1];
            let best_live = live.iter().map(|h| h.logp).fold(f64::NEG_INFINITY, f64::max);
            // log-probabilities only decrease, so no live beam can overtake
            if best_live < worst_kept {
                break;
            }
        }
    }

    if finished.is_empty() {
        return Err(Error::NoValidCandidate);
    }
    let mut ranked: Vec<(f64, Vec<TokenId>)> = finished
        .into_iter()
        .map(|(tokens, logp)| (rank_score(logp, tokens.len() + 1, config), tokens))
        .collect();
    ranked.sort_by(|a, b| cmp_ranked((a.0, &a.1), (b.0, &b.1)));
    ranked.dedup_by(|a, b| a.1 == b.1);
    ranked.truncate(config.candidates);

    Ok(ranked
        .into_iter()
        .enumerate()
        .map(|(i, (score, ids))| {
            let tokens = vocab.decode(&ids);
            let triple = parse_flattened(&tokens, registry).ok();
            Candidate { tokens, generator_score: score, triple, rank: i + 1 }
        })
        .collect())
}

/// Decode every sample in parallel. A sample whose masks admit no sequence
/// gets an empty candidate set; other errors abort.
pub fn decode_samples(
    scorer: &dyn Scorer,
    samples: &[Sample],
    config: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<Vec<CandidateSet>> {
    samples
        .par_iter()
        .map(|s| {
            let candidates = match beam_decode(scorer, &s.sentence_tokens(), config, index, registry) {
                Ok(c) => c,
                Err(Error::NoValidCandidate) => Vec::new(),
                Err(e) => return Err(e),
            };
            Ok(CandidateSet { source_id: s.source_id.clone(), candidates })
        })
        .collect()
}

/// Share of golds whose triple appears among the top-`k` candidates.
pub fn max_possible_recall(sets: &[CandidateSet], golds: &[Sample], k: usize) -> f64 {
    if golds.is_empty() {
        return 0.0;
    }
    let by_id: HashMap<&str, &CandidateSet> = sets.iter().map(|s| (s.source_id.as_str(), s)).collect();
    let hits = golds
        .iter()
        .filter(|g| {
            by_id.get(g.source_id.as_str()).is_some_and(|set| {
                set.candidates
                    .iter()
                    .filter(|c| c.rank <= k)
                    .any(|c| c.triple.as_ref() == Some(&g.gold))
            })
        })
        .count();
    hits as f64 / golds.len() as f64
}

/// Line-delimited on-disk form of one candidate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateRecord {
    pub source_id: String,
    pub rank: usize,
    pub tokens: Vec<String>,
    pub generator_score: f64,
    pub parsed_ok: bool,
    pub head: Option<String>,
    pub relation: Option<String>,
    pub tail: Option<String>,
}

pub fn to_records(sets: &[CandidateSet]) -> Vec<CandidateRecord> {
    sets.iter()
        .flat_map(|set| {
            set.candidates.iter().map(move |c| CandidateRecord {
                source_id: set.source_id.clone(),
                rank: c.rank,
                tokens: c.tokens.clone(),
                generator_score: c.generator_score,
                parsed_ok: c.triple.is_some(),
                head: c.triple.as_ref().map(Triple::head_text),
                relation: c.triple.as_ref().map(|t| t.relation.to_string()),
                tail: c.triple.as_ref().map(Triple::tail_text),
            })
        })
        .collect()
}

/// Group records back into candidate sets, keeping first-appearance order
/// of source ids and re-parsing tokens against `registry`.
pub fn from_records(records: Vec<CandidateRecord>, registry: &RelationRegistry) -> Vec<CandidateSet> {
    let mut order: Vec<String> = Vec::new();
    let mut groups: HashMap<String, Vec<Candidate>> = HashMap::new();
    for rec in records {
        let triple = parse_flattened(&rec.tokens, registry).ok();
        let cand = Candidate { tokens: rec.tokens, generator_score: rec.generator_score, triple, rank: rec.rank };
        groups
            .entry(rec.source_id.clone())
            .or_insert_with(|| {
                order.push(rec.source_id.clone());
                Vec::new()
            })
            .push(cand);
    }
    order
        .into_iter()
        .map(|id| {
            let mut candidates = groups.remove(&id).unwrap_or_default();
            candidates.sort_by_key(|c| c.rank);
            CandidateSet { source_id: id, candidates }
        })
        .collect()
}
