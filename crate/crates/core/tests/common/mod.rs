//! Shared fixtures and property checks for the integration and acceptance
//! test targets.

#![allow(dead_code)]

pub mod props;

use std::sync::OnceLock;

use persona_attr::dataset::{build, BuiltDatasets};
use persona_attr::decode::{decode_samples, CandidateSet, DecodeConfig, RelationTailIndex};
use persona_attr::generator::training_sequences;
use persona_attr::pipeline::{build_vocabulary, split_of};
use persona_attr::rerank::{build_rerank_dataset, train_reranker, Reranker, RerankerConfig};
use persona_attr::scoring::BigramScorer;
use persona_attr::synthetic::{generate, SyntheticConfig};
use persona_attr::{RelationRegistry, Sample, Split, Task, Vocabulary};

pub fn registry() -> &'static RelationRegistry {
    static R: OnceLock<RelationRegistry> = OnceLock::new();
    R.get_or_init(RelationRegistry::bundled)
}

pub fn corpus() -> &'static BuiltDatasets {
    static C: OnceLock<BuiltDatasets> = OnceLock::new();
    C.get_or_init(|| build(&generate(&SyntheticConfig::default()), registry(), true).unwrap())
}

/// Count-based scorer and index for one task of the synthetic corpus.
pub struct Toy {
    pub task: Task,
    pub train: Vec<Sample>,
    pub dev: Vec<Sample>,
    pub test: Vec<Sample>,
    pub vocab: Vocabulary,
    pub index: RelationTailIndex,
    pub scorer: BigramScorer,
}

impl Toy {
    pub fn new(task: Task) -> Self {
        let data = corpus().task(task);
        let (train, dev, test) = (split_of(data, Split::Train), split_of(data, Split::Dev), split_of(data, Split::Test));
        let vocab = build_vocabulary(registry(), &[data]);
        let index = RelationTailIndex::build(&train);
        let seqs = training_sequences(&train, &vocab, registry()).unwrap();
        let scorer = BigramScorer::fit(vocab.clone(), &seqs, 0.1);
        Self { task, train, dev, test, vocab, index, scorer }
    }

    pub fn decode(&self, samples: &[Sample], constrained: bool) -> Vec<CandidateSet> {
        let cfg = DecodeConfig { constrained, ..DecodeConfig::for_task(self.task) };
        decode_samples(&self.scorer, samples, &cfg, &self.index, registry()).unwrap()
    }

    /// Reranker trained on the toy scorer's train-split candidates.
    pub fn reranker(&self) -> Reranker {
        let train = build_rerank_dataset(&self.decode(&self.train, true), &self.train).unwrap();
        let dev = build_rerank_dataset(&self.decode(&self.dev, true), &self.dev).unwrap();
        let cfg = RerankerConfig { lr: 0.05, ..RerankerConfig::default() };
        train_reranker(&train, &dev, &cfg).unwrap().model
    }
}
