//! Generator training: minibatch AdamW on the flattened-triple likelihood,
//! with periodic dev validation and best-checkpoint selection.

use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::decode::{decode_samples, DecodeConfig, RelationTailIndex};
use crate::error::{Error, Result};
use crate::eval::{micro_prf, Prediction};
use crate::loglinear::LogLinearScorer;
use crate::optim::{AdamW, GradBuffer, LinearSchedule};
use crate::relation::RelationRegistry;
use crate::scoring::{build_training_sequence, TrainingSequence};
use crate::triple::{Sample, Task};
use crate::vocab::Vocabulary;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ValidationMetric {
    /// Exact-match F1 of the top decoded candidate on dev.
    DevF1,
    /// Mean per-sequence negative log-likelihood on dev.
    DevLoss,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub task: Task,
    pub lr: f64,
    pub max_epochs: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Fraction of an epoch between validations.
    pub validation_interval: f64,
    pub validation_metric: ValidationMetric,
    pub weight_decay: f64,
    /// Stop after this many optimizer steps, if set.
    pub max_steps: Option<usize>,
    /// Validate on at most this many dev samples, if set.
    pub max_validation_samples: Option<usize>,
    /// Decoding used for dev F1; unconstrained by default.
    pub decode: DecodeConfig,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self::for_task(Task::Extraction)
    }
}

impl GeneratorConfig {
    pub fn for_task(task: Task) -> Self {
        Self {
            task,
            lr: default_generator_lr(task),
            max_epochs: 8,
            warmup_steps: 100,
            batch_size: 16,
            seed: 40,
            validation_interval: 0.25,
            validation_metric: ValidationMetric::DevF1,
            weight_decay: 0.0,
            max_steps: None,
            max_validation_samples: None,
            decode: DecodeConfig { constrained: false, ..DecodeConfig::for_task(task) },
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if !(self.validation_interval > 0.0 && self.validation_interval <= 1.0) {
            return Err(Error::Config("validation_interval must be in (0, 1]".into()));
        }
        if self.decode.mode != self.task {
            return Err(Error::Config("decode mode differs from the training task".into()));
        }
        self.decode.validate()
    }
}

pub fn default_generator_lr(task: Task) -> f64 {
    match task {
        Task::Extraction => 7.5e-4,
        Task::Inference => 2.5e-3,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationPoint {
    pub step: usize,
    pub epoch: f64,
    pub lr: f64,
    pub train_loss: f64,
    pub dev_loss: Option<f64>,
    pub dev_f1: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainedGenerator {
    pub model: LogLinearScorer,
    pub best: Option<ValidationPoint>,
    pub history: Vec<ValidationPoint>,
    pub steps: usize,
}

/// Mean per-sequence NLL over `seqs`.
pub fn mean_nll(model: &LogLinearScorer, seqs: &[TrainingSequence]) -> f64 {
    if seqs.is_empty() {
        return 0.0;
    }
    let losses: Vec<f64> = seqs.par_iter().map(|s| model.nll(s)).collect();
    let total: f64 = losses.iter().sum();
    total / seqs.len() as f64
}

/// Exact-match F1 of each sample's top decoded candidate.
pub fn top1_f1(
    model: &LogLinearScorer,
    dev: &[Sample],
    decode: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<f64> {
    let sets = decode_samples(model, dev, decode, index, registry)?;
    let preds: Vec<Prediction> = sets
        .into_iter()
        .map(|set| Prediction {
            triple: set.candidates.first().and_then(|c| c.triple.clone()),
            generator_score: set.candidates.first().map(|c| c.generator_score),
            rerank_score: None,
            source_id: set.source_id,
        })
        .collect();
    Ok(micro_prf(&preds, dev)?.f1)
}

pub fn training_sequences(samples: &[Sample], vocab: &Vocabulary, registry: &RelationRegistry) -> Result<Vec<TrainingSequence>> {
    samples.iter().map(|s| build_training_sequence(s, vocab, registry)).collect()
}

/// Train a generator on `train`, validating on `dev`.
///
/// The returned model is the best validated checkpoint, or the final model
/// when `dev` is empty.
pub fn train_generator(
    train: &[Sample],
    dev: &[Sample],
    vocab: Vocabulary,
    registry: &RelationRegistry,
    index: &RelationTailIndex,
    cfg: &GeneratorConfig,
) -> Result<TrainedGenerator> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let seqs = training_sequences(train, &vocab, registry)?;
    let dev = match cfg.max_validation_samples {
        Some(n) => &dev[..n.min(dev.len())],
        None => dev,
    };
    let dev_seqs = training_sequences(dev, &vocab, registry)?;
    let mut model = LogLinearScorer::new(vocab, &seqs);

    let steps_per_epoch = seqs.len().div_ceil(cfg.batch_size);
    let mut total_steps = steps_per_epoch * cfg.max_epochs;
    if let Some(m) = cfg.max_steps {
        total_steps = total_steps.min(m);
    }
    let schedule = LinearSchedule { base_lr: cfg.lr, warmup_steps: cfg.warmup_steps, total_steps };
    let val_every = ((steps_per_epoch as f64 * cfg.validation_interval).round() as usize).max(1);
    let mut opt = AdamW::new(model.num_params(), cfg.weight_decay);
    let mut buf = GradBuffer::new(model.num_params());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    let validate = |model: &LogLinearScorer, step: usize, train_loss: f64| -> Result<ValidationPoint> {
        let dev_loss = mean_nll(model, &dev_seqs);
        if !dev_loss.is_finite() {
            return Err(Error::Divergence(format!("dev loss {dev_loss} at step {step}")));
        }
        let dev_f1 = match cfg.validation_metric {
            ValidationMetric::DevF1 => Some(top1_f1(model, dev, &cfg.decode, index, registry)?),
            ValidationMetric::DevLoss => None,
        };
        Ok(ValidationPoint {
            step,
            epoch: step as f64 / steps_per_epoch as f64,
            lr: schedule.lr(step.saturating_sub(1)),
            train_loss,
            dev_loss: Some(dev_loss),
            dev_f1,
        })
    };
    let better = |a: &ValidationPoint, b: &ValidationPoint| match cfg.validation_metric {
        ValidationMetric::DevF1 => a.dev_f1 > b.dev_f1,
        ValidationMetric::DevLoss => a.dev_loss < b.dev_loss,
    };

    let mut history = Vec::new();
    let mut best: Option<(ValidationPoint, LogLinearScorer)> = None;
    if total_steps == 0 && !dev.is_empty() {
        let point = validate(&model, 0, f64::NAN)?;
        history.push(point.clone());
        best = Some((point, model.clone()));
    }

    let mut step = 0;
    let mut window_loss = 0.0;
    let mut window_n = 0usize;
    'outer: for _epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            if step == total_steps {
                break 'outer;
            }
            let results: Vec<(f64, Vec<(u32, f32)>)> = batch.par_iter().map(|&i| model.nll_and_grad(&seqs[i])).collect();
            let mut loss = 0.0;
            for (l, grad) in results {
                loss += l;
                for (i, g) in grad {
                    buf.add(i, g);
                }
            }
            if !loss.is_finite() {
                return Err(Error::Divergence(format!("training loss {loss} at step {step}")));
            }
            buf.scale(1.0 / batch.len() as f32);
            let lr = schedule.lr(step);
            opt.step(model.params_mut(), &buf.grads, &buf.touched, lr);
            buf.clear();
            step += 1;
            window_loss += loss;
            window_n += batch.len();

            if !dev.is_empty() && (step % val_every == 0 || step == total_steps) {
                let point = validate(&model, step, window_loss / window_n as f64)?;
                log::info!(
                    "step {step} epoch {:.2} train_loss {:.4} dev_loss {:.4} dev_f1 {:?}",
                    point.epoch,
                    point.train_loss,
                    point.dev_loss.unwrap_or(f64::NAN),
                    point.dev_f1
                );
                window_loss = 0.0;
                window_n = 0;
                if best.as_ref().is_none_or(|(b, _)| better(&point, b)) {
                    best = Some((point.clone(), model.clone()));
                }
                history.push(point);
            }
        }
    }

    Ok(match best {
        Some((point, best_model)) => TrainedGenerator { model: best_model, best: Some(point), history, steps: step },
        None => TrainedGenerator { model, best: None, history, steps: step },
    })
}

/// Write model weights, vocabulary, the training config and the validation
/// history into `dir`.
pub fn save_checkpoint(dir: &Path, trained: &TrainedGenerator, cfg: &GeneratorConfig) -> Result<()> {
    trained.model.save(dir)?;
    let cfg_path = dir.join("config.json");
    let json = serde_json::to_string_pretty(cfg).map_err(|e| Error::Format(e.to_string()))?;
    std::fs::write(&cfg_path, json).map_err(|e| Error::io(&cfg_path, e))?;
    crate::io::write_jsonl(&dir.join("metrics.jsonl"), &trained.history)
}
