//! The pipeline config file: one TOML document with a section per stage.

use std::path::{Path, PathBuf};

use persona_attr::decode::DecodeConfig;
use persona_attr::generator::{default_generator_lr, GeneratorConfig, ValidationMetric};
use persona_attr::rerank::RerankerConfig;
use persona_attr::Task;
use serde::{Deserialize, Serialize};

/// Overrides `paths.resources`.
pub const RESOURCES_ENV: &str = "PERSONA_ATTR_RESOURCES";

/// A problem with the configuration rather than with a stage.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub seed: u64,
    pub task: Task,
    pub paths: Paths,
    pub dataset: DatasetSection,
    pub generator: GeneratorSection,
    pub decode: DecodeSection,
    pub reranker: RerankerConfig,
    pub analysis: AnalysisSection,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 40,
            task: Task::Extraction,
            paths: Paths::default(),
            dataset: DatasetSection::default(),
            generator: GeneratorSection::default(),
            decode: DecodeSection::default(),
            reranker: RerankerConfig::default(),
            analysis: AnalysisSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub raw: Option<PathBuf>,
    pub resources: Option<PathBuf>,
    pub parses: Option<PathBuf>,
    pub work_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self { raw: None, resources: None, parses: None, work_dir: PathBuf::from("work") }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DatasetSection {
    pub dedup: bool,
}

impl Default for DatasetSection {
    fn default() -> Self {
        Self { dedup: true }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSection {
    pub lr_extraction: f64,
    pub lr_inference: f64,
    pub max_epochs: usize,
    pub warmup_steps: usize,
    pub batch_size: usize,
    pub validation_interval: f64,
    pub validation_metric: ValidationMetric,
    pub weight_decay: f64,
    pub max_steps: Option<usize>,
    pub max_validation_samples: Option<usize>,
}

impl Default for GeneratorSection {
    fn default() -> Self {
        let g = GeneratorConfig::default();
        Self {
            lr_extraction: default_generator_lr(Task::Extraction),
            lr_inference: default_generator_lr(Task::Inference),
            max_epochs: g.max_epochs,
            warmup_steps: g.warmup_steps,
            batch_size: g.batch_size,
            validation_interval: g.validation_interval,
            validation_metric: g.validation_metric,
            weight_decay: g.weight_decay,
            max_steps: g.max_steps,
            max_validation_samples: g.max_validation_samples,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeSection {
    pub beam: usize,
    pub candidates: usize,
    pub max_len: usize,
    pub strict_span_tails: bool,
    pub length_normalized: bool,
}

impl Default for DecodeSection {
    fn default() -> Self {
        let d = DecodeConfig::default();
        Self {
            beam: d.beam,
            candidates: d.candidates,
            max_len: d.max_len,
            strict_span_tails: d.strict_span_tails,
            length_normalized: d.length_normalized,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSection {
    /// Fail when a tail cannot be located in its parse.
    pub strict: bool,
}

impl Default for AnalysisSection {
    fn default() -> Self {
        Self { strict: true }
    }
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| ConfigError(format!("cannot read config {}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))
    }

    pub fn decode(&self, task: Task, constrained: bool) -> DecodeConfig {
        DecodeConfig {
            mode: task,
            constrained,
            candidates: self.decode.candidates,
            beam: self.decode.beam,
            max_len: self.decode.max_len,
            strict_span_tails: self.decode.strict_span_tails,
            length_normalized: self.decode.length_normalized,
        }
    }

    pub fn generator(&self, task: Task, seed: u64) -> GeneratorConfig {
        let g = &self.generator;
        GeneratorConfig {
            task,
            lr: match task {
                Task::Extraction => g.lr_extraction,
                Task::Inference => g.lr_inference,
            },
            max_epochs: g.max_epochs,
            warmup_steps: g.warmup_steps,
            batch_size: g.batch_size,
            seed,
            validation_interval: g.validation_interval,
            validation_metric: g.validation_metric,
            weight_decay: g.weight_decay,
            max_steps: g.max_steps,
            max_validation_samples: g.max_validation_samples,
            decode: self.decode(task, false),
        }
    }

    pub fn reranker(&self, seed: u64) -> RerankerConfig {
        RerankerConfig { seed, ..self.reranker.clone() }
    }

    /// Resource directory: the environment override, else the config path.
    pub fn resources(&self) -> Option<PathBuf> {
        std::env::var_os(RESOURCES_ENV).map(PathBuf::from).or_else(|| self.paths.resources.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Seeds(pub Vec<u64>);

/// `40`, `40,42` or `40-44`.
pub fn parse_seed_list(s: &str) -> Result<Seeds, String> {
    parse_seeds(s).map(Seeds)
}

pub fn parse_seeds(s: &str) -> Result<Vec<u64>, String> {
    let num = |x: &str| x.trim().parse::<u64>().map_err(|_| format!("invalid seed {x:?}"));
    let seeds = if let Some((a, b)) = s.split_once('-') {
        let (a, b) = (num(a)?, num(b)?);
        if a > b {
            return Err(format!("empty seed range {s:?}"));
        }
        (a..=b).collect()
    } else {
        s.split(',').map(num).collect::<Result<Vec<_>, _>>()?
    };
    Ok(seeds)
}
