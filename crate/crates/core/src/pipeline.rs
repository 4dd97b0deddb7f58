//! Generate-then-rerank prediction and the ablation harness.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::decode::{decode_samples, CandidateSet, DecodeConfig, RelationTailIndex};
use crate::error::{Error, Result};
use crate::eval::{micro_prf, Prediction, Prf};
use crate::relation::RelationRegistry;
use crate::rerank::{select_all, select_top, CandidateScorer};
use crate::scoring::Scorer;
use crate::triple::{Sample, Split};
use crate::vocab::Vocabulary;

/// Samples of one split, in order.
pub fn split_of(samples: &[Sample], split: Split) -> Vec<Sample> {
    samples.iter().filter(|s| s.split == split).cloned().collect()
}

/// Vocabulary over every sentence and entity token in `datasets`.
pub fn build_vocabulary(registry: &RelationRegistry, datasets: &[&[Sample]]) -> Vocabulary {
    let words = datasets.iter().flat_map(|d| d.iter()).flat_map(|s| {
        s.sentence
            .split(' ')
            .chain(s.gold.head.iter().map(String::as_str))
            .chain(s.gold.tail.iter().map(String::as_str))
    });
    Vocabulary::build(registry, words)
}

/// Decode candidates and pick one triple per sample, with the reranker when
/// given and the generator's top candidate otherwise.
pub fn predict(
    scorer: &dyn Scorer,
    reranker: Option<&dyn CandidateScorer>,
    samples: &[Sample],
    decode: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<(Vec<CandidateSet>, Vec<Prediction>)> {
    let sets = decode_samples(scorer, samples, decode, index, registry)?;
    let preds = match reranker {
        Some(r) => select_all(&sets, samples, r)?,
        None => sets.iter().map(select_top).collect(),
    };
    Ok((sets, preds))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    Full,
    /// Free decoding, reranked.
    NoConstraints,
    /// Constrained decoding, rank-1 candidate.
    NoReranker,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::Full, Variant::NoConstraints, Variant::NoReranker];

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Full => "full",
            Variant::NoConstraints => "no-constraints",
            Variant::NoReranker => "no-reranker",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown variant {s:?}")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: Variant,
    pub prf: Prf,
}

pub fn run_variant(
    variant: Variant,
    scorer: &dyn Scorer,
    reranker: &dyn CandidateScorer,
    samples: &[Sample],
    decode: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<Vec<Prediction>> {
    let (cfg, rerank) = match variant {
        Variant::Full => (DecodeConfig { constrained: true, ..decode.clone() }, Some(reranker)),
        Variant::NoConstraints => (DecodeConfig { constrained: false, ..decode.clone() }, Some(reranker)),
        Variant::NoReranker => (DecodeConfig { constrained: true, ..decode.clone() }, None),
    };
    Ok(predict(scorer, rerank, samples, &cfg, index, registry)?.1)
}

/// Score each variant on `samples`.
pub fn ablation_run(
    variants: &[Variant],
    scorer: &dyn Scorer,
    reranker: &dyn CandidateScorer,
    samples: &[Sample],
    decode: &DecodeConfig,
    index: &RelationTailIndex,
    registry: &RelationRegistry,
) -> Result<Vec<AblationRow>> {
    variants
        .iter()
        .map(|&variant| {
            let preds = run_variant(variant, scorer, reranker, samples, decode, index, registry)?;
            Ok(AblationRow { variant, prf: micro_prf(&preds, samples)? })
        })
        .collect()
}

pub fn render_ablation(rows: &[AblationRow]) -> String {
    let mut out = format!("{:<16} {:>6} {:>6} {:>6}\n", "variant", "P", "R", "F1");
    for r in rows {
        out.push_str(&format!(
            "{:<16} {:>6.1} {:>6.1} {:>6.1}\n",
            r.variant.as_str(),
            100.0 * r.prf.precision,
            100.0 * r.prf.recall,
            100.0 * r.prf.f1
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn variant_names_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.as_str().parse::<Variant>().unwrap(), v);
            assert_eq!(serde_json::to_string(&v).unwrap(), format!("\"{v}\""));
        }
        assert!("everything".parse::<Variant>().is_err());
    }
}
