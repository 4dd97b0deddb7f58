//! Persona attribute extraction and inference from dialogue utterances.
//!
//! Utterances are mapped to `(head, relation, tail)` triples drawn from a
//! closed relation inventory. A generator scores flattened triples token by
//! token, a constrained beam search proposes candidates, and a binary
//! reranker picks the final prediction.

pub mod analysis;
pub mod dataset;
pub mod decode;
pub mod error;
pub mod eval;
pub mod generator;
pub mod io;
pub mod loglinear;
pub mod manifest;
pub mod optim;
pub mod pipeline;
pub mod relation;
pub mod rerank;
pub mod scoring;
pub mod synthetic;
pub mod text;
pub mod triple;
pub mod vocab;

pub use error::{Error, Result};
pub use relation::{Relation, RelationRegistry};
pub use triple::{Sample, Split, Task, Triple};
pub use vocab::{TokenId, Vocabulary};
