//! Dataset analyses: how inference tails relate to sentence words, and the
//! syntactic roles of extraction tails.

pub mod parses;
pub mod porter;
pub mod resources;

pub use parses::{
    non_noun_share, parse_parses, read_parses, render_histogram, tail_dependency_distribution, tail_pos_distribution,
    Histogram, ParsedSentence,
};
pub use porter::{same_stem, stem};
pub use resources::{
    load_resource_dir, render_coverage, transformation_coverage, CoverageReport, LexicalResource, ResourceKind,
};
