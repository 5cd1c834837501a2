//! Domain knowledge base, the epoch-segmented temporal knowledge graph, and
//! the builder that folds backend answers into it.

mod builder;
mod graph;
pub(crate) mod kb;

pub use builder::{build, BuildDelta, Update};
pub use graph::{
    query_sorted, Archive, KgConfig, KgSnapshot, ResetReason, TemporalKnowledgeGraph, Upsert,
};
pub use kb::{init_kb, parse_kb, KbError, KnowledgeBase, QuestionTemplate, Relation, DEFAULT_PRIOR};
