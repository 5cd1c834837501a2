//! framekg: a real-time retrieval engine for frame streams.
//!
//! Frames flow through an extraction pipeline (stream ingest, admission
//! scheduling, tiered question answering) into a knowledge pipeline that
//! folds the answers into an epoch-segmented temporal knowledge graph.
//! Standing queries are matched incrementally against graph deltas and raise
//! alerts; interactive queries merge the live graph with the lambda store
//! (compacted snapshots plus an append-only speed log).
//!
//! The crate ships a deterministic virtual-clock mode in which the whole
//! engine is a pure function of its configuration and scenario, which is what
//! the test suites and the benchmark harness run on.

pub mod bench;
pub mod clock;
pub mod context;
pub mod engine;
pub mod inference;
pub mod ingest;
pub mod knowledge;
pub mod lambda;
pub mod query;
pub mod scheduler;
pub mod service;
pub mod textfmt;
pub mod triple;

pub use clock::{Clock, ClockMode, VirtualClock, WallClock};
pub use engine::{Engine, EngineConfig, EngineError, Mode};
pub use ingest::{FrameRef, Scenario};
pub use knowledge::{KnowledgeBase, TemporalKnowledgeGraph};
pub use triple::{Entity, Fact, Object, SemanticTriple, Term, TimeWindow, TriplePattern};
