//! Lambda store: an append-only speed log, batch compaction into immutable
//! snapshots, and a serving layer that answers from both.

mod codec;
mod store;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::triple::{SemanticTriple, SpoKey, TimeWindow, TripleFilter};

pub use store::{CompactionPolicy, LambdaStore, StoreStats};

#[derive(Debug, Error)]
pub enum LambdaError {
    #[error("out-of-order append: {got_ms} ms is older than the log tail at {tail_ms} ms")]
    OutOfOrder { tail_ms: u64, got_ms: u64 },
    #[error("store i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("corrupt snapshot {path}: {msg}")]
    Corrupt { path: String, msg: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum LogEntry {
    Triple(SemanticTriple),
    /// Marks the end of `epoch`.
    Reset { epoch: u64, at_ms: u64 },
}

impl LogEntry {
    pub fn ts_ms(&self) -> u64 {
        match self {
            LogEntry::Triple(t) => t.observed_at_ms,
            LogEntry::Reset { at_ms, .. } => *at_ms,
        }
    }
}

/// Compacted, deduplicated history up to a log offset. Never mutated once
/// built.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct BatchSnapshot {
    pub snapshot_id: u64,
    pub covers_up_to_ms: u64,
    /// Log entries with a smaller offset are folded into this snapshot.
    pub covers_offset: u64,
    /// Sorted by (observed_at, id); unique by (s, p, o, observed_at).
    pub triples: Vec<SemanticTriple>,
    /// (closed epoch, at_ms) of every reset marker folded in.
    pub resets: Vec<(u64, u64)>,
    /// CRC-32 of the serialized body.
    pub checksum: u32,
}

type FactKey = (SpoKey, u64);

/// Keeps the highest-confidence copy per fact key; the first copy wins ties.
fn merge_into(acc: &mut BTreeMap<FactKey, SemanticTriple>, t: &SemanticTriple) {
    match acc.entry(t.fact_key()) {
        std::collections::btree_map::Entry::Vacant(v) => {
            v.insert(t.clone());
        }
        std::collections::btree_map::Entry::Occupied(mut o) => {
            if t.confidence > o.get().confidence {
                o.insert(t.clone());
            }
        }
    }
}

fn sorted(acc: BTreeMap<FactKey, SemanticTriple>) -> Vec<SemanticTriple> {
    let mut out: Vec<SemanticTriple> = acc.into_values().collect();
    out.sort_by_key(|t| (t.observed_at_ms, t.id));
    out
}

/// Folds `entries` (the log from `previous.covers_offset` up to `cut_offset`)
/// into a new snapshot. Returns `previous` unchanged when the entries would
/// not move `covers_up_to_ms` forward.
pub fn batch_compact(previous: &BatchSnapshot, entries: &[LogEntry], cut_offset: u64) -> BatchSnapshot {
    let newest = entries.iter().map(LogEntry::ts_ms).max();
    let advances = match newest {
        Some(ts) => previous.snapshot_id == 0 || ts > previous.covers_up_to_ms,
        None => false,
    };
    if !advances {
        return previous.clone();
    }
    let mut acc = BTreeMap::new();
    for t in &previous.triples {
        merge_into(&mut acc, t);
    }
    let mut resets = previous.resets.clone();
    for e in entries {
        match e {
            LogEntry::Triple(t) => merge_into(&mut acc, t),
            LogEntry::Reset { epoch, at_ms } => resets.push((*epoch, *at_ms)),
        }
    }
    let mut snap = BatchSnapshot {
        snapshot_id: previous.snapshot_id + 1,
        covers_up_to_ms: newest.unwrap_or(0).max(previous.covers_up_to_ms),
        covers_offset: cut_offset,
        triples: sorted(acc),
        resets,
        checksum: 0,
    };
    snap.checksum = store::body_checksum(&snap);
    snap
}

/// Filtered, windowed union of a snapshot and the log entries after it.
/// Copies are merged before `filter` and `epoch` apply, so the result does
/// not depend on where the last compaction cut the log.
pub fn serve_from(
    snapshot: &BatchSnapshot,
    tail: &[LogEntry],
    filter: &dyn TripleFilter,
    window: TimeWindow,
    epoch: Option<u64>,
) -> Vec<SemanticTriple> {
    let mut acc = BTreeMap::new();
    let lo = snapshot.triples.partition_point(|t| t.observed_at_ms < window.start_ms);
    for t in snapshot.triples[lo..].iter().take_while(|t| t.observed_at_ms <= window.end_ms) {
        merge_into(&mut acc, t);
    }
    for e in tail {
        if let LogEntry::Triple(t) = e {
            if window.contains(t.observed_at_ms) {
                merge_into(&mut acc, t);
            }
        }
    }
    acc.retain(|_, t| epoch.is_none_or(|e| t.epoch == e) && filter.accept(t));
    sorted(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::fixtures::{triple, val};
    use crate::triple::TriplePattern;

    fn tr(id: u64, p: &str, t: u64) -> LogEntry {
        LogEntry::Triple(triple(id, ("p1", "person"), p, val("road"), t))
    }

    #[test]
    fn compacting_nothing_is_identity() {
        let base = batch_compact(&BatchSnapshot::default(), &[tr(1, "lying_on", 10)], 1);
        assert_eq!(batch_compact(&base, &[], 1), base);
    }

    #[test]
    fn compaction_dedups_by_fact_key() {
        let mut dup = triple(3, ("p1", "person"), "lying_on", val("road"), 10);
        dup.confidence = 0.5;
        let s1 = batch_compact(&BatchSnapshot::default(), &[tr(1, "lying_on", 10), tr(2, "near", 20)], 2);
        let s2 = batch_compact(&s1, &[LogEntry::Triple(dup), tr(4, "near", 30)], 4);
        assert_eq!(s2.triples.len(), 2 + 2 - 1);
        assert!(s2.covers_up_to_ms > s1.covers_up_to_ms);
        assert_eq!(s2.snapshot_id, 2);
        assert_eq!(s2.covers_offset, 4);
    }

    #[test]
    fn serve_matches_snapshot_alone_when_tail_empty() {
        let s = batch_compact(&BatchSnapshot::default(), &[tr(1, "lying_on", 10), tr(2, "near", 20)], 2);
        let all = serve_from(&s, &[], &TriplePattern::any(), TimeWindow::ALL, None);
        assert_eq!(all, s.triples);
        let none = serve_from(&s, &[], &TriplePattern::any(), TimeWindow::new(11, 19).unwrap(), None);
        assert!(none.is_empty());
    }
}
