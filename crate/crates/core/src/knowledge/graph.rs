use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::triple::{
    BBox, Entity, Object, Provenance, SemanticTriple, SpoKey, TimeWindow, TripleFilter,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct KgConfig {
    /// Repeated (s, p, o) observations closer than this merge into one triple.
    pub dedup_window_ms: u64,
    /// Facts below this confidence are filtered out before insertion.
    pub confidence_threshold: f64,
}

impl Default for KgConfig {
    fn default() -> Self {
        Self {
            dedup_window_ms: 2_000,
            confidence_threshold: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResetReason {
    EventConcluded,
    SteadyState,
}

impl ResetReason {
    pub fn as_str(self) -> &'static str {
        match self {
            ResetReason::EventConcluded => "event_concluded",
            ResetReason::SteadyState => "steady_state",
        }
    }
}

/// Live triples of a closed epoch, handed to the lambda store on reset.
#[derive(Debug, Clone)]
pub struct Archive {
    pub closed_epoch: u64,
    pub reason: ResetReason,
    pub at_ms: u64,
    pub triples: Vec<SemanticTriple>,
}

/// Outcome of offering one observation to the graph.
#[derive(Debug, Clone, PartialEq)]
pub enum Upsert {
    Inserted(SemanticTriple),
    /// Merged into an existing triple; `raised` is true when the stored
    /// confidence went up.
    Merged { triple: SemanticTriple, raised: bool },
}

/// Time-ordered triple store for the current epoch.
#[derive(Debug, Clone)]
pub struct TemporalKnowledgeGraph {
    config: KgConfig,
    epoch: u64,
    epoch_started_ms: u64,
    triples: BTreeMap<(u64, u64), SemanticTriple>,
    by_id: HashMap<u64, u64>,
    entity_index: BTreeMap<String, BTreeSet<u64>>,
    latest: HashMap<SpoKey, u64>,
    next_id: u64,
    archived: u64,
    noise: u64,
    filtered: u64,
}

impl Default for TemporalKnowledgeGraph {
    fn default() -> Self {
        Self::new(KgConfig::default())
    }
}

impl TemporalKnowledgeGraph {
    pub fn new(config: KgConfig) -> Self {
        Self {
            config,
            epoch: 0,
            epoch_started_ms: 0,
            triples: BTreeMap::new(),
            by_id: HashMap::new(),
            entity_index: BTreeMap::new(),
            latest: HashMap::new(),
            next_id: 1,
            archived: 0,
            noise: 0,
            filtered: 0,
        }
    }

    pub fn config(&self) -> &KgConfig {
        &self.config
    }

    pub fn epoch(&self) -> u64 {
        self.epoch
    }

    pub fn epoch_started_ms(&self) -> u64 {
        self.epoch_started_ms
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Triples moved out by resets so far.
    pub fn archived_count(&self) -> u64 {
        self.archived
    }

    /// Observations rejected for schema reasons.
    pub fn noise_count(&self) -> u64 {
        self.noise
    }

    /// Observations rejected by the confidence threshold.
    pub fn filtered_count(&self) -> u64 {
        self.filtered
    }

    pub(crate) fn count_noise(&mut self) {
        self.noise += 1;
    }

    pub(crate) fn count_filtered(&mut self) {
        self.filtered += 1;
    }

    pub fn get(&self, id: u64) -> Option<&SemanticTriple> {
        let t = self.by_id.get(&id)?;
        self.triples.get(&(*t, id))
    }

    /// Live triples in (observed_at, id) order.
    pub fn iter(&self) -> impl Iterator<Item = &SemanticTriple> {
        self.triples.values()
    }

    pub fn entity_index(&self) -> &BTreeMap<String, BTreeSet<u64>> {
        &self.entity_index
    }

    /// Entity index recomputed from the stored triples.
    pub fn rebuild_index(&self) -> BTreeMap<String, BTreeSet<u64>> {
        let mut idx: BTreeMap<String, BTreeSet<u64>> = BTreeMap::new();
        for t in self.triples.values() {
            for e in entity_ids(t) {
                idx.entry(e.to_string()).or_default().insert(t.id);
            }
        }
        idx
    }

    /// Distinct entities referenced by live triples.
    pub fn entities(&self) -> Vec<Entity> {
        let mut out: BTreeMap<&str, &Entity> = BTreeMap::new();
        for t in self.triples.values() {
            out.insert(&t.subject.id, &t.subject);
            if let Object::Entity(e) = &t.object {
                out.insert(&e.id, e);
            }
        }
        out.into_values().cloned().collect()
    }

    /// Inserts an observation, or merges it into the latest triple with the
    /// same (s, p, o) when that one was observed within the dedup window.
    pub fn upsert(
        &mut self,
        subject: Entity,
        predicate: String,
        object: Object,
        confidence: f64,
        observed_at_ms: u64,
        source: Provenance,
        boxes: Option<[BBox; 2]>,
    ) -> Upsert {
        let key: SpoKey = (
            subject.id.clone(),
            predicate.clone(),
            object.key().to_string(),
        );
        if let Some(&id) = self.latest.get(&key) {
            let t_prev = self.by_id[&id];
            if t_prev.abs_diff(observed_at_ms) <= self.config.dedup_window_ms {
                let stored = self.triples.get_mut(&(t_prev, id)).expect("index in sync");
                let raised = confidence > stored.confidence;
                if raised {
                    stored.confidence = confidence;
                }
                return Upsert::Merged {
                    triple: stored.clone(),
                    raised,
                };
            }
        }
        let id = self.next_id;
        self.next_id += 1;
        let triple = SemanticTriple {
            id,
            subject,
            predicate,
            object,
            confidence,
            observed_at_ms,
            source,
            epoch: self.epoch,
            boxes,
        };
        for e in entity_ids(&triple) {
            self.entity_index.entry(e.to_string()).or_default().insert(id);
        }
        let newer = self
            .latest
            .get(&key)
            .is_none_or(|prev| self.by_id[prev] <= observed_at_ms);
        if newer {
            self.latest.insert(key, id);
        }
        self.by_id.insert(id, observed_at_ms);
        self.triples.insert((observed_at_ms, id), triple.clone());
        Upsert::Inserted(triple)
    }

    /// All live triples accepted by `filter` with observed_at in `window`,
    /// time-ordered.
    pub fn query_kg(&self, filter: &dyn TripleFilter, window: TimeWindow) -> Vec<SemanticTriple> {
        self.triples
            .range((window.start_ms, 0)..=(window.end_ms, u64::MAX))
            .map(|(_, t)| t)
            .filter(|t| filter.accept(t))
            .cloned()
            .collect()
    }

    /// Triples that mention `entity_id`, time-ordered.
    pub fn about(&self, entity_id: &str) -> Vec<SemanticTriple> {
        let Some(ids) = self.entity_index.get(entity_id) else {
            return Vec::new();
        };
        let mut out: Vec<SemanticTriple> = ids.iter().filter_map(|id| self.get(*id).cloned()).collect();
        out.sort_by_key(|t| (t.observed_at_ms, t.id));
        out
    }

    /// Moves every live triple into an archive and opens the next epoch.
    pub fn reset(&mut self, reason: ResetReason, now_ms: u64) -> Archive {
        let triples: Vec<SemanticTriple> = std::mem::take(&mut self.triples).into_values().collect();
        self.by_id.clear();
        self.entity_index.clear();
        self.latest.clear();
        self.archived += triples.len() as u64;
        let closed_epoch = self.epoch;
        self.epoch += 1;
        self.epoch_started_ms = now_ms;
        Archive {
            closed_epoch,
            reason,
            at_ms: now_ms,
            triples,
        }
    }

    /// Immutable copy for readers.
    pub fn snapshot(&self) -> KgSnapshot {
        KgSnapshot {
            epoch: self.epoch,
            triples: Arc::new(self.triples.values().cloned().collect()),
        }
    }
}

fn entity_ids(t: &SemanticTriple) -> impl Iterator<Item = &str> {
    let o = match &t.object {
        Object::Entity(e) => Some(e.id.as_str()),
        Object::Value(_) => None,
    };
    std::iter::once(t.subject.id.as_str()).chain(o)
}

/// Point-in-time view of the live graph.
#[derive(Debug, Clone, Default)]
pub struct KgSnapshot {
    pub epoch: u64,
    /// Sorted by (observed_at, id).
    pub triples: Arc<Vec<SemanticTriple>>,
}

impl KgSnapshot {
    pub fn query(&self, filter: &dyn TripleFilter, window: TimeWindow) -> Vec<SemanticTriple> {
        query_sorted(&self.triples, filter, window)
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }
}

/// Window query over a slice sorted by observed_at.
pub fn query_sorted(
    triples: &[SemanticTriple],
    filter: &dyn TripleFilter,
    window: TimeWindow,
) -> Vec<SemanticTriple> {
    let lo = triples.partition_point(|t| t.observed_at_ms < window.start_ms);
    let hi = triples.partition_point(|t| t.observed_at_ms <= window.end_ms);
    if lo >= hi {
        return Vec::new();
    }
    triples[lo..hi]
        .iter()
        .filter(|t| filter.accept(t))
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triple::fixtures::{ent, val};
    use crate::triple::{Term, TriplePattern};

    fn src(seq: u64) -> Provenance {
        Provenance {
            frame_seq: seq,
            model_id: "m".into(),
        }
    }

    fn put(kg: &mut TemporalKnowledgeGraph, s: (&str, &str), p: &str, o: Object, t: u64, c: f64) -> Upsert {
        kg.upsert(Entity::new(s.0, s.1), p.into(), o, c, t, src(t), None)
    }

    #[test]
    fn dedup_merges_within_window_only() {
        let mut kg = TemporalKnowledgeGraph::default();
        assert!(matches!(put(&mut kg, ("p1", "person"), "lying_on", val("road"), 1000, 0.5), Upsert::Inserted(_)));
        match put(&mut kg, ("p1", "person"), "lying_on", val("road"), 2500, 0.9) {
            Upsert::Merged { triple, raised } => {
                assert!(raised);
                assert_eq!(triple.confidence, 0.9);
                assert_eq!(triple.observed_at_ms, 1000);
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(
            put(&mut kg, ("p1", "person"), "lying_on", val("road"), 3000, 0.1),
            Upsert::Merged { raised: false, .. }
        ));
        assert_eq!(kg.len(), 1);
        assert!(matches!(put(&mut kg, ("p1", "person"), "lying_on", val("road"), 3001, 1.0), Upsert::Inserted(_)));
        assert_eq!(kg.len(), 2);
    }

    #[test]
    fn zero_width_window_is_inclusive() {
        let mut kg = TemporalKnowledgeGraph::default();
        put(&mut kg, ("c1", "vehicle"), "collided_with", ent("p1", "person"), 500, 1.0);
        put(&mut kg, ("c1", "vehicle"), "fleeing", val("north"), 600, 1.0);
        let w = TimeWindow::new(500, 500).unwrap();
        let got = kg.query_kg(&TriplePattern::any(), w);
        assert_eq!(got.len(), 1);
        assert_eq!(got[0].observed_at_ms, 500);
        assert_eq!(kg.snapshot().query(&TriplePattern::any(), w), got);
    }

    #[test]
    fn empty_graph_queries_are_empty() {
        let kg = TemporalKnowledgeGraph::default();
        assert!(kg.query_kg(&TriplePattern::any(), TimeWindow::ALL).is_empty());
        assert!(kg.snapshot().is_empty());
    }

    #[test]
    fn reset_archives_everything_and_bumps_epoch() {
        let mut kg = TemporalKnowledgeGraph::default();
        let a = kg.reset(ResetReason::SteadyState, 0);
        assert_eq!((a.closed_epoch, a.triples.len(), kg.epoch()), (0, 0, 1));
        put(&mut kg, ("c1", "vehicle"), "collided_with", ent("p1", "person"), 500, 1.0);
        put(&mut kg, ("p1", "person"), "lying_on", val("road"), 900, 1.0);
        let a = kg.reset(ResetReason::EventConcluded, 1000);
        assert_eq!(a.triples.len(), 2);
        assert!(a.triples.iter().all(|t| t.epoch == 1));
        assert!(kg.is_empty());
        assert!(kg.entity_index().is_empty());
        assert_eq!(kg.archived_count(), 2);
        assert_eq!(kg.epoch(), 2);
        // ids keep increasing across epochs
        let Upsert::Inserted(t) = put(&mut kg, ("p1", "person"), "lying_on", val("road"), 1100, 1.0) else { panic!() };
        assert_eq!((t.id, t.epoch), (3, 2));
    }

    #[test]
    fn entity_index_tracks_both_positions() {
        let mut kg = TemporalKnowledgeGraph::default();
        put(&mut kg, ("c1", "vehicle"), "collided_with", ent("p1", "person"), 500, 1.0);
        put(&mut kg, ("p1", "person"), "lying_on", val("road"), 900, 1.0);
        assert_eq!(kg.entity_index(), &kg.rebuild_index());
        assert_eq!(kg.about("p1").len(), 2);
        assert_eq!(kg.about("c1").len(), 1);
        assert!(kg.about("road").is_empty());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        const PREDS: [&str; 3] = ["collided_with", "lying_on", "near"];

        fn op() -> impl Strategy<Value = (u8, u8, u8, u64, u8)> {
            (0u8..4, 0u8..3, 0u8..4, 0u64..20_000, 0u8..10)
        }

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn query_equals_linear_scan(ops in proptest::collection::vec(op(), 0..200),
                                        qs in 0u8..5, qp in 0u8..4, lo in 0u64..20_000, len in 0u64..20_000) {
                let mut kg = TemporalKnowledgeGraph::default();
                let mut all = Vec::new();
                for (s, p, o, t, c) in ops {
                    let out = put(&mut kg, (&format!("e{s}"), "person"), PREDS[p as usize], ent(&format!("e{o}"), "person"), t, c as f64 / 10.0);
                    match out {
                        Upsert::Inserted(t) => all.push(t),
                        Upsert::Merged { triple, .. } => {
                            let slot = all.iter_mut().find(|t| t.id == triple.id).unwrap();
                            *slot = triple;
                        }
                    }
                }
                prop_assert_eq!(kg.entity_index(), &kg.rebuild_index());
                prop_assert_eq!(kg.len(), all.len());
                let pattern = TriplePattern {
                    subject: if qs < 4 { Term::Id(format!("e{qs}")) } else { Term::Any },
                    predicate: PREDS.get(qp as usize).map(|p| p.to_string()),
                    object: Term::Any,
                };
                let w = TimeWindow::new(lo, lo + len).unwrap();
                let mut expected = all.clone();
                expected.retain(|t| pattern.matches(t) && w.contains(t.observed_at_ms));
                expected.sort_by_key(|t| (t.observed_at_ms, t.id));
                prop_assert_eq!(kg.query_kg(&pattern, w), expected.clone());
                prop_assert_eq!(kg.snapshot().query(&pattern, w), expected);
            }
        }
    }
}
