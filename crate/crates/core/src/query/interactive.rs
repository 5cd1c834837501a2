use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use super::dsl::apply_options;
use super::QueryError;
use crate::knowledge::{KgSnapshot, KnowledgeBase};
use crate::lambda::LambdaStore;
use crate::triple::{SemanticTriple, TimeWindow, TripleFilter};

pub const NO_OBSERVATIONS: &str = "no matching observations";

/// On-demand question over the live graph and the lambda store.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InteractiveQuery {
    pub text: String,
    /// Trailing window length, resolved against the answer time.
    pub window_ms: Option<u64>,
    /// Every listed entity must appear in a matching triple.
    pub about: Vec<String>,
    /// Every listed predicate must equal the triple's.
    pub focus: Vec<String>,
    /// Absolute window, fixed for refinements so they stay inside the parent.
    pub anchored: Option<TimeWindow>,
}

impl InteractiveQuery {
    pub fn window_at(&self, now_ms: u64) -> TimeWindow {
        match (self.anchored, self.window_ms) {
            (Some(w), _) => w,
            (None, Some(len)) => TimeWindow::trailing(now_ms, len),
            (None, None) => TimeWindow::new(0, now_ms).expect("0 <= now"),
        }
    }

    /// Narrows a copy of this (answered) query by a refinement text.
    pub(crate) fn refined(&self, answered_window: TimeWindow, refinement: &str, kb: &KnowledgeBase) -> Result<Self, QueryError> {
        let mut child = InteractiveQuery {
            text: String::new(),
            window_ms: None,
            anchored: Some(answered_window),
            ..self.clone()
        };
        let text = apply_options(&mut child, refinement, kb)?;
        if let Some(len) = child.window_ms.take() {
            let shrunk = TimeWindow::trailing(answered_window.end_ms, len);
            child.anchored = Some(shrunk.intersect(&answered_window).unwrap_or(shrunk));
        }
        child.text = if text.is_empty() { self.text.clone() } else { text };
        Ok(child)
    }
}

impl TripleFilter for InteractiveQuery {
    fn accept(&self, t: &SemanticTriple) -> bool {
        self.about.iter().all(|e| t.involves(e)) && self.focus.iter().all(|p| *p == t.predicate)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InteractiveAnswer {
    pub query_id: String,
    pub window: TimeWindow,
    pub text: String,
    /// Time-ordered evidence behind the narrative.
    pub triples: Vec<SemanticTriple>,
}

/// Live triples merged with the historical ones, deduplicated by
/// (s, p, o, observed_at) keeping the highest confidence, time-ordered.
pub fn retrieve(q: &InteractiveQuery, window: TimeWindow, live: &KgSnapshot, store: &LambdaStore) -> Vec<SemanticTriple> {
    let mut merged: BTreeMap<_, SemanticTriple> = BTreeMap::new();
    for t in store.serve(q, window, None).into_iter().chain(live.query(q, window)) {
        match merged.entry(t.fact_key()) {
            std::collections::btree_map::Entry::Vacant(v) => {
                v.insert(t);
            }
            std::collections::btree_map::Entry::Occupied(mut o) => {
                if t.confidence > o.get().confidence {
                    o.insert(t);
                }
            }
        }
    }
    let mut out: Vec<SemanticTriple> = merged.into_values().collect();
    out.sort_by_key(|t| (t.observed_at_ms, t.id));
    out
}

/// Renders triples as a chronological narrative.
pub fn narrate(triples: &[SemanticTriple], kb: &KnowledgeBase) -> String {
    if triples.is_empty() {
        return NO_OBSERVATIONS.to_string();
    }
    triples
        .iter()
        .map(|t| format!("[{:.2}s] {}", t.observed_at_ms as f64 / 1000.0, kb.render(t)))
        .collect::<Vec<_>>()
        .join("\n")
}

pub fn answer_interactive(
    query_id: &str,
    q: &InteractiveQuery,
    now_ms: u64,
    live: &KgSnapshot,
    store: &LambdaStore,
    kb: &KnowledgeBase,
) -> InteractiveAnswer {
    let window = q.window_at(now_ms);
    let triples = retrieve(q, window, live, store);
    InteractiveAnswer {
        query_id: query_id.to_string(),
        window,
        text: narrate(&triples, kb),
        triples,
    }
}
