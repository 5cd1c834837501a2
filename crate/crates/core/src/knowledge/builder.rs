use tracing::debug;

use super::graph::{TemporalKnowledgeGraph, Upsert};
use super::kb::KnowledgeBase;
use crate::inference::InferenceResponse;
use crate::triple::{Fact, Object, Provenance, SemanticTriple};

#[derive(Debug, Clone, PartialEq)]
pub struct Update {
    pub triple: SemanticTriple,
    /// Stored confidence went up.
    pub raised: bool,
}

/// What one response changed in the graph.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct BuildDelta {
    pub inserted: Vec<SemanticTriple>,
    pub updated: Vec<Update>,
    /// Human-readable reasons for facts skipped as schema noise.
    pub noise: Vec<String>,
    /// Facts dropped by the confidence threshold.
    pub filtered: usize,
}

impl BuildDelta {
    pub fn len(&self) -> usize {
        self.inserted.len() + self.updated.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inserted and updated triples, time-ordered.
    pub fn triples(&self) -> Vec<SemanticTriple> {
        let mut out: Vec<SemanticTriple> = self
            .inserted
            .iter()
            .cloned()
            .chain(self.updated.iter().map(|u| u.triple.clone()))
            .collect();
        out.sort_by_key(|t| (t.observed_at_ms, t.id));
        out
    }
}

fn schema_problem(kb: &KnowledgeBase, f: &Fact) -> Option<String> {
    if !kb.has_predicate(&f.predicate) {
        return Some(format!("unknown predicate `{}`", f.predicate));
    }
    if !kb.has_type(&f.subject.kind) {
        return Some(format!("unknown entity type `{}`", f.subject.kind));
    }
    if let Object::Entity(e) = &f.object {
        if !kb.has_type(&e.kind) {
            return Some(format!("unknown entity type `{}`", e.kind));
        }
    }
    if let Some(c) = f.confidence {
        if !(0.0..=1.0).contains(&c) {
            return Some(format!("confidence {c} outside [0, 1]"));
        }
    }
    None
}

/// Folds every answered fact into the graph at the frame's timestamp.
pub fn build(kg: &mut TemporalKnowledgeGraph, response: &InferenceResponse, kb: &KnowledgeBase) -> BuildDelta {
    let mut delta = BuildDelta::default();
    let threshold = kg.config().confidence_threshold;
    for fact in response.facts() {
        if let Some(why) = schema_problem(kb, fact) {
            debug!(frame = response.frame_seq, %why, "skipping extraction noise");
            kg.count_noise();
            delta.noise.push(why);
            continue;
        }
        let confidence = fact.confidence.unwrap_or(1.0);
        if confidence < threshold {
            kg.count_filtered();
            delta.filtered += 1;
            continue;
        }
        let source = Provenance {
            frame_seq: response.frame_seq,
            model_id: response.model_id.clone(),
        };
        match kg.upsert(
            fact.subject.clone(),
            fact.predicate.clone(),
            fact.object.clone(),
            confidence,
            response.frame_timestamp_ms,
            source,
            fact.boxes,
        ) {
            Upsert::Inserted(t) => delta.inserted.push(t),
            Upsert::Merged { triple, raised } => {
                // one response may repeat a fact across answers
                if delta.inserted.iter().any(|t| t.id == triple.id) {
                    if raised {
                        if let Some(t) = delta.inserted.iter_mut().find(|t| t.id == triple.id) {
                            *t = triple;
                        }
                    }
                } else if let Some(u) = delta.updated.iter_mut().find(|u| u.triple.id == triple.id) {
                    u.raised |= raised;
                    u.triple = triple;
                } else {
                    delta.updated.push(Update { triple, raised });
                }
            }
        }
    }
    delta
}

#[cfg(test)]
mod tests {
    use std::collections::BTreeSet;

    use super::*;
    use crate::inference::Answer;
    use crate::knowledge::kb::tests::mini;
    use crate::triple::Entity;

    fn response(seq: u64, facts: Vec<Fact>) -> InferenceResponse {
        InferenceResponse {
            frame_seq: seq,
            frame_timestamp_ms: seq * 1000 / 24,
            model_id: "m".into(),
            answers: vec![Answer {
                qid: "q".into(),
                facts,
                text: String::new(),
            }],
            simulated_latency_ms: 0.0,
        }
    }

    fn lying() -> Fact {
        Fact::new(Entity::new("person1", "person"), "lying_on", Object::Value("road".into()))
    }

    #[test]
    fn single_fact_inserted() {
        let mut kg = TemporalKnowledgeGraph::default();
        let d = build(&mut kg, &response(24, vec![lying()]), &mini());
        assert_eq!(d.inserted.len(), 1);
        assert_eq!(d.len(), 1);
        assert_eq!(d.inserted[0].observed_at_ms, 1000);
        assert_eq!(d.inserted[0].confidence, 1.0);
    }

    #[test]
    fn repeat_within_window_updates() {
        let kb = mini();
        let mut kg = TemporalKnowledgeGraph::default();
        build(&mut kg, &response(24, vec![lying()]), &kb);
        let d = build(&mut kg, &response(48, vec![lying()]), &kb);
        assert!(d.inserted.is_empty());
        assert_eq!(d.updated.len(), 1);
        assert!(!d.updated[0].raised);
        assert_eq!(kg.len(), 1);
    }

    #[test]
    fn three_facts_index_exactly_the_referenced_entities() {
        let mut kg = TemporalKnowledgeGraph::default();
        let facts = vec![
            lying(),
            Fact::new(Entity::new("car1", "vehicle"), "collided_with", Object::Entity(Entity::new("person1", "person"))),
            Fact::new(Entity::new("car1", "vehicle"), "fleeing", Object::Value("north".into())),
        ];
        build(&mut kg, &response(0, facts.clone()), &mini());
        assert_eq!(kg.len(), 3);
        assert_eq!(kg.entity_index(), &kg.rebuild_index());
        let mut referenced = BTreeSet::new();
        for f in &facts {
            referenced.insert(f.subject.id.clone());
            if let Object::Entity(e) = &f.object {
                referenced.insert(e.id.clone());
            }
        }
        assert_eq!(kg.entity_index().keys().cloned().collect::<BTreeSet<_>>(), referenced);
    }

    #[test]
    fn unknown_predicate_is_counted_noise() {
        let mut kg = TemporalKnowledgeGraph::default();
        let bad = Fact::new(Entity::new("p1", "person"), "levitating", Object::Value("yes".into()));
        let d = build(&mut kg, &response(0, vec![bad, lying()]), &mini());
        assert_eq!(d.inserted.len(), 1);
        assert_eq!(d.noise.len(), 1);
        assert!(d.noise[0].contains("levitating"));
        assert_eq!(kg.noise_count(), 1);
    }

    #[test]
    fn confidence_threshold_filters() {
        let mut kg = TemporalKnowledgeGraph::new(crate::knowledge::KgConfig {
            confidence_threshold: 0.5,
            ..Default::default()
        });
        let mut weak = lying();
        weak.confidence = Some(0.3);
        let d = build(&mut kg, &response(0, vec![weak]), &mini());
        assert_eq!((d.len(), d.filtered, kg.filtered_count()), (0, 1, 1));
    }

    #[test]
    fn repeated_fact_in_one_response_is_one_insert() {
        let mut kg = TemporalKnowledgeGraph::default();
        let d = build(&mut kg, &response(0, vec![lying(), lying()]), &mini());
        assert_eq!((d.inserted.len(), d.updated.len()), (1, 0));
    }
}
