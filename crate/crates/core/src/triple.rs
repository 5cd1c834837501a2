//! Facts, time-stamped triples and the matchers used to select them.

use std::fmt;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: String,
}

impl Entity {
    pub fn new(id: impl Into<String>, kind: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind: kind.into(),
        }
    }
}

/// Object position of a fact: another entity or a plain attribute value.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Object {
    Entity(Entity),
    Value(String),
}

impl Object {
    /// Entity id or literal value.
    pub fn key(&self) -> &str {
        match self {
            Object::Entity(e) => &e.id,
            Object::Value(v) => v,
        }
    }

    pub fn kind(&self) -> Option<&str> {
        match self {
            Object::Entity(e) => Some(&e.kind),
            Object::Value(_) => None,
        }
    }
}

/// Normalized rectangle, all coordinates in [0, 1].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BBox {
    pub fn is_normalized(&self) -> bool {
        [self.x, self.y, self.w, self.h]
            .iter()
            .all(|v| (0.0..=1.0).contains(v))
    }
}

/// One observed fact, as carried by scenario frames and backend answers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Fact {
    pub subject: Entity,
    pub predicate: String,
    pub object: Object,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<[BBox; 2]>,
    /// Backend-reported confidence; absent means certain.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confidence: Option<f64>,
}

impl Fact {
    pub fn new(subject: Entity, predicate: impl Into<String>, object: Object) -> Self {
        Self {
            subject,
            predicate: predicate.into(),
            object,
            boxes: None,
            confidence: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Provenance {
    pub frame_seq: u64,
    pub model_id: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticTriple {
    /// Monotone insertion id assigned by the knowledge graph.
    pub id: u64,
    pub subject: Entity,
    pub predicate: String,
    pub object: Object,
    pub confidence: f64,
    pub observed_at_ms: u64,
    pub source: Provenance,
    /// Graph epoch the triple was inserted in. Never changes afterwards.
    pub epoch: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boxes: Option<[BBox; 2]>,
}

/// (subject, predicate, object) identity of a triple.
pub type SpoKey = (String, String, String);

impl SemanticTriple {
    pub fn spo(&self) -> SpoKey {
        (
            self.subject.id.clone(),
            self.predicate.clone(),
            self.object.key().to_string(),
        )
    }

    /// Identity used by the lambda layers: (s, p, o, observed_at).
    pub fn fact_key(&self) -> (SpoKey, u64) {
        (self.spo(), self.observed_at_ms)
    }

    pub fn involves(&self, entity_id: &str) -> bool {
        self.subject.id == entity_id
            || matches!(&self.object, Object::Entity(e) if e.id == entity_id)
    }
}

impl fmt::Display for SemanticTriple {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} {} {})@{}",
            self.subject.id,
            self.predicate,
            self.object.key(),
            self.observed_at_ms
        )
    }
}

/// Closed interval of stream milliseconds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub start_ms: u64,
    pub end_ms: u64,
}

impl TimeWindow {
    pub const ALL: TimeWindow = TimeWindow {
        start_ms: 0,
        end_ms: u64::MAX,
    };

    pub fn new(start_ms: u64, end_ms: u64) -> Option<Self> {
        (start_ms <= end_ms).then_some(Self { start_ms, end_ms })
    }

    /// The `len_ms` milliseconds ending at `end_ms`.
    pub fn trailing(end_ms: u64, len_ms: u64) -> Self {
        Self {
            start_ms: end_ms.saturating_sub(len_ms),
            end_ms,
        }
    }

    pub fn contains(&self, t_ms: u64) -> bool {
        self.start_ms <= t_ms && t_ms <= self.end_ms
    }

    pub fn intersect(&self, other: &TimeWindow) -> Option<TimeWindow> {
        TimeWindow::new(
            self.start_ms.max(other.start_ms),
            self.end_ms.min(other.end_ms),
        )
    }
}

/// One position of a triple matcher.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Term {
    Any,
    /// Any entity of this type.
    Kind(String),
    /// Exact entity id or literal value.
    Id(String),
    /// Pattern variable, optionally restricted to an entity type. Outside of
    /// event patterns a variable behaves like its type restriction.
    Var { name: String, kind: Option<String> },
}

impl Term {
    /// Whether the term accepts a value, ignoring variable bindings.
    pub fn accepts(&self, key: &str, kind: Option<&str>) -> bool {
        match self {
            Term::Any => true,
            Term::Kind(k) => kind == Some(k.as_str()),
            Term::Id(id) => id == key,
            Term::Var { kind: Some(k), .. } => kind == Some(k.as_str()),
            Term::Var { kind: None, .. } => true,
        }
    }

    /// Entity type the term targets, if it names one.
    pub fn kind(&self) -> Option<&str> {
        match self {
            Term::Kind(k) | Term::Var { kind: Some(k), .. } => Some(k),
            _ => None,
        }
    }
}

impl fmt::Display for Term {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Term::Any => f.write_str("*"),
            Term::Kind(k) | Term::Id(k) => f.write_str(k),
            Term::Var { name, kind: Some(k) } => write!(f, "{k}?{name}"),
            Term::Var { name, kind: None } => write!(f, "?{name}"),
        }
    }
}

/// (subject?, predicate?, object?) matcher with wildcards.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TriplePattern {
    pub subject: Term,
    /// `None` matches every predicate.
    pub predicate: Option<String>,
    pub object: Term,
}

impl TriplePattern {
    pub fn any() -> Self {
        Self {
            subject: Term::Any,
            predicate: None,
            object: Term::Any,
        }
    }

    pub fn predicate(p: impl Into<String>) -> Self {
        Self {
            predicate: Some(p.into()),
            ..Self::any()
        }
    }

    pub fn matches(&self, t: &SemanticTriple) -> bool {
        self.predicate.as_deref().is_none_or(|p| p == t.predicate)
            && self.subject.accepts(&t.subject.id, Some(&t.subject.kind))
            && self.object.accepts(t.object.key(), t.object.kind())
    }
}

impl fmt::Display for TriplePattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "({} {} {})",
            self.subject,
            self.predicate.as_deref().unwrap_or("*"),
            self.object
        )
    }
}

/// Anything that can select triples; used by the graph and the lambda layers.
pub trait TripleFilter {
    fn accept(&self, t: &SemanticTriple) -> bool;
}

impl TripleFilter for TriplePattern {
    fn accept(&self, t: &SemanticTriple) -> bool {
        self.matches(t)
    }
}

impl<F: Fn(&SemanticTriple) -> bool> TripleFilter for F {
    fn accept(&self, t: &SemanticTriple) -> bool {
        self(t)
    }
}


#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    #[test]
    fn pattern_matches_by_kind_id_and_wildcard() {
        let t = triple(1, ("car1", "vehicle"), "collided_with", ent("person1", "person"), 10);
        let p = TriplePattern {
            subject: Term::Kind("vehicle".into()),
            predicate: Some("collided_with".into()),
            object: Term::Any,
        };
        assert!(p.matches(&t));
        let p = TriplePattern {
            subject: Term::Any,
            predicate: None,
            object: Term::Id("person1".into()),
        };
        assert!(p.matches(&t));
        let p = TriplePattern {
            subject: Term::Kind("person".into()),
            ..TriplePattern::any()
        };
        assert!(!p.matches(&t));
    }

    #[test]
    fn kind_term_never_matches_a_value() {
        let t = triple(1, ("car1", "vehicle"), "damaged", val("fire"), 10);
        let p = TriplePattern {
            object: Term::Kind("vehicle".into()),
            ..TriplePattern::any()
        };
        assert!(!p.matches(&t));
        let p = TriplePattern {
            object: Term::Id("fire".into()),
            ..TriplePattern::any()
        };
        assert!(p.matches(&t));
    }

    #[test]
    fn windows_are_closed_intervals() {
        let w = TimeWindow::new(5, 5).unwrap();
        assert!(w.contains(5));
        assert!(!w.contains(6));
        assert!(TimeWindow::new(6, 5).is_none());
        assert_eq!(TimeWindow::trailing(3, 10), TimeWindow::new(0, 3).unwrap());
        let a = TimeWindow::new(0, 10).unwrap();
        let b = TimeWindow::new(5, 20).unwrap();
        assert_eq!(a.intersect(&b), TimeWindow::new(5, 10));
        assert_eq!(a.intersect(&TimeWindow::new(11, 12).unwrap()), None);
    }

    #[test]
    fn involves_checks_both_positions() {
        let t = triple(1, ("car1", "vehicle"), "collided_with", ent("person1", "person"), 10);
        assert!(t.involves("car1"));
        assert!(t.involves("person1"));
        assert!(!t.involves("road"));
    }
}
