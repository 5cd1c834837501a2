//! Incremental matching of ordered event patterns over triple deltas.
//!
//! Each query keeps, per pattern step, at most one partial match per
//! variable binding; a newer partial replaces an older one with the same
//! binding, since it can be extended by everything the older one could. The
//! first triple that completes any chain raises one alert, reporting the
//! chain whose step triples are latest (compared from the last step
//! backwards), and clears the query's partial state.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::{QueryError, UserQuery};
use crate::triple::{SemanticTriple, Term, TriplePattern};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PatternStep {
    pub matcher: TriplePattern,
    /// Largest allowed delay to the next step; `None` on the last step.
    pub max_gap_ms: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventPattern {
    pub name: String,
    pub steps: Vec<PatternStep>,
    /// Sum of the step gaps: the longest a full match can span.
    pub window_ms: u64,
}

impl EventPattern {
    pub fn new(name: impl Into<String>, steps: Vec<PatternStep>) -> Result<Self, QueryError> {
        if steps.is_empty() {
            return Err(QueryError::Parse("pattern needs at least one step".into()));
        }
        let last = steps.len() - 1;
        for (i, s) in steps.iter().enumerate() {
            match s.max_gap_ms {
                Some(0) => return Err(QueryError::Parse("gaps must be > 0".into())),
                None if i < last => return Err(QueryError::Parse(format!("step {i} has no gap"))),
                Some(_) if i == last => return Err(QueryError::Parse("last step cannot have a gap".into())),
                _ => {}
            }
        }
        let window_ms = steps.iter().filter_map(|s| s.max_gap_ms).sum();
        Ok(Self {
            name: name.into(),
            steps,
            window_ms,
        })
    }

    /// Predicates referenced by any step, in step order.
    pub fn predicates(&self) -> Vec<&str> {
        let mut out = Vec::new();
        for s in &self.steps {
            if let Some(p) = s.matcher.predicate.as_deref() {
                if !out.contains(&p) {
                    out.push(p);
                }
            }
        }
        out
    }
}

impl fmt::Display for EventPattern {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "standing {}:", self.name)?;
        for s in &self.steps {
            write!(f, " {}", s.matcher)?;
            if let Some(g) = s.max_gap_ms {
                if g % 1000 == 0 {
                    write!(f, " then<{}s>", g / 1000)?;
                } else {
                    write!(f, " then<{g}ms>")?;
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Alert {
    pub query_id: String,
    pub pattern: String,
    /// One triple per step, time-ordered.
    pub triples: Vec<SemanticTriple>,
    pub fired_at_ms: u64,
}

impl Alert {
    /// Identity of the match, independent of when it was reported.
    pub fn signature(&self) -> (String, Vec<u64>) {
        (self.query_id.clone(), self.triples.iter().map(|t| t.id).collect())
    }

    pub fn span_ms(&self) -> (u64, u64) {
        (
            self.triples.first().map_or(0, |t| t.observed_at_ms),
            self.triples.last().map_or(0, |t| t.observed_at_ms),
        )
    }
}

/// Variable name → bound entity id or value.
pub type Bindings = BTreeMap<String, String>;

fn bind_term(term: &Term, key: &str, kind: Option<&str>, b: &mut Bindings) -> bool {
    if !term.accepts(key, kind) {
        return false;
    }
    if let Term::Var { name, .. } = term {
        match b.get(name) {
            Some(v) => return v == key,
            None => {
                b.insert(name.clone(), key.to_string());
            }
        }
    }
    true
}

/// Extends `bindings` with the variables `step` binds on `t`.
pub fn bind_step(step: &TriplePattern, t: &SemanticTriple, bindings: &Bindings) -> Option<Bindings> {
    if step.predicate.as_deref().is_some_and(|p| p != t.predicate) {
        return None;
    }
    let mut b = bindings.clone();
    let ok = bind_term(&step.subject, &t.subject.id, Some(&t.subject.kind), &mut b)
        && bind_term(&step.object, t.object.key(), t.object.kind(), &mut b);
    ok.then_some(b)
}

#[derive(Debug, Clone, PartialEq)]
struct Partial {
    triples: Vec<SemanticTriple>,
}

impl Partial {
    fn last_ms(&self) -> u64 {
        self.triples.last().map_or(0, |t| t.observed_at_ms)
    }
}

#[derive(Debug, Clone, Default)]
struct QueryState {
    /// `levels[s]` holds partials that matched steps `0..=s`.
    levels: Vec<BTreeMap<Bindings, Partial>>,
}

/// The next unmatched step of a live partial match.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingStep {
    pub query_id: String,
    pub pattern: String,
    /// Steps matched so far.
    pub matched: usize,
    pub total: usize,
    /// Step matcher with bound variables substituted by their values.
    pub matcher: TriplePattern,
    /// Entity type the step's subject must have, when known.
    pub subject_kind: Option<String>,
    pub last_ms: u64,
    pub deadline_ms: u64,
}

/// Partial matches of every standing query.
#[derive(Debug, Clone, Default)]
pub struct MatchState {
    queries: HashMap<String, QueryState>,
    high_water: u64,
}

impl MatchState {
    pub fn new() -> Self {
        Self::default()
    }

    /// Largest triple id evaluated so far.
    pub fn high_water(&self) -> u64 {
        self.high_water
    }

    pub fn forget(&mut self, query_id: &str) {
        self.queries.remove(query_id);
    }

    /// Number of stored partial matches.
    pub fn partial_count(&self) -> usize {
        self.queries
            .values()
            .flat_map(|q| q.levels.iter())
            .map(BTreeMap::len)
            .sum()
    }

    /// Drops partials that can no longer be extended at `now_ms`.
    pub fn prune(&mut self, queries: &[UserQuery], now_ms: u64) {
        for q in queries {
            let Some(pattern) = q.pattern() else { continue };
            if let Some(st) = self.queries.get_mut(&q.query_id) {
                prune_state(st, pattern, now_ms);
            }
        }
    }

    /// Next steps of all live partial matches, most advanced first, ties in
    /// query registration order.
    pub fn pending(&self, queries: &[UserQuery]) -> Vec<PendingStep> {
        let mut out = Vec::new();
        for q in queries {
            let Some(pattern) = q.pattern() else { continue };
            let Some(st) = self.queries.get(&q.query_id) else { continue };
            for (s, level) in st.levels.iter().enumerate() {
                for (b, p) in level {
                    let next = &pattern.steps[s + 1].matcher;
                    out.push(PendingStep {
                        query_id: q.query_id.clone(),
                        pattern: pattern.name.clone(),
                        matched: s + 1,
                        total: pattern.steps.len(),
                        matcher: substitute(next, b),
                        subject_kind: next.subject.kind().map(str::to_string).or_else(|| {
                            var_kind(pattern, &next.subject)
                        }),
                        last_ms: p.last_ms(),
                        deadline_ms: p.last_ms() + pattern.steps[s].max_gap_ms.unwrap_or(0),
                    });
                }
            }
        }
        out.sort_by(|a, b| b.matched.cmp(&a.matched));
        out
    }
}

/// Type a variable was given where it is first declared with one.
fn var_kind(pattern: &EventPattern, term: &Term) -> Option<String> {
    let Term::Var { name, .. } = term else { return None };
    pattern.steps.iter().find_map(|s| {
        [&s.matcher.subject, &s.matcher.object].into_iter().find_map(|t| match t {
            Term::Var { name: n, kind: Some(k) } if n == name => Some(k.clone()),
            _ => None,
        })
    })
}

fn substitute(step: &TriplePattern, b: &Bindings) -> TriplePattern {
    let sub = |t: &Term| match t {
        Term::Var { name, .. } => b.get(name).map(|v| Term::Id(v.clone())).unwrap_or_else(|| t.clone()),
        other => other.clone(),
    };
    TriplePattern {
        subject: sub(&step.subject),
        predicate: step.predicate.clone(),
        object: sub(&step.object),
    }
}

fn prune_state(st: &mut QueryState, pattern: &EventPattern, now_ms: u64) {
    for (s, level) in st.levels.iter_mut().enumerate() {
        let gap = pattern.steps[s].max_gap_ms.unwrap_or(0);
        level.retain(|_, p| now_ms <= p.last_ms() + gap);
    }
}

/// Reverse-lexicographic order on step triple ids.
fn later_chain(a: &[SemanticTriple], b: &[SemanticTriple]) -> bool {
    a.iter().rev().map(|t| t.id).gt(b.iter().rev().map(|t| t.id))
}

fn advance(st: &mut QueryState, query_id: &str, pattern: &EventPattern, t: &SemanticTriple) -> Option<Alert> {
    let k = pattern.steps.len();
    if st.levels.len() != k - 1 {
        st.levels = vec![BTreeMap::new(); k - 1];
    }
    prune_state(st, pattern, t.observed_at_ms);

    let mut created: Vec<(usize, Bindings, Partial)> = Vec::new();
    let mut completed: Option<Vec<SemanticTriple>> = None;
    for s in (0..k).rev() {
        let step = &pattern.steps[s].matcher;
        let mut found: Vec<(Bindings, Vec<SemanticTriple>)> = Vec::new();
        if s == 0 {
            if let Some(b) = bind_step(step, t, &Bindings::new()) {
                found.push((b, vec![t.clone()]));
            }
        } else {
            let gap = pattern.steps[s - 1].max_gap_ms.unwrap_or(0);
            for (b, p) in &st.levels[s - 1] {
                let last = p.last_ms();
                if t.observed_at_ms < last || t.observed_at_ms - last > gap {
                    continue;
                }
                if let Some(nb) = bind_step(step, t, b) {
                    let mut chain = p.triples.clone();
                    chain.push(t.clone());
                    found.push((nb, chain));
                }
            }
        }
        for (b, chain) in found {
            if s == k - 1 {
                if completed.as_ref().is_none_or(|c| later_chain(&chain, c)) {
                    completed = Some(chain);
                }
            } else {
                created.push((s, b, Partial { triples: chain }));
            }
        }
    }
    if let Some(triples) = completed {
        for level in &mut st.levels {
            level.clear();
        }
        return Some(Alert {
            query_id: query_id.to_string(),
            pattern: pattern.name.clone(),
            fired_at_ms: t.observed_at_ms,
            triples,
        });
    }
    for (s, b, p) in created {
        st.levels[s].insert(b, p);
    }
    None
}

/// Advances every standing query over `delta`. Triples at or below the
/// state's high-water id were already evaluated and are skipped, which makes
/// re-evaluation idempotent.
pub fn evaluate_standing(delta: &[SemanticTriple], registered: &[UserQuery], state: &mut MatchState) -> Vec<Alert> {
    let mut ordered: Vec<&SemanticTriple> = delta.iter().filter(|t| t.id > state.high_water).collect();
    ordered.sort_by_key(|t| (t.observed_at_ms, t.id));
    let mut alerts = Vec::new();
    for t in ordered {
        if t.id <= state.high_water {
            continue;
        }
        state.high_water = t.id;
        for q in registered {
            let Some(pattern) = q.pattern() else { continue };
            let st = state.queries.entry(q.query_id.clone()).or_default();
            if let Some(a) = advance(st, &q.query_id, pattern, t) {
                alerts.push(a);
            }
        }
    }
    alerts
}

/// Whether `t` can serve as the first step of `pattern`.
pub fn opens(pattern: &EventPattern, t: &SemanticTriple) -> bool {
    bind_step(&pattern.steps[0].matcher, t, &Bindings::new()).is_some()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::kb::tests::mini;
    use crate::query::{parse_standing, QueryBody};
    use crate::triple::fixtures::{ent, triple, val};

    fn hit_and_run(vars: bool) -> UserQuery {
        let src = if vars {
            "standing hit_and_run: (vehicle?v collided_with person?p) then<10s> (?p lying_on *) then<15s> (?v fleeing *)"
        } else {
            "standing hit_and_run: (vehicle collided_with person) then<10s> (person lying_on *) then<15s> (vehicle fleeing *)"
        };
        UserQuery::new("q1", QueryBody::Standing(parse_standing(src, &mini()).unwrap()), src)
    }

    fn seq(t0: u64, lying_at: u64, flee_at: u64) -> Vec<SemanticTriple> {
        vec![
            triple(1, ("car1", "vehicle"), "collided_with", ent("person1", "person"), t0),
            triple(2, ("person1", "person"), "lying_on", val("road"), lying_at),
            triple(3, ("car1", "vehicle"), "fleeing", val("north"), flee_at),
        ]
    }

    #[test]
    fn full_sequence_alerts_once() {
        let q = vec![hit_and_run(false)];
        let mut st = MatchState::new();
        let alerts = evaluate_standing(&seq(1000, 4000, 9000), &q, &mut st);
        assert_eq!(alerts.len(), 1);
        assert_eq!(alerts[0].triples.iter().map(|t| t.id).collect::<Vec<_>>(), vec![1, 2, 3]);
        assert_eq!(alerts[0].fired_at_ms, 9000);
        assert_eq!(st.partial_count(), 0);
    }

    #[test]
    fn gap_violation_blocks_alert() {
        let q = vec![hit_and_run(false)];
        let mut st = MatchState::new();
        assert!(evaluate_standing(&seq(1000, 21_000, 22_000), &q, &mut st).is_empty());
    }

    #[test]
    fn reevaluation_is_idempotent() {
        let q = vec![hit_and_run(false)];
        let mut st = MatchState::new();
        let d = seq(1000, 4000, 9000);
        assert_eq!(evaluate_standing(&d, &q, &mut st).len(), 1);
        assert!(evaluate_standing(&d, &q, &mut st).is_empty());
    }

    #[test]
    fn incremental_deltas_match_batch() {
        let q = vec![hit_and_run(true)];
        let mut st = MatchState::new();
        let mut n = 0;
        for t in seq(1000, 4000, 9000) {
            n += evaluate_standing(&[t], &q, &mut st).len();
        }
        assert_eq!(n, 1);
    }

    #[test]
    fn bindings_must_agree() {
        let q = vec![hit_and_run(true)];
        let mut st = MatchState::new();
        let mut d = seq(1000, 4000, 9000);
        d[2].subject.id = "car2".into();
        assert!(evaluate_standing(&d, &q, &mut st).is_empty());
        let pending = st.pending(&q);
        assert_eq!(pending.len(), 2);
        assert_eq!(pending[0].matched, 2);
        assert_eq!(pending[0].matcher.subject, Term::Id("car1".into()));
        assert_eq!(pending[0].subject_kind.as_deref(), Some("vehicle"));
        assert_eq!(pending[0].matcher.predicate.as_deref(), Some("fleeing"));
    }

    #[test]
    fn latest_partial_is_reported() {
        let q = vec![hit_and_run(false)];
        let mut st = MatchState::new();
        let d = vec![
            triple(1, ("car1", "vehicle"), "collided_with", ent("person1", "person"), 1000),
            triple(2, ("car1", "vehicle"), "collided_with", ent("person1", "person"), 4000),
            triple(3, ("person1", "person"), "lying_on", val("road"), 5000),
            triple(4, ("car1", "vehicle"), "fleeing", val("north"), 6000),
        ];
        let a = evaluate_standing(&d, &q, &mut st);
        assert_eq!(a[0].triples.iter().map(|t| t.id).collect::<Vec<_>>(), vec![2, 3, 4]);
    }

    #[test]
    fn expired_partials_are_pruned() {
        let q = vec![hit_and_run(false)];
        let mut st = MatchState::new();
        evaluate_standing(&seq(1000, 4000, 90_000)[..2], &q, &mut st);
        assert_eq!(st.partial_count(), 2);
        st.prune(&q, 30_000);
        assert_eq!(st.partial_count(), 0);
    }

    #[test]
    fn pattern_validation() {
        let step = PatternStep {
            matcher: TriplePattern::any(),
            max_gap_ms: None,
        };
        assert!(EventPattern::new("x", vec![]).is_err());
        assert!(EventPattern::new("x", vec![step.clone(), step.clone()]).is_err());
        let gapped = PatternStep {
            max_gap_ms: Some(5),
            ..step.clone()
        };
        assert_eq!(EventPattern::new("x", vec![gapped, step]).unwrap().window_ms, 5);
    }
}
