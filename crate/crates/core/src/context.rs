//! Temporal context identification and visual question generation.
//!
//! `identify` ranks entities seen in recent pattern-relevant triples and
//! reports whether any standing pattern has just opened. `ContextTracker`
//! keeps an opened context alive until its pattern fires or the scene goes
//! quiet, and `QuestionGenerator` turns the context into the next frame's
//! question set.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{InferenceResponse, Question, QuestionTarget, MAX_QUESTIONS};
use crate::knowledge::{KgSnapshot, KnowledgeBase, ResetReason};
use crate::query::{opens, Alert, EventPattern, PendingStep, UserQuery};
use crate::triple::{Object, SemanticTriple, TimeWindow, TripleFilter};

pub const STEADY: &str = "steady";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ContextError {
    #[error("no question template for predicate `{0}`")]
    MissingTemplate(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ContextConfig {
    pub context_window_s: f64,
    pub steady_state_window_s: f64,
    pub recency_tau_s: f64,
}

impl Default for ContextConfig {
    fn default() -> Self {
        Self {
            context_window_s: 10.0,
            steady_state_window_s: 30.0,
            recency_tau_s: 5.0,
        }
    }
}

impl ContextConfig {
    pub fn context_window_ms(&self) -> u64 {
        (self.context_window_s * 1000.0).round() as u64
    }

    pub fn steady_state_window_ms(&self) -> u64 {
        (self.steady_state_window_s * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredEntity {
    pub id: String,
    pub kind: String,
    /// In [0, 1]; the top entity scores 1.
    pub score: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TemporalContext {
    /// Pattern name, or [`STEADY`].
    pub label: String,
    pub active: bool,
    /// Standing query whose pattern the label names.
    pub query_id: Option<String>,
    pub scored_entities: Vec<ScoredEntity>,
    pub opened_at_ms: u64,
    pub last_signal_ms: u64,
    /// The context's pattern has fired since it opened.
    pub concluded: bool,
}

impl TemporalContext {
    pub fn steady() -> Self {
        Self {
            label: STEADY.into(),
            active: false,
            query_id: None,
            scored_entities: Vec::new(),
            opened_at_ms: 0,
            last_signal_ms: 0,
            concluded: false,
        }
    }
}

/// Matches a triple against any step of a pattern.
struct AnyStep<'a>(&'a EventPattern);

impl TripleFilter for AnyStep<'_> {
    fn accept(&self, t: &SemanticTriple) -> bool {
        self.0.steps.iter().any(|s| s.matcher.matches(t))
    }
}

/// Newest triple time in `window` matching any step of `pattern`.
pub fn latest_signal(kg: &KgSnapshot, pattern: &EventPattern, window: TimeWindow) -> Option<u64> {
    kg.query(&AnyStep(pattern), window).last().map(|t| t.observed_at_ms)
}

/// Scores entities and detects an opening pattern, as of the response's
/// frame time.
pub fn identify(
    kg: &KgSnapshot,
    queries: &[UserQuery],
    s_t: &InferenceResponse,
    kb: &KnowledgeBase,
    cfg: &ContextConfig,
) -> TemporalContext {
    let now = s_t.frame_timestamp_ms;
    let window = TimeWindow::trailing(now, cfg.context_window_ms());
    let standing: Vec<(&UserQuery, &EventPattern)> = queries.iter().filter_map(|q| q.pattern().map(|p| (q, p))).collect();

    // (latest first-step time, registration index) of the opening pattern
    let mut opener: Option<(u64, usize)> = None;
    let mut relevant: BTreeMap<u64, SemanticTriple> = BTreeMap::new();
    for (i, (_, pattern)) in standing.iter().enumerate() {
        for t in kg.query(&AnyStep(pattern), window) {
            if opens(pattern, &t) && opener.is_none_or(|(ms, _)| t.observed_at_ms > ms) {
                opener = Some((t.observed_at_ms, i));
            }
            relevant.insert(t.id, t);
        }
    }

    let Some((opened_ms, idx)) = opener else {
        return TemporalContext {
            scored_entities: score_entities(relevant.values(), STEADY, now, kb, cfg),
            ..TemporalContext::steady()
        };
    };
    let (q, pattern) = standing[idx];
    let last_signal = latest_signal(kg, pattern, window).unwrap_or(opened_ms);
    TemporalContext {
        label: pattern.name.clone(),
        active: true,
        query_id: Some(q.query_id.clone()),
        scored_entities: score_entities(relevant.values(), &pattern.name, now, kb, cfg),
        opened_at_ms: opened_ms,
        last_signal_ms: last_signal,
        concluded: false,
    }
}

/// prior(context, type) x sum of exp(-age / tau) over the entity's matching
/// triples, normalized by the maximum.
fn score_entities<'a>(
    triples: impl Iterator<Item = &'a SemanticTriple>,
    context: &str,
    now_ms: u64,
    kb: &KnowledgeBase,
    cfg: &ContextConfig,
) -> Vec<ScoredEntity> {
    let tau_ms = cfg.recency_tau_s * 1000.0;
    let mut raw: BTreeMap<(String, String), f64> = BTreeMap::new();
    for t in triples {
        let age = now_ms.saturating_sub(t.observed_at_ms) as f64;
        let decay = (-age / tau_ms).exp();
        let mut ents = vec![(t.subject.id.clone(), t.subject.kind.clone())];
        if let Object::Entity(o) = &t.object {
            ents.push((o.id.clone(), o.kind.clone()));
        }
        for (id, kind) in ents {
            *raw.entry((id, kind)).or_default() += decay;
        }
    }
    let mut out: Vec<ScoredEntity> = raw
        .into_iter()
        .map(|((id, kind), s)| ScoredEntity {
            score: kb.prior(context, &kind) * s,
            id,
            kind,
        })
        .collect();
    let max = out.iter().map(|e| e.score).fold(0.0, f64::max);
    if max > 0.0 {
        for e in &mut out {
            e.score = (e.score / max).clamp(0.0, 1.0);
        }
    }
    out.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.id.cmp(&b.id)));
    out
}

/// Whether an open context should close at `now_ms`, and why.
pub fn close_context(ctx: &TemporalContext, now_ms: u64, steady_state_window_ms: u64) -> Option<ResetReason> {
    if !ctx.active {
        return None;
    }
    if ctx.concluded {
        return Some(ResetReason::EventConcluded);
    }
    if now_ms.saturating_sub(ctx.last_signal_ms) > steady_state_window_ms {
        return Some(ResetReason::SteadyState);
    }
    None
}

#[derive(Debug, Clone, PartialEq)]
pub enum ContextEvent {
    Opened(TemporalContext),
    Closed { context: TemporalContext, reason: ResetReason },
}

/// The engine's single current context. Opens on an identified pattern and
/// stays open (refreshing its signal time) until it concludes or goes quiet.
#[derive(Debug, Clone, Default)]
pub struct ContextTracker {
    cfg: ContextConfig,
    current: Option<TemporalContext>,
}

impl ContextTracker {
    pub fn new(cfg: ContextConfig) -> Self {
        Self { cfg, current: None }
    }

    pub fn current(&self) -> Option<&TemporalContext> {
        self.current.as_ref()
    }

    pub fn is_active(&self) -> bool {
        self.current.is_some()
    }

    /// Folds one identification result and the alerts raised on the same
    /// frame into the tracked context.
    pub fn observe(
        &mut self,
        identified: &TemporalContext,
        kg: &KgSnapshot,
        queries: &[UserQuery],
        alerts: &[Alert],
        now_ms: u64,
    ) -> Vec<ContextEvent> {
        let mut events = Vec::new();
        if self.current.is_none() && identified.active {
            self.current = Some(identified.clone());
            events.push(ContextEvent::Opened(identified.clone()));
        }
        let Some(ctx) = self.current.as_mut() else {
            return events;
        };
        ctx.scored_entities = identified.scored_entities.clone();
        let pattern = ctx
            .query_id
            .as_deref()
            .and_then(|id| queries.iter().find(|q| q.query_id == id))
            .and_then(UserQuery::pattern);
        match pattern {
            Some(p) => {
                let since = TimeWindow::new(ctx.opened_at_ms, now_ms.max(ctx.opened_at_ms)).expect("ordered");
                if let Some(ms) = latest_signal(kg, p, since) {
                    ctx.last_signal_ms = ctx.last_signal_ms.max(ms);
                }
            }
            None => ctx.concluded = true,
        }
        if alerts.iter().any(|a| Some(&a.query_id) == ctx.query_id.as_ref()) {
            ctx.concluded = true;
        }
        if let Some(reason) = close_context(ctx, now_ms, self.cfg.steady_state_window_ms()) {
            let context = self.current.take().expect("open");
            events.push(ContextEvent::Closed { context, reason });
        }
        events
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct QuestionSet {
    pub questions: Vec<Question>,
    /// Frames ahead the questions apply to.
    pub for_horizon_k: u32,
}

/// Stable sort by priority, drop repeats of (target, text), keep the first
/// five.
pub fn select_top(mut candidates: Vec<Question>) -> Vec<Question> {
    candidates.sort_by(|a, b| b.priority.total_cmp(&a.priority));
    let mut seen = BTreeSet::new();
    candidates
        .into_iter()
        .filter(|q| seen.insert((q.target.clone(), q.text.clone())))
        .take(MAX_QUESTIONS)
        .collect()
}

/// Emits question sets, keeping the round-robin cursor over the baseline
/// bank between calls.
#[derive(Debug, Clone, Default)]
pub struct QuestionGenerator {
    cursor: usize,
    issued: u64,
}

impl QuestionGenerator {
    pub fn new() -> Self {
        Self::default()
    }

    fn question(&mut self, kb: &KnowledgeBase, kind: &str, predicate: &str, priority: f64) -> Result<Question, ContextError> {
        let tpl = kb
            .template(predicate)
            .ok_or_else(|| ContextError::MissingTemplate(predicate.to_string()))?;
        self.issued += 1;
        Ok(Question {
            qid: format!("q{}", self.issued),
            text: tpl.render(kind),
            target: QuestionTarget::new(kind, predicate),
            expected_tokens: tpl.tokens,
            priority,
        })
    }

    /// Next question set: one next-step question per partially matched
    /// query (the context's own first), then the rest of the pending steps,
    /// then attributes of the top-scored entities, then the baseline
    /// rotation.
    pub fn vqg(
        &mut self,
        _s_t: Option<&InferenceResponse>,
        kb: &KnowledgeBase,
        context: &TemporalContext,
        pending: &[PendingStep],
    ) -> Result<QuestionSet, ContextError> {
        let mut ordered: Vec<&PendingStep> = Vec::new();
        let own = context.query_id.as_deref();
        let mut firsts: Vec<&PendingStep> = Vec::new();
        let mut seen_q = BTreeSet::new();
        for p in pending.iter().filter(|p| Some(p.query_id.as_str()) == own).chain(pending.iter().filter(|p| Some(p.query_id.as_str()) != own)) {
            if seen_q.insert(p.query_id.as_str()) {
                firsts.push(p);
            } else {
                ordered.push(p);
            }
        }
        firsts.extend(ordered);

        let mut candidates = Vec::new();
        let mut rank = 0.0;
        for p in firsts {
            let Some(pred) = p.matcher.predicate.as_deref() else { continue };
            let kind = p.subject_kind.as_deref().unwrap_or("*");
            candidates.push(self.question(kb, kind, pred, 3.0 - rank)?);
            rank += 1e-3;
        }
        if context.active {
            let mut kinds_done = BTreeSet::new();
            for e in &context.scored_entities {
                if !kinds_done.insert(e.kind.as_str()) {
                    continue;
                }
                for pred in kb.predicates_for_kind(&e.kind) {
                    candidates.push(self.question(kb, &e.kind, pred, 1.0 + e.score)?);
                }
            }
        }
        let mut chosen = select_top(candidates);

        let bank = kb.baseline_bank();
        let mut used = 0;
        while chosen.len() < MAX_QUESTIONS && used < bank.len() {
            let tpl = bank[(self.cursor + used) % bank.len()];
            used += 1;
            let kind = kb.subject_kinds(&tpl.predicate).first().copied().unwrap_or("*").to_string();
            let q = self.question(kb, &kind, &tpl.predicate.clone(), 0.0)?;
            if !chosen.iter().any(|c| c.target == q.target && c.text == q.text) {
                chosen.push(q);
            }
        }
        if !bank.is_empty() {
            self.cursor = (self.cursor + used) % bank.len();
        }
        assert!(chosen.len() <= MAX_QUESTIONS);
        Ok(QuestionSet {
            questions: chosen,
            for_horizon_k: 1,
        })
    }
}
