use std::collections::{HashMap, VecDeque};
use std::sync::atomic::Ordering;
use std::sync::Arc;

use super::events::{EventKind, PendingTargets};
use super::metrics::{FpsPoint, FpsSampler};
use super::{EngineConfig, EngineError, Mode, Shared};
use crate::clock::ms_to_us;
use crate::context::{identify, ContextEvent, ContextTracker, QuestionGenerator, TemporalContext};
use crate::ingest::FrameRef;
use crate::inference::{InferenceEngine, InferenceResponse, ModelProfile, Prompt, Question, QuestionTarget, Tier};
use crate::knowledge::{build, KnowledgeBase, ResetReason, TemporalKnowledgeGraph};
use crate::query::{evaluate_standing, Alert, MatchState, PendingStep, UserQuery};
use crate::scheduler::{escalate, PipelineState, QuestionLoad, SchedulePlan};

/// Tokens assumed for the descriptive question when the KB declares none.
const DESCRIPTIVE_TOKENS: u32 = 120;

/// The question batch every admitted frame is planned for.
pub(super) fn planned_load(mode: Mode, kb: &KnowledgeBase) -> QuestionLoad {
    match mode {
        Mode::Baseline => {
            let tokens = kb.descriptive.as_ref().map_or(DESCRIPTIVE_TOKENS, |d| d.tokens);
            QuestionLoad::new(["*"], tokens)
        }
        Mode::Streaming => {
            let preds = kb.templates.iter().filter(|t| t.predicate != "*").map(|t| t.predicate.clone());
            let max_tokens = kb.templates.iter().map(|t| t.tokens).max().unwrap_or(1);
            QuestionLoad::new(preds, max_tokens * crate::inference::MAX_QUESTIONS as u32)
        }
    }
}

fn descriptive_question(kb: &KnowledgeBase) -> Question {
    let (text, tokens) = match &kb.descriptive {
        Some(d) => (d.render("*"), d.tokens),
        None => ("Describe everything happening in the scene.".to_string(), DESCRIPTIVE_TOKENS),
    };
    Question {
        qid: "describe".into(),
        text,
        target: QuestionTarget::new("*", "*"),
        expected_tokens: tokens,
        priority: 0.0,
    }
}

/// Resolver and escalation state. Owned by one thread.
pub(crate) struct Controller {
    constraints: crate::scheduler::ConstraintSpec,
    profiles: Vec<ModelProfile>,
    load: QuestionLoad,
    state: PipelineState,
    plan: SchedulePlan,
    sampler: FpsSampler,
}

impl Controller {
    pub(crate) fn new(config: &EngineConfig, kb: &KnowledgeBase, profiles: Vec<ModelProfile>, fps: u32) -> Result<Self, EngineError> {
        let load = planned_load(config.mode, kb);
        let mut state = PipelineState::new(fps as f64);
        state.backlog_limit = config.queue_capacity;
        let plan = escalate(&config.constraints, &profiles, &load, &state, false)?;
        Ok(Self {
            constraints: config.constraints.clone(),
            profiles,
            load,
            state,
            plan,
            sampler: FpsSampler::new(),
        })
    }

    pub(crate) fn plan(&self) -> &SchedulePlan {
        &self.plan
    }

    pub(crate) fn state(&self) -> &PipelineState {
        &self.state
    }

    pub(crate) fn observe_latency(&mut self, model_id: &str, per_frame_ms: f64) {
        let alpha = self.constraints.ewma_alpha;
        self.state.observe_latency(model_id, per_frame_ms, alpha);
    }

    /// Re-resolves; returns the new plan when it differs. An infeasible
    /// re-plan keeps the current plan.
    fn replan(&mut self) -> Option<SchedulePlan> {
        match escalate(&self.constraints, &self.profiles, &self.load, &self.state, self.state.active_context) {
            Ok(p) if p != self.plan => {
                self.plan = p.clone();
                Some(p)
            }
            Ok(_) => None,
            Err(e) => {
                tracing::warn!(error = %e, "re-plan infeasible; keeping the current plan");
                None
            }
        }
    }

    pub(crate) fn admitted(&mut self, ts_ms: u64) {
        self.sampler.admit(ts_ms);
    }

    /// Closes finished one-second buckets, re-planning after each.
    pub(crate) fn tick(&mut self, shared: &Shared, ts_ms: u64) {
        for (t_ms, count) in self.sampler.advance(ts_ms) {
            let point = FpsPoint {
                t_ms,
                fps: count as f64,
                escalated: self.plan.escalated,
            };
            shared.emit(EventKind::FpsSample {
                t_ms,
                fps: point.fps,
                escalated: point.escalated,
            });
            shared.metrics.lock().fps_series.push(point);
            if let Some(plan) = self.replan() {
                publish_plan(shared, plan, None);
            }
        }
    }

    pub(crate) fn set_active(&mut self, shared: &Shared, active: bool) {
        if self.state.active_context == active {
            return;
        }
        self.state.active_context = active;
        match self.replan() {
            Some(plan) => publish_plan(shared, plan, Some(active)),
            None => {
                shared.emit(EventKind::Escalate {
                    active,
                    plan: self.plan.clone(),
                });
            }
        }
    }
}

fn publish_plan(shared: &Shared, plan: SchedulePlan, escalation: Option<bool>) {
    shared.plan.store(Arc::new(plan.clone()));
    {
        let mut m = shared.metrics.lock();
        m.record_plan(&plan);
        debug_assert!(m.memory_violations == 0, "plan exceeds the memory budget");
    }
    let kind = match escalation {
        Some(active) => EventKind::Escalate { active, plan },
        None => EventKind::Plan { plan },
    };
    shared.emit(kind);
}

/// Runs one admitted frame through the models. `None` when the frame was
/// filtered out or the call failed.
pub(crate) fn extract(
    shared: &Shared,
    inference: &InferenceEngine,
    frame: FrameRef,
    questions: &[Question],
    filter: &[Question],
) -> Option<InferenceResponse> {
    let plan = shared.plan.load_full();
    let seq = frame.seq;
    let ts_ms = frame.timestamp_ms;
    let heavy = inference.profile(&plan.model_id).is_some_and(|p| p.tier == Tier::Heavyweight);
    if heavy && !filter.is_empty() && shared.config.mode == Mode::Streaming {
        match inference.tier_filter(&frame, filter) {
            Ok(true) => {}
            Ok(false) => {
                shared.metrics.lock().filtered_frames += 1;
                shared.emit(EventKind::Filtered { seq });
                return None;
            }
            Err(e) => tracing::warn!(error = %e, "filter tier failed; sending the frame on"),
        }
    }
    let prompt = match Prompt::new(frame, questions.to_vec(), plan.model_id.clone()) {
        Ok(p) => p,
        Err(e) => {
            tracing::warn!(error = %e, seq, "skipping frame");
            return None;
        }
    };
    match inference.infer(&prompt) {
        Ok(resp) => {
            shared.metrics.lock().record_call(&resp.model_id, resp.simulated_latency_ms);
            shared.emit(EventKind::Infer {
                seq,
                ts_ms,
                model_id: resp.model_id.clone(),
                latency_ms: resp.simulated_latency_ms,
                questions: prompt.questions.len(),
                facts: resp.facts().count(),
            });
            Some(resp)
        }
        Err(e) => {
            tracing::warn!(error = %e, seq, "inference failed");
            shared.metrics.lock().record_error(&plan.model_id);
            None
        }
    }
}

/// Filter-tier questions built from the configured predicates.
pub(crate) fn filter_questions(config: &EngineConfig, kb: &KnowledgeBase) -> Result<Vec<Question>, EngineError> {
    config
        .filter_predicates
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let tpl = kb
                .template(p)
                .ok_or_else(|| EngineError::Config(format!("filter predicate `{p}` has no question template")))?;
            let kind = kb.subject_kinds(p).first().copied().unwrap_or("*").to_string();
            Ok(Question {
                qid: format!("f{i}"),
                text: tpl.render(&kind),
                target: QuestionTarget::new(kind, p.clone()),
                expected_tokens: tpl.tokens,
                priority: 0.0,
            })
        })
        .collect()
}

/// What a knowledge step asks the rest of the engine to do.
#[derive(Debug, Default)]
pub(crate) struct StepOutcome {
    /// New context activity, when it changed.
    pub context_active: Option<bool>,
    /// Questions for the next admitted frame.
    pub questions: Option<Vec<Question>>,
}

/// Knowledge pipeline: graph construction, standing-query matching, context
/// tracking and question generation. Owned by one thread.
pub(crate) struct Knowledge {
    kg: TemporalKnowledgeGraph,
    matches: MatchState,
    tracker: ContextTracker,
    vqg: QuestionGenerator,
    /// Signatures of recent alerts, oldest first.
    recent_alerts: VecDeque<(u64, (String, Vec<u64>))>,
    seen_alerts: HashMap<(String, Vec<u64>), u64>,
    standing: Vec<UserQuery>,
    standing_version: u64,
}

impl Knowledge {
    pub(crate) fn new(shared: &Shared) -> Result<Self, EngineError> {
        Ok(Self {
            kg: TemporalKnowledgeGraph::new(shared.config.knowledge),
            matches: MatchState::new(),
            tracker: ContextTracker::new(shared.config.context),
            vqg: QuestionGenerator::new(),
            recent_alerts: VecDeque::new(),
            seen_alerts: HashMap::new(),
            standing: Vec::new(),
            standing_version: 0,
        })
    }

    fn refresh_standing(&mut self, shared: &Shared) {
        let v = shared.standing_version.load(Ordering::Acquire);
        if v != self.standing_version {
            self.standing = shared.registry.read().standing();
            self.standing_version = v;
        }
    }

    /// Questions for the first admitted frame.
    pub(crate) fn initial_questions(&mut self, shared: &Shared) -> Vec<Question> {
        match shared.config.mode {
            Mode::Baseline => vec![descriptive_question(&shared.kb)],
            Mode::Streaming => {
                self.refresh_standing(shared);
                self.generate(shared, None, &TemporalContext::steady()).unwrap_or_default()
            }
        }
    }

    fn generate(&mut self, shared: &Shared, s_t: Option<&InferenceResponse>, ctx: &TemporalContext) -> Option<Vec<Question>> {
        let kb = &shared.kb;
        let pending: Vec<PendingStep> = self
            .matches
            .pending(&self.standing)
            .into_iter()
            .filter(|p| p.matcher.predicate.as_deref().is_some_and(|pr| kb.template(pr).is_some()))
            .collect();
        let set = match self.vqg.vqg(s_t, kb, ctx, &pending) {
            Ok(s) => s,
            Err(e) => {
                tracing::warn!(error = %e, "question generation failed; keeping the previous set");
                return None;
            }
        };
        let mut targets: Vec<PendingTargets> = Vec::new();
        for p in &pending {
            let pred = p.matcher.predicate.clone().unwrap_or_default();
            match targets.iter_mut().find(|t| t.query_id == p.query_id) {
                Some(t) if !t.predicates.contains(&pred) => t.predicates.push(pred),
                Some(_) => {}
                None => targets.push(PendingTargets {
                    query_id: p.query_id.clone(),
                    predicates: vec![pred],
                }),
            }
        }
        {
            let mut m = shared.metrics.lock();
            m.questions_emitted += set.questions.len() as u64;
            m.max_questions_per_set = m.max_questions_per_set.max(set.questions.len());
        }
        shared.emit(EventKind::Questions {
            after_seq: s_t.map(|r| r.frame_seq),
            predicates: set.questions.iter().map(|q| q.target.predicate.clone()).collect(),
            pending: targets,
        });
        Some(set.questions)
    }

    fn publish_kg(&self, shared: &Shared) {
        shared.kg.store(Arc::new(self.kg.snapshot()));
    }

    fn dedup(&mut self, alerts: Vec<Alert>, window_ms: u64) -> Vec<Alert> {
        let mut out = Vec::new();
        for a in alerts {
            while let Some((t, _)) = self.recent_alerts.front() {
                if t + window_ms > a.fired_at_ms {
                    break;
                }
                let (t, sig) = self.recent_alerts.pop_front().expect("front");
                if self.seen_alerts.get(&sig) == Some(&t) {
                    self.seen_alerts.remove(&sig);
                }
            }
            let sig = a.signature();
            if self.seen_alerts.contains_key(&sig) {
                continue;
            }
            self.seen_alerts.insert(sig.clone(), a.fired_at_ms);
            self.recent_alerts.push_back((a.fired_at_ms, sig));
            out.push(a);
        }
        out
    }

    /// Folds one response into the graph and runs everything downstream.
    pub(crate) fn step(&mut self, shared: &Shared, resp: &InferenceResponse) -> Result<StepOutcome, EngineError> {
        let now = resp.frame_timestamp_ms;
        let kb = shared.kb.clone();
        let delta = build(&mut self.kg, resp, &kb);
        shared.store.append_triples(&delta.inserted)?;
        self.publish_kg(shared);
        shared.emit(EventKind::Build {
            seq: resp.frame_seq,
            inserted: delta.inserted.len(),
            updated: delta.updated.len(),
            noise: delta.noise.len(),
            filtered: delta.filtered,
            epoch: self.kg.epoch(),
        });
        shared.metrics.lock().noise += delta.noise.len() as u64;

        self.refresh_standing(shared);
        self.matches.prune(&self.standing, now);
        let raw = evaluate_standing(&delta.triples(), &self.standing, &mut self.matches);
        let window_ms = (shared.config.alert_dedup_s * 1000.0).round() as u64;
        let alerts = self.dedup(raw, window_ms);
        if !alerts.is_empty() {
            shared.alerts.write().extend(alerts.iter().cloned());
            shared.metrics.lock().alerts += alerts.len() as u64;
            for a in &alerts {
                shared.emit(EventKind::Alert { alert: a.clone() });
            }
        }

        let mut out = StepOutcome::default();
        if shared.config.mode == Mode::Baseline {
            return Ok(out);
        }
        let was_active = self.tracker.is_active();
        let snap = shared.kg.load_full();
        let identified = identify(&snap, &self.standing, resp, &kb, &shared.config.context);
        for ev in self.tracker.observe(&identified, &snap, &self.standing, &alerts, now) {
            match ev {
                ContextEvent::Opened(ctx) => {
                    shared.emit(EventKind::ContextOpen {
                        label: ctx.label.clone(),
                        query_id: ctx.query_id.clone(),
                        at_ms: now,
                    });
                }
                ContextEvent::Closed { context, reason } => {
                    shared.emit(EventKind::ContextClose {
                        label: context.label.clone(),
                        reason,
                        at_ms: now,
                    });
                    self.reset(shared, reason, now)?;
                }
            }
        }
        let active = self.tracker.is_active();
        {
            let mut m = shared.metrics.lock();
            m.context_active = active;
            m.context = self.tracker.current().map_or_else(|| crate::context::STEADY.to_string(), |c| c.label.clone());
        }
        if active != was_active {
            out.context_active = Some(active);
        }
        let ctx = self.tracker.current().cloned().unwrap_or_else(|| TemporalContext {
            scored_entities: identified.scored_entities.clone(),
            ..TemporalContext::steady()
        });
        out.questions = self.generate(shared, Some(resp), &ctx);
        Ok(out)
    }

    fn reset(&mut self, shared: &Shared, reason: ResetReason, now: u64) -> Result<(), EngineError> {
        let archive = self.kg.reset(reason, now);
        shared.store.append_reset(archive.closed_epoch, now)?;
        self.publish_kg(shared);
        shared.metrics.lock().resets += 1;
        shared.emit(EventKind::Reset {
            closed_epoch: archive.closed_epoch,
            reason,
            at_ms: now,
            archived: archive.triples.len(),
        });
        Ok(())
    }
}

/// Compacts the store when due and logs the new snapshot.
pub(crate) fn maintain(shared: &Shared, now_ms: u64) -> Result<(), EngineError> {
    if let Some(snap) = shared.store.maybe_compact(now_ms)? {
        shared.metrics.lock().compactions += 1;
        shared.emit(EventKind::Compaction {
            snapshot_id: snap.snapshot_id,
            covers_up_to_ms: snap.covers_up_to_ms,
            triples: snap.triples.len(),
        });
    }
    Ok(())
}

/// Clock charge for the per-frame pipeline overhead.
pub(crate) fn overhead_us(config: &EngineConfig) -> u64 {
    ms_to_us(config.constraints.overhead_ms)
}
