//! Frame admission and constraint resolution.
//!
//! [`resolve`] picks the model and admit rate for the current question load:
//! the highest rate on a 0.25 fps grid that every budget allows, then the
//! lowest predicted latency, then the lowest cost. [`FrameScheduler`] paces
//! frames to that rate on the data path.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::inference::{ModelProfile, Question};
use crate::ingest::FrameRef;

/// Admit rates are searched on multiples of this step.
pub const RATE_STEP: f64 = 0.25;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConstraintSpec {
    pub target_fps: f64,
    /// Per-frame end-to-end budget.
    pub max_latency_ms: f64,
    pub memory_budget_mb: u64,
    /// Abstract cost units per second.
    pub cost_budget: f64,
    pub escalation_factor: f64,
    /// Fixed pipeline cost added to every model call.
    pub overhead_ms: f64,
    pub motion_weight: f64,
    pub detail_weight: f64,
    pub ewma_alpha: f64,
}

impl Default for ConstraintSpec {
    fn default() -> Self {
        Self {
            target_fps: 8.0,
            max_latency_ms: 10_000.0,
            memory_budget_mb: 24_000,
            cost_budget: 100.0,
            escalation_factor: 2.0,
            overhead_ms: 10.0,
            motion_weight: 1.0,
            detail_weight: 1.0,
            ewma_alpha: 0.2,
        }
    }
}

impl ConstraintSpec {
    pub fn validate(&self) -> Result<(), SchedulerError> {
        let positive = [
            ("target_fps", self.target_fps),
            ("max_latency_ms", self.max_latency_ms),
            ("memory_budget_mb", self.memory_budget_mb as f64),
            ("cost_budget", self.cost_budget),
            ("escalation_factor", self.escalation_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SchedulerError::InvalidConstraints(format!("{name} must be > 0")));
            }
        }
        if !(self.overhead_ms >= 0.0) || !(self.motion_weight >= 0.0) || !(self.detail_weight >= 0.0) {
            return Err(SchedulerError::InvalidConstraints("overhead and weights must be >= 0".into()));
        }
        if !(self.ewma_alpha > 0.0 && self.ewma_alpha <= 1.0) {
            return Err(SchedulerError::InvalidConstraints("ewma_alpha must be in (0, 1]".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Binding {
    Memory,
    Latency,
    NoAssignableModel,
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SchedulerError {
    #[error("infeasible ({binding:?}): {detail}")]
    Infeasible { binding: Binding, detail: String },
    #[error("invalid constraints: {0}")]
    InvalidConstraints(String),
}

/// Shape of the per-frame question batch a plan must serve.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QuestionLoad {
    pub predicates: BTreeSet<String>,
    /// Sum of expected output tokens over the batch.
    pub expected_tokens: u32,
}

impl QuestionLoad {
    pub fn new<I, S>(predicates: I, expected_tokens: u32) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            predicates: predicates.into_iter().map(Into::into).collect(),
            expected_tokens,
        }
    }

    pub fn from_questions(questions: &[Question]) -> Self {
        Self {
            predicates: questions.iter().map(|q| q.target.predicate.clone()).collect(),
            expected_tokens: questions.iter().map(|q| q.expected_tokens).sum(),
        }
    }

    pub fn servable_by(&self, p: &ModelProfile) -> bool {
        !p.is_resident_only() && self.predicates.iter().all(|q| p.can_answer(q))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchedulePlan {
    pub admit_rate: f64,
    /// Model serving the frame's question batch.
    pub model_id: String,
    pub predicted_latency_ms: f64,
    /// Cost units per second at `admit_rate`.
    pub cost_per_s: f64,
    /// Assigned model plus every resident helper.
    pub footprint_mb: u64,
    pub escalated: bool,
}

/// Telemetry the resolver and the admission path read.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PipelineState {
    pub source_fps: f64,
    /// Items waiting in front of each stage.
    pub queue_depths: BTreeMap<String, usize>,
    /// Inference-stage depth at which frames are dropped for backlog.
    pub backlog_limit: usize,
    /// Rolling measured latency per model.
    pub latency_ewma: BTreeMap<String, f64>,
    pub active_context: bool,
    pub drops: DropCounters,
}

impl PipelineState {
    pub fn new(source_fps: f64) -> Self {
        Self {
            source_fps,
            backlog_limit: 4,
            ..Default::default()
        }
    }

    pub fn observe_latency(&mut self, model_id: &str, latency_ms: f64, alpha: f64) {
        self.latency_ewma
            .entry(model_id.to_string())
            .and_modify(|e| *e = alpha * latency_ms + (1.0 - alpha) * *e)
            .or_insert(latency_ms);
    }

    pub fn inference_backlog(&self) -> usize {
        self.queue_depths.get("inference").copied().unwrap_or(0)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropCounters {
    pub pace: u64,
    pub backlog: u64,
    pub budget: u64,
}

impl DropCounters {
    pub fn record(&mut self, reason: DropReason) {
        match reason {
            DropReason::Pace => self.pace += 1,
            DropReason::Backlog => self.backlog += 1,
            DropReason::Budget => self.budget += 1,
        }
    }

    pub fn total(&self) -> u64 {
        self.pace + self.backlog + self.budget
    }
}

/// Predicted per-frame latency of `p` on `load`: the linear token model plus
/// overhead, or the measured average if that is worse.
pub fn predicted_latency_ms(p: &ModelProfile, load: &QuestionLoad, overhead_ms: f64, state: &PipelineState) -> f64 {
    let modelled = p.latency_ms(load.expected_tokens) + overhead_ms;
    match state.latency_ewma.get(&p.model_id) {
        Some(&m) => modelled.max(m),
        None => modelled,
    }
}

/// Largest grid rate not above `cap`, or `cap` itself when it is below the
/// first grid step.
pub fn quantize_rate(cap: f64) -> f64 {
    let q = (cap / RATE_STEP + 1e-9).floor() * RATE_STEP;
    if q >= RATE_STEP {
        q
    } else {
        cap
    }
}

pub fn resolve(
    constraints: &ConstraintSpec,
    profiles: &[ModelProfile],
    load: &QuestionLoad,
    state: &PipelineState,
) -> Result<SchedulePlan, SchedulerError> {
    constraints.validate()?;
    let resident: u64 = profiles.iter().filter(|p| p.is_resident_only()).map(|p| p.footprint_mb).sum();
    let eligible: Vec<&ModelProfile> = profiles.iter().filter(|p| load.servable_by(p)).collect();
    if eligible.is_empty() {
        return Err(SchedulerError::Infeasible {
            binding: Binding::NoAssignableModel,
            detail: format!("no model answers {:?}", load.predicates),
        });
    }
    let source = if state.source_fps > 0.0 { state.source_fps } else { f64::INFINITY };
    let mut best: Option<SchedulePlan> = None;
    let mut memory_bound = 0;
    for p in &eligible {
        let footprint = p.footprint_mb + resident;
        if footprint > constraints.memory_budget_mb {
            memory_bound += 1;
            continue;
        }
        let latency = predicted_latency_ms(p, load, constraints.overhead_ms, state);
        if latency > constraints.max_latency_ms {
            continue;
        }
        let mut cap = constraints.target_fps.min(source).min(1000.0 / latency);
        if p.cost_per_call > 0.0 {
            cap = cap.min(constraints.cost_budget / p.cost_per_call);
        }
        let rate = quantize_rate(cap);
        let cand = SchedulePlan {
            admit_rate: rate,
            model_id: p.model_id.clone(),
            predicted_latency_ms: latency,
            cost_per_s: rate * p.cost_per_call,
            footprint_mb: footprint,
            escalated: false,
        };
        if best.as_ref().is_none_or(|b| better(&cand, b)) {
            best = Some(cand);
        }
    }
    best.ok_or_else(|| {
        if memory_bound == eligible.len() {
            SchedulerError::Infeasible {
                binding: Binding::Memory,
                detail: format!("no assignable model fits {} MB with {resident} MB resident", constraints.memory_budget_mb),
            }
        } else {
            SchedulerError::Infeasible {
                binding: Binding::Latency,
                detail: format!("no assignable model meets {} ms per frame", constraints.max_latency_ms),
            }
        }
    })
}

/// Lexicographic order: rate up, then latency, cost and model id down.
fn better(a: &SchedulePlan, b: &SchedulePlan) -> bool {
    a.admit_rate
        .total_cmp(&b.admit_rate)
        .then(b.predicted_latency_ms.total_cmp(&a.predicted_latency_ms))
        .then(b.cost_per_s.total_cmp(&a.cost_per_s))
        .then(b.model_id.cmp(&a.model_id))
        .is_gt()
}

/// Re-resolves with the target multiplied by the escalation factor while a
/// context is active; otherwise returns the base plan.
pub fn escalate(
    constraints: &ConstraintSpec,
    profiles: &[ModelProfile],
    load: &QuestionLoad,
    state: &PipelineState,
    context_active: bool,
) -> Result<SchedulePlan, SchedulerError> {
    if !context_active {
        return resolve(constraints, profiles, load, state);
    }
    let boosted = ConstraintSpec {
        target_fps: constraints.target_fps * constraints.escalation_factor,
        ..constraints.clone()
    };
    let mut plan = resolve(&boosted, profiles, load, state)?;
    plan.escalated = true;
    Ok(plan)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DropReason {
    Pace,
    Backlog,
    Budget,
}

impl DropReason {
    pub fn as_str(self) -> &'static str {
        match self {
            DropReason::Pace => "pace",
            DropReason::Backlog => "backlog",
            DropReason::Budget => "budget",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Admission {
    Admit,
    Drop(DropReason),
}

/// Integer error-diffusion pacer. Each frame step adds `rate` micro-frames of
/// credit; a frame is eligible once a full source second's worth
/// (`fps * 1e6`) has built up. Credit starts full and is capped just below
/// one frame plus one step, which keeps the diffusion remainder but rules out
/// bursts after idle stretches: any `fps` consecutive frames hold at most
/// `ceil(rate)` admits.
#[derive(Debug, Clone)]
pub struct Pacer {
    source_fps: u64,
    rate_ufps: u64,
    credit: u64,
    last_seq: Option<u64>,
}

impl Pacer {
    pub fn new(source_fps: u32, rate: f64) -> Self {
        let threshold = source_fps as u64 * 1_000_000;
        Self {
            source_fps: source_fps as u64,
            rate_ufps: to_ufps(rate),
            credit: threshold,
            last_seq: None,
        }
    }

    fn threshold(&self) -> u64 {
        self.source_fps * 1_000_000
    }

    fn cap(&self) -> u64 {
        self.threshold() + self.rate_ufps.saturating_sub(1)
    }

    pub fn set_rate(&mut self, rate: f64) {
        self.rate_ufps = to_ufps(rate);
    }

    fn advance(&mut self, seq: u64) {
        if let Some(last) = self.last_seq {
            let steps = seq.saturating_sub(last);
            self.credit = self
                .credit
                .saturating_add(self.rate_ufps.saturating_mul(steps))
                .min(self.cap());
        }
        self.last_seq = Some(self.last_seq.map_or(seq, |l| l.max(seq)));
    }

    /// Whether frame `seq` is pace-eligible.
    pub fn eligible(&mut self, seq: u64) -> bool {
        self.advance(seq);
        self.credit >= self.threshold()
    }

    pub fn consume(&mut self) {
        self.credit = self.credit.saturating_sub(self.threshold());
    }
}

fn to_ufps(rate: f64) -> u64 {
    (rate.max(0.0) * 1e6).round() as u64
}

/// Data-path admission: pacing, backlog and the per-second cost cap.
#[derive(Debug, Clone)]
pub struct FrameScheduler {
    pacer: Pacer,
    motion_weight: f64,
    detail_weight: f64,
    rate: f64,
    recent_admits: VecDeque<u64>,
}

impl FrameScheduler {
    pub fn new(source_fps: u32, plan: &SchedulePlan, constraints: &ConstraintSpec) -> Self {
        Self {
            pacer: Pacer::new(source_fps, plan.admit_rate),
            motion_weight: constraints.motion_weight,
            detail_weight: constraints.detail_weight,
            rate: plan.admit_rate,
            recent_admits: VecDeque::new(),
        }
    }

    pub fn score(&self, f: &FrameRef) -> f64 {
        self.motion_weight * f.motion_score + self.detail_weight * f.scene_detail_score
    }

    fn sync(&mut self, plan: &SchedulePlan) {
        if plan.admit_rate != self.rate {
            self.rate = plan.admit_rate;
            self.pacer.set_rate(plan.admit_rate);
        }
    }

    fn budget_ok(&mut self, now_ms: u64, plan: &SchedulePlan, constraints: &ConstraintSpec) -> bool {
        while self.recent_admits.front().is_some_and(|&t| t + 1000 <= now_ms) {
            self.recent_admits.pop_front();
        }
        let per_call = if plan.admit_rate > 0.0 { plan.cost_per_s / plan.admit_rate } else { 0.0 };
        if per_call <= 0.0 {
            return true;
        }
        let allowed = ((constraints.cost_budget / per_call + 1e-9).floor() as usize).max(1);
        self.recent_admits.len() < allowed
    }

    pub fn admit(
        &mut self,
        frame: &FrameRef,
        plan: &SchedulePlan,
        state: &PipelineState,
        constraints: &ConstraintSpec,
    ) -> Admission {
        self.sync(plan);
        if !self.pacer.eligible(frame.seq) {
            return Admission::Drop(DropReason::Pace);
        }
        if state.inference_backlog() >= state.backlog_limit.max(1) {
            return Admission::Drop(DropReason::Backlog);
        }
        if !self.budget_ok(frame.timestamp_ms, plan, constraints) {
            return Admission::Drop(DropReason::Budget);
        }
        self.pacer.consume();
        self.recent_admits.push_back(frame.timestamp_ms);
        Admission::Admit
    }

    /// Decides a group of frames that arrived together. If the pacer allows
    /// one, the highest-scoring frame takes the slot (earliest on ties); the
    /// rest drop for pace.
    pub fn admit_slot(
        &mut self,
        frames: &[FrameRef],
        plan: &SchedulePlan,
        state: &PipelineState,
        constraints: &ConstraintSpec,
    ) -> Vec<Admission> {
        let mut out = vec![Admission::Drop(DropReason::Pace); frames.len()];
        let Some(last) = frames.iter().map(|f| f.seq).max() else {
            return out;
        };
        self.sync(plan);
        if !self.pacer.eligible(last) {
            return out;
        }
        let mut best = 0;
        for (i, f) in frames.iter().enumerate() {
            if self.score(f) > self.score(&frames[best]) {
                best = i;
            }
        }
        out[best] = if state.inference_backlog() >= state.backlog_limit.max(1) {
            Admission::Drop(DropReason::Backlog)
        } else if !self.budget_ok(frames[best].timestamp_ms, plan, constraints) {
            Admission::Drop(DropReason::Budget)
        } else {
            self.pacer.consume();
            self.recent_admits.push_back(frames[best].timestamp_ms);
            Admission::Admit
        };
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::inference::tests::profile;
    use crate::inference::Tier;
    use crate::ingest::FramePayload;
    use proptest::prelude::*;
    use std::sync::Arc;

    fn lite() -> ModelProfile {
        let mut p = profile("vqa-lite", Tier::Lightweight, 80.0, 4.0, &["collided_with", "lying_on"]);
        p.footprint_mb = 8000;
        p
    }

    fn heavy() -> ModelProfile {
        let mut p = profile("vqa-heavy", Tier::Heavyweight, 2500.0, 30.0, &["collided_with", "lying_on"]);
        p.footprint_mb = 18_000;
        p
    }

    fn state() -> PipelineState {
        PipelineState::new(24.0)
    }

    fn frame(seq: u64, motion: f64) -> FrameRef {
        FrameRef {
            source_id: Arc::from("s"),
            seq,
            timestamp_ms: seq * 1000 / 24,
            payload: FramePayload::Image(Arc::new(Vec::new())),
            motion_score: motion,
            scene_detail_score: 0.0,
        }
    }

    #[test]
    fn heavyweight_alone_is_below_a_third_fps() {
        let load = QuestionLoad::new(["*"], 120);
        let plan = resolve(&ConstraintSpec::default(), &[heavy()], &load, &state()).unwrap();
        assert!(plan.admit_rate < 1.0 / 3.0, "{plan:?}");
        assert!((plan.predicted_latency_ms - 6110.0).abs() < 1e-9);
    }

    #[test]
    fn lightweight_reaches_target() {
        let load = QuestionLoad::new(["collided_with"], 5);
        let plan = resolve(&ConstraintSpec::default(), &[lite(), heavy()], &load, &state()).unwrap();
        assert_eq!(plan.model_id, "vqa-lite");
        assert_eq!(plan.admit_rate, 8.0);
        assert!((plan.predicted_latency_ms - 110.0).abs() < 1e-9);
    }

    #[test]
    fn resident_models_count_toward_memory_only() {
        let mut summarizer = profile("summarizer", Tier::Lightweight, 0.0, 0.0, &[]);
        summarizer.footprint_mb = 2000;
        let load = QuestionLoad::new(["lying_on"], 5);
        let plan = resolve(&ConstraintSpec::default(), &[summarizer.clone(), lite()], &load, &state()).unwrap();
        assert_eq!(plan.footprint_mb, 10_000);
        assert_eq!(plan.model_id, "vqa-lite");
        let tight = ConstraintSpec {
            memory_budget_mb: 9000,
            ..Default::default()
        };
        let err = resolve(&tight, &[summarizer, lite()], &load, &state()).unwrap_err();
        assert!(matches!(err, SchedulerError::Infeasible { binding: Binding::Memory, .. }));
    }

    #[test]
    fn infeasibility_names_the_binding_constraint() {
        let load = QuestionLoad::new(["fleeing"], 5);
        let err = resolve(&ConstraintSpec::default(), &[lite()], &load, &state()).unwrap_err();
        assert!(matches!(err, SchedulerError::Infeasible { binding: Binding::NoAssignableModel, .. }));
        let load = QuestionLoad::new(["*"], 120);
        let c = ConstraintSpec {
            max_latency_ms: 1000.0,
            ..Default::default()
        };
        let err = resolve(&c, &[heavy()], &load, &state()).unwrap_err();
        assert!(matches!(err, SchedulerError::Infeasible { binding: Binding::Latency, .. }));
    }

    #[test]
    fn measured_latency_raises_prediction() {
        let load = QuestionLoad::new(["collided_with"], 5);
        let mut s = state();
        s.observe_latency("vqa-lite", 240.0, 0.2);
        let plan = resolve(&ConstraintSpec::default(), &[lite()], &load, &s).unwrap();
        assert_eq!(plan.predicted_latency_ms, 240.0);
        assert_eq!(plan.admit_rate, 4.0);
        s.observe_latency("vqa-lite", 40.0, 0.2);
        assert!((s.latency_ewma["vqa-lite"] - 200.0).abs() < 1e-9);
    }

    #[test]
    fn escalation_doubles_target_within_feasibility() {
        let load = QuestionLoad::new(["collided_with"], 5);
        let c = ConstraintSpec {
            target_fps: 4.0,
            ..Default::default()
        };
        let base = escalate(&c, &[lite()], &load, &state(), false).unwrap();
        assert_eq!(base, resolve(&c, &[lite()], &load, &state()).unwrap());
        let up = escalate(&c, &[lite()], &load, &state(), true).unwrap();
        assert_eq!((up.admit_rate, up.escalated), (8.0, true));
        let c = ConstraintSpec::default();
        let capped = escalate(&c, &[lite()], &load, &state(), true).unwrap();
        assert_eq!(capped.admit_rate, 9.0, "1000 / 110 ms floors to 9 on the grid");
    }

    #[test]
    fn full_rate_admits_everything() {
        let plan = SchedulePlan {
            admit_rate: 24.0,
            model_id: "m".into(),
            predicted_latency_ms: 1.0,
            cost_per_s: 0.0,
            footprint_mb: 1,
            escalated: false,
        };
        let c = ConstraintSpec::default();
        let mut s = FrameScheduler::new(24, &plan, &c);
        assert!((0..100).all(|i| s.admit(&frame(i, 0.5), &plan, &state(), &c) == Admission::Admit));
    }

    #[test]
    fn eight_of_twenty_four_is_one_in_three() {
        let plan = SchedulePlan {
            admit_rate: 8.0,
            model_id: "m".into(),
            predicted_latency_ms: 1.0,
            cost_per_s: 0.0,
            footprint_mb: 1,
            escalated: false,
        };
        let c = ConstraintSpec::default();
        let mut s = FrameScheduler::new(24, &plan, &c);
        let admitted: Vec<bool> = (0..240).map(|i| s.admit(&frame(i, 0.5), &plan, &state(), &c) == Admission::Admit).collect();
        for w in admitted.windows(3) {
            assert_eq!(w.iter().filter(|a| **a).count(), 1);
        }
    }

    #[test]
    fn slot_prefers_motion() {
        let plan = SchedulePlan {
            admit_rate: 8.0,
            model_id: "m".into(),
            predicted_latency_ms: 1.0,
            cost_per_s: 0.0,
            footprint_mb: 1,
            escalated: false,
        };
        let c = ConstraintSpec::default();
        let mut s = FrameScheduler::new(24, &plan, &c);
        let out = s.admit_slot(&[frame(0, 0.1), frame(1, 0.9)], &plan, &state(), &c);
        assert_eq!(out, vec![Admission::Drop(DropReason::Pace), Admission::Admit]);
    }

    #[test]
    fn backlog_then_budget() {
        let plan = SchedulePlan {
            admit_rate: 24.0,
            model_id: "m".into(),
            predicted_latency_ms: 1.0,
            cost_per_s: 24.0,
            footprint_mb: 1,
            escalated: false,
        };
        let c = ConstraintSpec {
            cost_budget: 2.0,
            ..Default::default()
        };
        let mut st = state();
        st.queue_depths.insert("inference".into(), 4);
        let mut s = FrameScheduler::new(24, &plan, &c);
        assert_eq!(s.admit(&frame(0, 0.0), &plan, &st, &c), Admission::Drop(DropReason::Backlog));
        st.queue_depths.clear();
        let got: Vec<Admission> = (1..5).map(|i| s.admit(&frame(i, 0.0), &plan, &st, &c)).collect();
        assert_eq!(got[..2], [Admission::Admit, Admission::Admit]);
        assert_eq!(got[2], Admission::Drop(DropReason::Budget));
    }

    proptest! {
        #[test]
        fn pacer_never_exceeds_ceil_rate_per_second(rate_q in 1u32..=96, fps in prop::sample::select(vec![10u32, 24, 25, 30])) {
            let rate = (rate_q as f64 * RATE_STEP).min(fps as f64);
            let mut p = Pacer::new(fps, rate);
            let admits: Vec<u64> = (0..fps as u64 * 10)
                .filter(|&seq| { let ok = p.eligible(seq); if ok { p.consume(); } ok })
                .collect();
            for (i, &a) in admits.iter().enumerate() {
                let in_window = admits[i..].iter().take_while(|&&b| b < a + fps as u64).count();
                prop_assert!(in_window as f64 <= rate.ceil());
            }
            let expected = rate * 10.0;
            prop_assert!((admits.len() as f64 - expected).abs() <= 1.0);
        }

        #[test]
        fn relaxing_a_budget_never_lowers_the_rate(
            base in 50.0f64..3000.0, per in 0.0f64..40.0, mem in 1000u64..20000,
            target in 0.25f64..30.0, lat_budget in 100.0f64..8000.0, cost in 0.1f64..20.0,
            which in 0usize..4, factor in 1.0f64..4.0,
        ) {
            let mut p = profile("m", Tier::Lightweight, base, per, &["p"]);
            p.footprint_mb = mem;
            p.cost_per_call = 1.0;
            let load = QuestionLoad::new(["p"], 5);
            let c = ConstraintSpec { target_fps: target, max_latency_ms: lat_budget, memory_budget_mb: 10_000, cost_budget: cost, ..Default::default() };
            let mut r = c.clone();
            match which {
                0 => r.target_fps *= factor,
                1 => r.max_latency_ms *= factor,
                2 => r.memory_budget_mb = (r.memory_budget_mb as f64 * factor) as u64,
                _ => r.cost_budget *= factor,
            }
            let before = resolve(&c, std::slice::from_ref(&p), &load, &state()).map(|p| p.admit_rate).unwrap_or(0.0);
            let after = resolve(&r, &[p], &load, &state()).map(|p| p.admit_rate).unwrap_or(0.0);
            prop_assert!(after >= before);
        }
    }
}
