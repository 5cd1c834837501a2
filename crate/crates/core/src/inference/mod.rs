//! Tiered question answering over frames.
//!
//! A [`Backend`] answers a [`Prompt`] (one frame, up to five questions). The
//! [`InferenceEngine`] owns the registered backends, enforces capability
//! masking and per-model parallelism, and charges each call's latency on the
//! engine clock.

mod extract;
mod mock;
mod remote;

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::{ms_to_us, Clock};
use crate::ingest::FrameRef;
use crate::triple::Fact;

pub use extract::TemplateExtractor;
pub use mock::MockBackend;
pub use remote::{RemoteBackend, WireAnswer, WireQuestion, WireRequest, WireResponse};

/// Most questions a single prompt may carry.
pub const MAX_QUESTIONS: usize = 5;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum InferenceError {
    #[error("unknown model `{0}`")]
    UnknownModel(String),
    #[error("model `{0}` is already registered")]
    DuplicateModel(String),
    #[error("backend for `{model}` unavailable: {msg}")]
    BackendUnavailable { model: String, msg: String },
    #[error("backend for `{model}` exceeded {limit_ms:.0} ms")]
    Timeout { model: String, limit_ms: f64 },
    #[error("invalid prompt: {0}")]
    InvalidPrompt(String),
    #[error("invalid model profile `{model}`: {msg}")]
    InvalidProfile { model: String, msg: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tier {
    Lightweight,
    Heavyweight,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelProfile {
    pub model_id: String,
    pub tier: Tier,
    pub base_latency_ms: f64,
    pub per_token_ms: f64,
    pub footprint_mb: u64,
    pub cost_per_call: f64,
    /// Predicates the model can answer. An empty set marks a resident helper
    /// that occupies memory but is never assigned questions.
    #[serde(default)]
    pub capabilities: BTreeSet<String>,
    /// Concurrent calls allowed against this model.
    #[serde(default = "one")]
    pub parallelism: usize,
}

fn one() -> usize {
    1
}

impl ModelProfile {
    pub fn validate(&self) -> Result<(), InferenceError> {
        let bad = |msg: &str| {
            Err(InferenceError::InvalidProfile {
                model: self.model_id.clone(),
                msg: msg.into(),
            })
        };
        if self.model_id.is_empty() {
            return bad("empty model id");
        }
        if !(self.base_latency_ms >= 0.0 && self.per_token_ms >= 0.0) {
            return bad("latencies must be >= 0");
        }
        if self.footprint_mb == 0 {
            return bad("footprint must be > 0");
        }
        if !(self.cost_per_call >= 0.0) {
            return bad("cost must be >= 0");
        }
        if self.parallelism == 0 {
            return bad("parallelism must be > 0");
        }
        Ok(())
    }

    /// Modelled latency of one call producing `tokens` output tokens.
    pub fn latency_ms(&self, tokens: u32) -> f64 {
        self.base_latency_ms + self.per_token_ms * tokens as f64
    }

    /// Whether the model can answer questions about `predicate`; `*` asks
    /// for any fact the model can see.
    pub fn can_answer(&self, predicate: &str) -> bool {
        predicate == "*" || self.capabilities.contains(predicate)
    }

    pub fn is_resident_only(&self) -> bool {
        self.capabilities.is_empty()
    }
}

/// (entity type, predicate) a question asks about. `*` is a wildcard in
/// either position.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct QuestionTarget {
    pub kind: String,
    pub predicate: String,
}

impl QuestionTarget {
    pub fn new(kind: impl Into<String>, predicate: impl Into<String>) -> Self {
        Self {
            kind: kind.into(),
            predicate: predicate.into(),
        }
    }

    pub fn accepts(&self, fact: &Fact) -> bool {
        (self.predicate == "*" || self.predicate == fact.predicate)
            && (self.kind == "*" || self.kind == fact.subject.kind)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Question {
    pub qid: String,
    pub text: String,
    pub target: QuestionTarget,
    pub expected_tokens: u32,
    pub priority: f64,
}

#[derive(Debug, Clone)]
pub struct Prompt {
    pub frame: FrameRef,
    pub questions: Vec<Question>,
    pub model_id: String,
}

impl Prompt {
    pub fn new(frame: FrameRef, questions: Vec<Question>, model_id: impl Into<String>) -> Result<Self, InferenceError> {
        if questions.is_empty() || questions.len() > MAX_QUESTIONS {
            return Err(InferenceError::InvalidPrompt(format!(
                "{} questions, expected 1..={MAX_QUESTIONS}",
                questions.len()
            )));
        }
        Ok(Self {
            frame,
            questions,
            model_id: model_id.into(),
        })
    }

    pub fn expected_tokens(&self) -> u32 {
        self.questions.iter().map(|q| q.expected_tokens).sum()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    pub qid: String,
    pub facts: Vec<Fact>,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResponse {
    pub frame_seq: u64,
    pub frame_timestamp_ms: u64,
    pub model_id: String,
    /// One entry per prompt question, in prompt order.
    pub answers: Vec<Answer>,
    pub simulated_latency_ms: f64,
}

impl InferenceResponse {
    pub fn facts(&self) -> impl Iterator<Item = &Fact> {
        self.answers.iter().flat_map(|a| a.facts.iter())
    }

    pub fn is_empty(&self) -> bool {
        self.answers.iter().all(|a| a.facts.is_empty())
    }
}

/// What a backend returns for one prompt.
#[derive(Debug, Clone)]
pub struct BackendOutput {
    pub answers: Vec<Answer>,
    pub latency_ms: f64,
    /// The latency was actually spent on the wall clock during the call.
    pub measured: bool,
}

pub trait Backend: Send + Sync {
    fn answer(&self, profile: &ModelProfile, prompt: &Prompt) -> Result<BackendOutput, InferenceError>;
}

struct Slots {
    free: Mutex<usize>,
    cv: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock();
        while *free == 0 {
            self.cv.wait(&mut free);
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock() += 1;
        self.0.cv.notify_one();
    }
}

struct Registered {
    profile: ModelProfile,
    backend: Arc<dyn Backend>,
    slots: Slots,
}

/// Registry of models and the entry point for inference calls.
pub struct InferenceEngine {
    clock: Arc<dyn Clock>,
    models: BTreeMap<String, Registered>,
}

impl InferenceEngine {
    pub fn new(clock: Arc<dyn Clock>) -> Self {
        Self {
            clock,
            models: BTreeMap::new(),
        }
    }

    pub fn register_backend(&mut self, profile: ModelProfile, backend: Arc<dyn Backend>) -> Result<(), InferenceError> {
        profile.validate()?;
        if self.models.contains_key(&profile.model_id) {
            return Err(InferenceError::DuplicateModel(profile.model_id));
        }
        let slots = Slots::new(profile.parallelism);
        self.models.insert(
            profile.model_id.clone(),
            Registered {
                profile,
                backend,
                slots,
            },
        );
        Ok(())
    }

    pub fn profiles(&self) -> Vec<ModelProfile> {
        self.models.values().map(|r| r.profile.clone()).collect()
    }

    pub fn profile(&self, model_id: &str) -> Option<&ModelProfile> {
        self.models.get(model_id).map(|r| &r.profile)
    }

    /// Runs a prompt and charges its latency on the engine clock.
    pub fn infer(&self, prompt: &Prompt) -> Result<InferenceResponse, InferenceError> {
        let reg = self
            .models
            .get(&prompt.model_id)
            .ok_or_else(|| InferenceError::UnknownModel(prompt.model_id.clone()))?;
        if prompt.questions.is_empty() || prompt.questions.len() > MAX_QUESTIONS {
            return Err(InferenceError::InvalidPrompt(format!(
                "{} questions, expected 1..={MAX_QUESTIONS}",
                prompt.questions.len()
            )));
        }
        let _slot = reg.slots.acquire();
        let out = reg.backend.answer(&reg.profile, prompt)?;
        if !(out.measured && !self.clock.is_virtual()) {
            self.clock.charge(ms_to_us(out.latency_ms));
        }
        let answers = prompt
            .questions
            .iter()
            .map(|q| {
                let given = out.answers.iter().find(|a| a.qid == q.qid);
                let facts = if reg.profile.can_answer(&q.target.predicate) {
                    given
                        .map(|a| {
                            a.facts
                                .iter()
                                .filter(|f| reg.profile.capabilities.contains(&f.predicate))
                                .cloned()
                                .collect()
                        })
                        .unwrap_or_default()
                } else {
                    Vec::new()
                };
                let text = match given {
                    Some(a) if !facts.is_empty() || a.facts.is_empty() => a.text.clone(),
                    _ => String::new(),
                };
                Answer {
                    qid: q.qid.clone(),
                    facts,
                    text,
                }
            })
            .collect();
        Ok(InferenceResponse {
            frame_seq: prompt.frame.seq,
            frame_timestamp_ms: prompt.frame.timestamp_ms,
            model_id: prompt.model_id.clone(),
            answers,
            simulated_latency_ms: out.latency_ms,
        })
    }

    /// Asks the filter questions on the cheapest lightweight model and
    /// reports whether any of them found something.
    pub fn tier_filter(&self, frame: &FrameRef, filter_questions: &[Question]) -> Result<bool, InferenceError> {
        let model = self
            .models
            .values()
            .filter(|r| r.profile.tier == Tier::Lightweight && !r.profile.is_resident_only())
            .min_by(|a, b| {
                a.profile
                    .cost_per_call
                    .total_cmp(&b.profile.cost_per_call)
                    .then_with(|| a.profile.model_id.cmp(&b.profile.model_id))
            })
            .ok_or_else(|| InferenceError::UnknownModel("<lightweight>".into()))?;
        let mut any = false;
        for chunk in filter_questions.chunks(MAX_QUESTIONS) {
            let prompt = Prompt::new(frame.clone(), chunk.to_vec(), model.profile.model_id.clone())?;
            any |= !self.infer(&prompt)?.is_empty();
        }
        Ok(any)
    }
}
