use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use super::{Answer, Backend, BackendOutput, InferenceError, ModelProfile, Prompt};
use crate::knowledge::KnowledgeBase;
use crate::triple::Fact;

/// Answers questions from the ground-truth facts attached to scenario frames.
#[derive(Default)]
pub struct MockBackend {
    kb: Option<Arc<KnowledgeBase>>,
    /// Extra milliseconds added to successive calls, cycled.
    jitter_ms: Vec<f64>,
    calls: AtomicUsize,
}

impl MockBackend {
    pub fn new() -> Self {
        Self::default()
    }

    /// Uses the KB's per-predicate render templates for answer text.
    pub fn with_kb(mut self, kb: Arc<KnowledgeBase>) -> Self {
        self.kb = Some(kb);
        self
    }

    pub fn with_jitter(mut self, jitter_ms: Vec<f64>) -> Self {
        self.jitter_ms = jitter_ms;
        self
    }

    fn render(&self, f: &Fact) -> String {
        match &self.kb {
            Some(kb) => kb.render_parts(&f.subject.id, &f.predicate, &f.object),
            None => format!("{} {} {}", f.subject.id, f.predicate.replace('_', " "), f.object.key()),
        }
    }
}

impl Backend for MockBackend {
    fn answer(&self, profile: &ModelProfile, prompt: &Prompt) -> Result<BackendOutput, InferenceError> {
        let spec = prompt.frame.spec().ok_or_else(|| InferenceError::BackendUnavailable {
            model: profile.model_id.clone(),
            msg: "mock backend only reads scenario frames".into(),
        })?;
        let answers = prompt
            .questions
            .iter()
            .map(|q| {
                let facts: Vec<Fact> = if profile.can_answer(&q.target.predicate) {
                    spec.facts
                        .iter()
                        .filter(|f| q.target.accepts(f) && profile.capabilities.contains(&f.predicate))
                        .cloned()
                        .collect()
                } else {
                    Vec::new()
                };
                let text = if facts.is_empty() {
                    "none".to_string()
                } else {
                    facts.iter().map(|f| self.render(f)).collect::<Vec<_>>().join("; ")
                };
                Answer {
                    qid: q.qid.clone(),
                    facts,
                    text,
                }
            })
            .collect();
        let call = self.calls.fetch_add(1, Ordering::Relaxed);
        let jitter = if self.jitter_ms.is_empty() {
            0.0
        } else {
            self.jitter_ms[call % self.jitter_ms.len()]
        };
        Ok(BackendOutput {
            answers,
            latency_ms: profile.latency_ms(prompt.expected_tokens()) + jitter,
            measured: false,
        })
    }
}
