//! User queries: the text DSL, incremental standing-pattern evaluation, and
//! interactive answering with refinement chains.

mod dsl;
mod interactive;
mod standing;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use dsl::{parse, parse_interactive, parse_standing};
pub use interactive::{answer_interactive, narrate, retrieve, InteractiveAnswer, InteractiveQuery, NO_OBSERVATIONS};
pub use standing::{
    bind_step, evaluate_standing, opens, Alert, Bindings, EventPattern, MatchState, PatternStep, PendingStep,
};

use crate::knowledge::KnowledgeBase;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum QueryError {
    #[error("parse error: {0}")]
    Parse(String),
    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),
    #[error("unknown entity type `{0}`")]
    UnknownType(String),
    #[error("unknown parent query `{0}`")]
    UnknownParent(String),
    #[error("query `{0}` has not been answered yet")]
    NotAnswered(String),
    #[error("query `{0}` is not interactive")]
    NotInteractive(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QueryKind {
    Standing,
    Interactive,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum QueryBody {
    Standing(EventPattern),
    Interactive(InteractiveQuery),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UserQuery {
    pub query_id: String,
    pub body: QueryBody,
    pub parent_id: Option<String>,
    /// Text the query was parsed from.
    pub source: String,
}

impl UserQuery {
    pub fn new(query_id: impl Into<String>, body: QueryBody, source: impl Into<String>) -> Self {
        Self {
            query_id: query_id.into(),
            body,
            parent_id: None,
            source: source.into(),
        }
    }

    pub fn kind(&self) -> QueryKind {
        match self.body {
            QueryBody::Standing(_) => QueryKind::Standing,
            QueryBody::Interactive(_) => QueryKind::Interactive,
        }
    }

    pub fn pattern(&self) -> Option<&EventPattern> {
        match &self.body {
            QueryBody::Standing(p) => Some(p),
            QueryBody::Interactive(_) => None,
        }
    }

    pub fn interactive(&self) -> Option<&InteractiveQuery> {
        match &self.body {
            QueryBody::Interactive(q) => Some(q),
            QueryBody::Standing(_) => None,
        }
    }
}

/// Registered queries in registration order, plus interactive answers.
#[derive(Debug, Default)]
pub struct QueryRegistry {
    next_id: u64,
    queries: Vec<UserQuery>,
    answers: HashMap<String, InteractiveAnswer>,
}

impl QueryRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    fn fresh_id(&mut self) -> String {
        self.next_id += 1;
        format!("q{}", self.next_id)
    }

    pub fn register(&mut self, body: QueryBody, source: &str) -> UserQuery {
        let q = UserQuery::new(self.fresh_id(), body, source);
        self.queries.push(q.clone());
        q
    }

    pub fn register_text(&mut self, input: &str, kb: &KnowledgeBase) -> Result<UserQuery, QueryError> {
        let body = parse(input, kb)?;
        Ok(self.register(body, input.trim()))
    }

    pub fn get(&self, id: &str) -> Option<&UserQuery> {
        self.queries.iter().find(|q| q.query_id == id)
    }

    pub fn all(&self) -> &[UserQuery] {
        &self.queries
    }

    pub fn standing(&self) -> Vec<UserQuery> {
        self.queries
            .iter()
            .filter(|q| q.kind() == QueryKind::Standing)
            .cloned()
            .collect()
    }

    pub fn record_answer(&mut self, answer: InteractiveAnswer) {
        self.answers.insert(answer.query_id.clone(), answer);
    }

    pub fn answer(&self, id: &str) -> Option<&InteractiveAnswer> {
        self.answers.get(id)
    }

    /// Registers a child of an answered interactive query, narrowed by
    /// `refinement` (`window=`, `about=`, `focus=` options plus free text).
    pub fn refine(&mut self, parent_id: &str, refinement: &str, kb: &KnowledgeBase) -> Result<UserQuery, QueryError> {
        let parent = self
            .get(parent_id)
            .ok_or_else(|| QueryError::UnknownParent(parent_id.to_string()))?;
        let iq = parent
            .interactive()
            .ok_or_else(|| QueryError::NotInteractive(parent_id.to_string()))?;
        let answered = self
            .answers
            .get(parent_id)
            .ok_or_else(|| QueryError::NotAnswered(parent_id.to_string()))?;
        let child = iq.refined(answered.window, refinement, kb)?;
        let mut q = UserQuery::new(self.fresh_id(), QueryBody::Interactive(child), refinement.trim());
        q.parent_id = Some(parent_id.to_string());
        self.queries.push(q.clone());
        Ok(q)
    }

    /// Ids from `id` up to the root of its refinement chain.
    pub fn chain(&self, id: &str) -> Vec<String> {
        let mut out = Vec::new();
        let mut cur = self.get(id);
        while let Some(q) = cur {
            if out.contains(&q.query_id) {
                break;
            }
            out.push(q.query_id.clone());
            cur = q.parent_id.as_deref().and_then(|p| self.get(p));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::kb::tests::mini;
    use crate::triple::TimeWindow;

    #[test]
    fn refine_requires_answered_interactive_parent() {
        let kb = mini();
        let mut reg = QueryRegistry::new();
        assert_eq!(reg.refine("q9", "focus=fleeing", &kb).unwrap_err(), QueryError::UnknownParent("q9".into()));
        let s = reg
            .register_text("standing x: (vehicle fleeing *)", &kb)
            .unwrap();
        assert_eq!(reg.refine(&s.query_id, "focus=fleeing", &kb).unwrap_err(), QueryError::NotInteractive(s.query_id.clone()));
        let i = reg.register_text("interactive what happened window=60s", &kb).unwrap();
        assert_eq!(reg.refine(&i.query_id, "focus=fleeing", &kb).unwrap_err(), QueryError::NotAnswered(i.query_id.clone()));
        reg.record_answer(InteractiveAnswer {
            query_id: i.query_id.clone(),
            window: TimeWindow::new(0, 60_000).unwrap(),
            text: String::new(),
            triples: vec![],
        });
        let c = reg.refine(&i.query_id, "focus=fleeing", &kb).unwrap();
        assert_eq!(c.parent_id.as_deref(), Some(i.query_id.as_str()));
        assert_eq!(reg.chain(&c.query_id), vec![c.query_id.clone(), i.query_id.clone()]);
        assert_eq!(reg.standing().len(), 1);
    }
}
