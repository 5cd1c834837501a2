use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use tokio::sync::broadcast;

use crate::knowledge::ResetReason;
use crate::query::Alert;
use crate::scheduler::{DropReason, SchedulePlan};

/// Next-step predicates of one partially matched query.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PendingTargets {
    pub query_id: String,
    pub predicates: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EventKind {
    Plan {
        plan: SchedulePlan,
    },
    Admit {
        seq: u64,
        ts_ms: u64,
    },
    Drop {
        seq: u64,
        ts_ms: u64,
        reason: DropReason,
    },
    /// Frames that went off air before the pipeline asked for them.
    StreamDrop {
        count: u64,
        before_seq: u64,
    },
    Infer {
        seq: u64,
        ts_ms: u64,
        model_id: String,
        latency_ms: f64,
        questions: usize,
        facts: usize,
    },
    /// Frame skipped by the lightweight filter tier.
    Filtered {
        seq: u64,
    },
    Build {
        seq: u64,
        inserted: usize,
        updated: usize,
        noise: usize,
        filtered: usize,
        epoch: u64,
    },
    Alert {
        alert: Alert,
    },
    ContextOpen {
        label: String,
        query_id: Option<String>,
        at_ms: u64,
    },
    ContextClose {
        label: String,
        reason: ResetReason,
        at_ms: u64,
    },
    Escalate {
        active: bool,
        plan: SchedulePlan,
    },
    Reset {
        closed_epoch: u64,
        reason: ResetReason,
        at_ms: u64,
        archived: usize,
    },
    /// Questions generated for the next admitted frame.
    Questions {
        after_seq: Option<u64>,
        predicates: Vec<String>,
        pending: Vec<PendingTargets>,
    },
    FpsSample {
        t_ms: u64,
        fps: f64,
        escalated: bool,
    },
    Compaction {
        snapshot_id: u64,
        covers_up_to_ms: u64,
        triples: usize,
    },
    End {
        frames: u64,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Plan { .. } => "plan",
            EventKind::Admit { .. } => "admit",
            EventKind::Drop { .. } => "drop",
            EventKind::StreamDrop { .. } => "stream_drop",
            EventKind::Infer { .. } => "infer",
            EventKind::Filtered { .. } => "filtered",
            EventKind::Build { .. } => "build",
            EventKind::Alert { .. } => "alert",
            EventKind::ContextOpen { .. } => "context_open",
            EventKind::ContextClose { .. } => "context_close",
            EventKind::Escalate { .. } => "escalate",
            EventKind::Reset { .. } => "reset",
            EventKind::Questions { .. } => "questions",
            EventKind::FpsSample { .. } => "fps_sample",
            EventKind::Compaction { .. } => "compaction",
            EventKind::End { .. } => "end",
        }
    }

    /// Kinds pushed to live subscribers.
    pub fn is_client_facing(&self) -> bool {
        matches!(
            self,
            EventKind::Alert { .. }
                | EventKind::ContextOpen { .. }
                | EventKind::ContextClose { .. }
                | EventKind::FpsSample { .. }
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlEvent {
    /// Position in the log, from 0.
    pub n: u64,
    /// Engine clock at emission.
    pub t_us: u64,
    #[serde(flatten)]
    pub kind: EventKind,
}

struct Inner {
    events: Vec<ControlEvent>,
    lines: Vec<String>,
    file: Option<BufWriter<File>>,
}

/// Append-only JSON-lines record of everything the pipeline did.
pub struct EventLog {
    inner: Mutex<Inner>,
    tx: broadcast::Sender<ControlEvent>,
}

impl Default for EventLog {
    fn default() -> Self {
        Self::new()
    }
}

impl EventLog {
    pub fn new() -> Self {
        let (tx, _) = broadcast::channel(1024);
        Self {
            inner: Mutex::new(Inner {
                events: Vec::new(),
                lines: Vec::new(),
                file: None,
            }),
            tx,
        }
    }

    pub fn with_file(path: &Path) -> std::io::Result<Self> {
        let log = Self::new();
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        log.inner.lock().file = Some(BufWriter::new(File::create(path)?));
        Ok(log)
    }

    pub fn emit(&self, t_us: u64, kind: EventKind) -> u64 {
        let mut inner = self.inner.lock();
        let ev = ControlEvent {
            n: inner.events.len() as u64,
            t_us,
            kind,
        };
        let line = serde_json::to_string(&ev).expect("events serialize");
        if let Some(f) = inner.file.as_mut() {
            if let Err(e) = writeln!(f, "{line}") {
                tracing::warn!(error = %e, "event log write failed; continuing in memory");
                inner.file = None;
            }
        }
        inner.lines.push(line);
        let n = ev.n;
        if ev.kind.is_client_facing() {
            let _ = self.tx.send(ev.clone());
        }
        inner.events.push(ev);
        n
    }

    pub fn flush(&self) {
        if let Some(f) = self.inner.lock().file.as_mut() {
            let _ = f.flush();
        }
    }

    pub fn len(&self) -> usize {
        self.inner.lock().events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn events(&self) -> Vec<ControlEvent> {
        self.inner.lock().events.clone()
    }

    /// Events with `n >= since`.
    pub fn since(&self, since: u64) -> Vec<ControlEvent> {
        let inner = self.inner.lock();
        inner.events.iter().skip(since as usize).cloned().collect()
    }

    /// The whole log as JSON lines.
    pub fn jsonl(&self) -> String {
        let inner = self.inner.lock();
        let mut out = String::new();
        for l in &inner.lines {
            out.push_str(l);
            out.push('\n');
        }
        out
    }

    /// Live feed of client-facing events, plus the log position to replay
    /// from so nothing is missed between the two.
    pub fn subscribe(&self) -> (u64, broadcast::Receiver<ControlEvent>) {
        let inner = self.inner.lock();
        (inner.events.len() as u64, self.tx.subscribe())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lines_round_trip_and_number_in_order() {
        let log = EventLog::new();
        log.emit(5, EventKind::Admit { seq: 3, ts_ms: 125 });
        log.emit(
            9,
            EventKind::Drop {
                seq: 4,
                ts_ms: 166,
                reason: DropReason::Pace,
            },
        );
        let text = log.jsonl();
        let parsed: Vec<ControlEvent> = text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(parsed, log.events());
        assert_eq!(parsed[1].n, 1);
        assert!(text.starts_with(r#"{"n":0,"t_us":5,"kind":"admit","seq":3,"ts_ms":125}"#), "{text}");
    }

    #[test]
    fn only_client_events_are_broadcast() {
        let log = EventLog::new();
        let (from, mut rx) = log.subscribe();
        assert_eq!(from, 0);
        log.emit(0, EventKind::Admit { seq: 0, ts_ms: 0 });
        log.emit(
            0,
            EventKind::FpsSample {
                t_ms: 1000,
                fps: 8.0,
                escalated: false,
            },
        );
        let got = rx.try_recv().unwrap();
        assert_eq!(got.kind.name(), "fps_sample");
        assert!(rx.try_recv().is_err());
        assert_eq!(log.since(1).len(), 1);
    }
}
