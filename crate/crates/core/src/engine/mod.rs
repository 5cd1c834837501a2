//! Engine assembly: wires ingest, scheduling, inference, the knowledge
//! pipeline and the context loop together, and exposes snapshot-based views
//! of queries, alerts, the graph and metrics to clients.
//!
//! A virtual-clock engine runs the stages in one thread, in order, which
//! makes every run a pure function of the config and scenario. A wall-clock
//! engine runs one thread per stage with bounded queues.

mod config;
mod driver;
mod events;
mod metrics;
mod pipeline;

use std::path::Path;
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::Arc;

use arc_swap::ArcSwap;
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use config::{BackendSpec, EngineConfig, ModelConfig, Mode, ENV_LISTEN, ENV_STORE};
pub use events::{ControlEvent, EventKind, EventLog, PendingTargets};
pub use metrics::{FpsPoint, FpsSampler, Metrics, ModelStats};

use crate::clock::{Clock, ClockMode, VirtualClock, WallClock};
use crate::context::ContextError;
use crate::inference::{Backend, InferenceEngine, InferenceError, MockBackend, RemoteBackend, TemplateExtractor};
use crate::ingest::{load_scenario, Scenario, ScenarioError, StreamStats};
use crate::knowledge::{init_kb, KbError, KgSnapshot, KnowledgeBase};
use crate::lambda::{LambdaError, LambdaStore};
use crate::query::{
    answer_interactive, parse_interactive, Alert, InteractiveAnswer, QueryBody, QueryError, QueryRegistry, UserQuery,
};
use crate::scheduler::{SchedulePlan, SchedulerError};
use crate::triple::{Entity, SemanticTriple, TimeWindow};
use pipeline::{Controller, Knowledge};

#[derive(Debug, Error)]
pub enum EngineError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Kb(#[from] KbError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Inference(#[from] InferenceError),
    #[error(transparent)]
    Scheduler(#[from] SchedulerError),
    #[error(transparent)]
    Context(#[from] ContextError),
    #[error(transparent)]
    Store(#[from] LambdaError),
    #[error(transparent)]
    Query(#[from] QueryError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Graph view returned to clients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KgView {
    pub epoch: u64,
    pub window: Option<TimeWindow>,
    pub triples: Vec<SemanticTriple>,
    pub entities: Vec<Entity>,
}

/// State every stage and every client request can reach.
pub(crate) struct Shared {
    config: EngineConfig,
    kb: Arc<KnowledgeBase>,
    clock: Arc<dyn Clock>,
    registry: RwLock<QueryRegistry>,
    /// Bumped whenever a standing query is registered.
    standing_version: AtomicU64,
    alerts: RwLock<Vec<Alert>>,
    kg: ArcSwap<KgSnapshot>,
    plan: ArcSwap<SchedulePlan>,
    metrics: Mutex<Metrics>,
    stream_stats: Mutex<Option<Arc<StreamStats>>>,
    store: Arc<LambdaStore>,
    events: EventLog,
    /// Stream time of the newest processed frame.
    now_ms: AtomicU64,
    stop: AtomicBool,
}

impl Shared {
    pub(crate) fn emit(&self, kind: EventKind) -> u64 {
        self.events.emit(self.clock.now_us(), kind)
    }
}

/// Cheap, cloneable access to a (possibly running) engine.
#[derive(Clone)]
pub struct EngineHandle {
    shared: Arc<Shared>,
}

impl EngineHandle {
    pub fn config(&self) -> &EngineConfig {
        &self.shared.config
    }

    pub fn kb(&self) -> &Arc<KnowledgeBase> {
        &self.shared.kb
    }

    pub fn store(&self) -> &Arc<LambdaStore> {
        &self.shared.store
    }

    pub fn events(&self) -> &EventLog {
        &self.shared.events
    }

    /// Stream time of the newest processed frame.
    pub fn now_ms(&self) -> u64 {
        self.shared.now_ms.load(Ordering::Acquire)
    }

    /// Asks a running engine to stop after the current frame.
    pub fn stop(&self) {
        self.shared.stop.store(true, Ordering::Release);
    }

    pub fn register_query(&self, text: &str) -> Result<UserQuery, QueryError> {
        let q = self.shared.registry.write().register_text(text, &self.shared.kb)?;
        if q.pattern().is_some() {
            self.shared.standing_version.fetch_add(1, Ordering::AcqRel);
        }
        Ok(q)
    }

    pub fn queries(&self) -> Vec<UserQuery> {
        self.shared.registry.read().all().to_vec()
    }

    pub fn query(&self, id: &str) -> Option<UserQuery> {
        self.shared.registry.read().get(id).cloned()
    }

    pub fn answer(&self, id: &str) -> Option<InteractiveAnswer> {
        self.shared.registry.read().answer(id).cloned()
    }

    /// Alerts from position `since` on, in emission order.
    pub fn alerts_since(&self, since: usize) -> Vec<Alert> {
        self.shared.alerts.read().iter().skip(since).cloned().collect()
    }

    pub fn alerts(&self) -> Vec<Alert> {
        self.alerts_since(0)
    }

    /// Live graph triples, optionally limited to the trailing `window_ms`.
    pub fn kg(&self, window_ms: Option<u64>) -> KgView {
        let snap = self.shared.kg.load_full();
        let window = window_ms.map(|w| TimeWindow::trailing(self.now_ms(), w));
        let triples = snap.query(&crate::triple::TriplePattern::any(), window.unwrap_or(TimeWindow::ALL));
        let mut entities: Vec<Entity> = Vec::new();
        for t in &triples {
            let mut push = |e: &Entity| {
                if !entities.iter().any(|x| x.id == e.id) {
                    entities.push(e.clone());
                }
            };
            push(&t.subject);
            if let crate::triple::Object::Entity(o) = &t.object {
                push(o);
            }
        }
        entities.sort_by(|a, b| a.id.cmp(&b.id));
        KgView {
            epoch: snap.epoch,
            window,
            triples,
            entities,
        }
    }

    pub fn kg_snapshot(&self) -> Arc<KgSnapshot> {
        self.shared.kg.load_full()
    }

    pub fn plan(&self) -> SchedulePlan {
        (**self.shared.plan.load()).clone()
    }

    pub fn metrics(&self) -> Metrics {
        let mut m = self.shared.metrics.lock().clone();
        if let Some(s) = self.shared.stream_stats.lock().as_ref() {
            let (emitted, delivered, dropped) = s.snapshot();
            m.frames_emitted = emitted;
            m.frames_delivered = delivered;
            m.stream_dropped = dropped;
        }
        let kg = self.shared.kg.load();
        m.kg_triples = kg.len();
        m.kg_epoch = kg.epoch;
        m
    }

    /// Answers an interactive query over the live graph and the store.
    pub fn interactive(&self, text: &str) -> Result<(UserQuery, InteractiveAnswer), QueryError> {
        let t = text.trim();
        let src = if t.starts_with("interactive") { t.to_string() } else { format!("interactive {t}") };
        let iq = parse_interactive(&src, &self.shared.kb)?;
        let q = self.shared.registry.write().register(QueryBody::Interactive(iq.clone()), &src);
        let answer = answer_interactive(&q.query_id, &iq, self.now_ms(), &self.shared.kg.load(), &self.shared.store, &self.shared.kb);
        self.shared.registry.write().record_answer(answer.clone());
        Ok((q, answer))
    }

    /// Narrows an answered interactive query and answers the child.
    pub fn refine(&self, parent_id: &str, refinement: &str) -> Result<(UserQuery, InteractiveAnswer), QueryError> {
        let q = self.shared.registry.write().refine(parent_id, refinement, &self.shared.kb)?;
        let iq = q.interactive().expect("refinements are interactive").clone();
        let answer = answer_interactive(&q.query_id, &iq, self.now_ms(), &self.shared.kg.load(), &self.shared.store, &self.shared.kb);
        self.shared.registry.write().record_answer(answer.clone());
        Ok((q, answer))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub scenario: String,
    pub mode: Mode,
    pub alerts: Vec<Alert>,
    pub metrics: Metrics,
}

/// An engine ready to run one scenario.
pub struct Engine {
    shared: Arc<Shared>,
    scenario: Arc<Scenario>,
    inference: Arc<InferenceEngine>,
    knowledge: Knowledge,
    controller: Controller,
}

fn build_inference(config: &EngineConfig, kb: &Arc<KnowledgeBase>, clock: Arc<dyn Clock>) -> Result<InferenceEngine, EngineError> {
    let mut engine = InferenceEngine::new(clock);
    for m in config.active_models() {
        let backend: Arc<dyn Backend> = match &m.backend {
            BackendSpec::Mock { jitter_ms } => Arc::new(MockBackend::new().with_kb(kb.clone()).with_jitter(jitter_ms.clone())),
            BackendSpec::Remote { endpoint } => Arc::new(RemoteBackend::new(endpoint.clone(), TemplateExtractor::from_kb(kb))),
        };
        engine.register_backend(m.profile.clone(), backend)?;
    }
    Ok(engine)
}

impl Engine {
    /// Loads the KB and scenario named by `config` and prepares every stage.
    pub fn new(config: EngineConfig) -> Result<Self, EngineError> {
        config.validate()?;
        let kb = init_kb(&config.kb)?;
        let scenario = load_scenario(&config.scenario)?;
        let engine = Self::from_parts(config.clone(), scenario, kb)?;
        if let (Some(dir), Some(name)) = (config.store.as_ref(), config.kb.file_name()) {
            std::fs::copy(&config.kb, dir.join(name))?;
        }
        Ok(engine)
    }

    pub fn from_parts(config: EngineConfig, scenario: Scenario, kb: KnowledgeBase) -> Result<Self, EngineError> {
        config.validate()?;
        let kb = Arc::new(kb);
        let clock: Arc<dyn Clock> = match config.clock {
            ClockMode::Virtual => Arc::new(VirtualClock::new()),
            ClockMode::Wall => Arc::new(WallClock::new()),
        };
        let store = match &config.store {
            Some(dir) => LambdaStore::open(dir, config.compaction)?,
            None => LambdaStore::with_policy(config.compaction),
        };
        let events = match &config.event_log {
            Some(p) => EventLog::with_file(p)?,
            None => EventLog::new(),
        };
        let mut registry = QueryRegistry::new();
        if config.kb_patterns {
            for (p, src) in kb.patterns.iter().zip(&kb.pattern_sources) {
                registry.register(QueryBody::Standing(p.clone()), src);
            }
        }
        for s in &config.standing {
            registry
                .register_text(s, &kb)
                .map_err(|e| EngineError::Config(format!("standing query `{s}`: {e}")))?;
        }
        let inference = build_inference(&config, &kb, clock.clone())?;
        let controller = Controller::new(&config, &kb, inference.profiles(), scenario.fps)?;
        let plan = controller.plan().clone();
        let metrics = Metrics {
            mode: config.mode,
            memory_budget_mb: config.constraints.memory_budget_mb,
            ..Default::default()
        };
        let shared = Arc::new(Shared {
            kb: kb.clone(),
            clock,
            registry: RwLock::new(registry),
            standing_version: AtomicU64::new(1),
            alerts: RwLock::new(Vec::new()),
            kg: ArcSwap::from_pointee(KgSnapshot::default()),
            plan: ArcSwap::from_pointee(plan.clone()),
            metrics: Mutex::new(metrics),
            stream_stats: Mutex::new(None),
            store: Arc::new(store),
            events,
            now_ms: AtomicU64::new(0),
            stop: AtomicBool::new(false),
            config,
        });
        shared.emit(EventKind::Plan { plan: plan.clone() });
        shared.metrics.lock().record_plan(&plan);
        let knowledge = Knowledge::new(&shared)?;
        Ok(Self {
            shared,
            scenario: Arc::new(scenario),
            inference: Arc::new(inference),
            knowledge,
            controller,
        })
    }

    pub fn load(config_path: impl AsRef<Path>) -> Result<Self, EngineError> {
        Self::new(EngineConfig::load(config_path)?)
    }

    pub fn handle(&self) -> EngineHandle {
        EngineHandle {
            shared: self.shared.clone(),
        }
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    /// Runs the scenario to its end.
    pub fn run(self) -> Result<RunSummary, EngineError> {
        let shared = self.shared.clone();
        let scenario_id = self.scenario.id.clone();
        match shared.config.clock {
            ClockMode::Virtual => driver::run_sequential(self)?,
            ClockMode::Wall => driver::run_threaded(self)?,
        }
        shared.events.flush();
        let handle = EngineHandle { shared };
        Ok(RunSummary {
            scenario: scenario_id,
            mode: handle.config().mode,
            alerts: handle.alerts(),
            metrics: handle.metrics(),
        })
    }
}
