use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EngineError;
use crate::clock::ClockMode;
use crate::context::ContextConfig;
use crate::inference::{ModelProfile, Tier};
use crate::knowledge::KgConfig;
use crate::lambda::CompactionPolicy;
use crate::scheduler::ConstraintSpec;

pub const ENV_LISTEN: &str = "FRAMEKG_LISTEN";
pub const ENV_STORE: &str = "FRAMEKG_STORE";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// One heavyweight model, one descriptive question per frame, no
    /// feedback loop.
    Baseline,
    /// Lightweight models driven by context-aware question sets.
    #[default]
    #[serde(alias = "streamingrag")]
    Streaming,
}

impl Mode {
    pub fn as_str(self) -> &'static str {
        match self {
            Mode::Baseline => "baseline",
            Mode::Streaming => "streaming",
        }
    }
}

impl std::str::FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baseline" => Ok(Mode::Baseline),
            "streaming" | "streamingrag" => Ok(Mode::Streaming),
            other => Err(format!("unknown mode `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    /// Answers from scenario ground truth, optionally with latency jitter.
    Mock {
        #[serde(default)]
        jitter_ms: Vec<f64>,
    },
    Remote { endpoint: String },
}

impl Default for BackendSpec {
    fn default() -> Self {
        BackendSpec::Mock { jitter_ms: Vec::new() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    #[serde(flatten)]
    pub profile: ModelProfile,
    #[serde(default)]
    pub backend: BackendSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EngineConfig {
    pub mode: Mode,
    pub clock: ClockMode,
    pub scenario: PathBuf,
    pub kb: PathBuf,
    /// Lambda store directory; in-memory when unset.
    pub store: Option<PathBuf>,
    pub listen: String,
    /// Control-event log file, in addition to the in-memory copy.
    pub event_log: Option<PathBuf>,
    /// Extra standing queries in the query DSL.
    pub standing: Vec<String>,
    /// Register every pattern declared in the KB as a standing query.
    pub kb_patterns: bool,
    /// Predicates the lightweight tier checks before a heavyweight call; the
    /// frame is skipped when none of them is present. Empty disables it.
    pub filter_predicates: Vec<String>,
    pub queue_capacity: usize,
    pub alert_dedup_s: f64,
    pub constraints: ConstraintSpec,
    pub context: ContextConfig,
    pub knowledge: KgConfig,
    pub compaction: CompactionPolicy,
    pub models: Vec<ModelConfig>,
}

impl Default for EngineConfig {
    fn default() -> Self {
        Self {
            mode: Mode::Streaming,
            clock: ClockMode::Virtual,
            scenario: PathBuf::new(),
            kb: PathBuf::new(),
            store: None,
            listen: "127.0.0.1:7878".into(),
            event_log: None,
            standing: Vec::new(),
            kb_patterns: true,
            filter_predicates: Vec::new(),
            queue_capacity: 4,
            alert_dedup_s: 60.0,
            constraints: ConstraintSpec::default(),
            context: ContextConfig::default(),
            knowledge: KgConfig::default(),
            compaction: CompactionPolicy::default(),
            models: Vec::new(),
        }
    }
}

fn config_err(msg: impl Into<String>) -> EngineError {
    EngineError::Config(msg.into())
}

impl EngineConfig {
    pub fn from_toml(src: &str) -> Result<Self, EngineError> {
        toml::from_str(src).map_err(|e| config_err(e.to_string()))
    }

    /// Loads a config file. Relative paths inside it are resolved against
    /// the file's directory, then the environment overrides apply.
    pub fn load(path: impl AsRef<Path>) -> Result<Self, EngineError> {
        let path = path.as_ref();
        let src = std::fs::read_to_string(path).map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&src)?;
        let base = path.parent().unwrap_or(Path::new("."));
        cfg.resolve_paths(base);
        cfg.apply_env(|k| std::env::var(k).ok());
        Ok(cfg)
    }

    pub fn resolve_paths(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if !p.as_os_str().is_empty() && p.is_relative() {
                *p = base.join(&*p);
            }
        };
        fix(&mut self.scenario);
        fix(&mut self.kb);
        if let Some(s) = self.store.as_mut() {
            fix(s);
        }
        if let Some(s) = self.event_log.as_mut() {
            fix(s);
        }
    }

    pub fn apply_env(&mut self, get: impl Fn(&str) -> Option<String>) {
        if let Some(v) = get(ENV_LISTEN).filter(|v| !v.is_empty()) {
            self.listen = v;
        }
        if let Some(v) = get(ENV_STORE).filter(|v| !v.is_empty()) {
            self.store = Some(PathBuf::from(v));
        }
    }

    /// Profiles the mode actually loads: baseline keeps only the first
    /// heavyweight model.
    pub fn active_models(&self) -> Vec<&ModelConfig> {
        match self.mode {
            Mode::Baseline => self
                .models
                .iter()
                .filter(|m| m.profile.tier == Tier::Heavyweight && !m.profile.is_resident_only())
                .take(1)
                .collect(),
            Mode::Streaming => self.models.iter().collect(),
        }
    }

    pub fn validate(&self) -> Result<(), EngineError> {
        self.constraints.validate().map_err(|e| config_err(e.to_string()))?;
        if self.queue_capacity == 0 {
            return Err(config_err("queue_capacity must be > 0"));
        }
        if self.kb.as_os_str().is_empty() {
            return Err(config_err("kb path is required"));
        }
        for m in &self.models {
            m.profile.validate().map_err(|e| config_err(e.to_string()))?;
        }
        match self.mode {
            Mode::Baseline if self.active_models().is_empty() => {
                Err(config_err("baseline mode needs a heavyweight model profile"))
            }
            Mode::Streaming
                if !self
                    .models
                    .iter()
                    .any(|m| m.profile.tier == Tier::Lightweight && !m.profile.is_resident_only()) =>
            {
                Err(config_err("streaming mode needs at least one lightweight model profile"))
            }
            _ => Ok(()),
        }
    }
}
