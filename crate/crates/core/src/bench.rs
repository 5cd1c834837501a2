//! Evaluation harness: runs every scenario of a suite in baseline and
//! streaming mode under the virtual clock and tabulates detections, frame
//! rates and simulated memory.
//!
//! Answer quality is scored with [`fact_coverage`], the fraction of an
//! event's ground-truth steps found among the triples retrieved for the
//! event's time window.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::engine::{Engine, EngineConfig, EngineError, EventKind, FpsPoint, Metrics, Mode};
use crate::ingest::{load_scenario, GroundTruthEvent, Scenario};
use crate::knowledge::{init_kb, KnowledgeBase};
use crate::query::{retrieve, Alert, InteractiveQuery};
use crate::triple::{SemanticTriple, TimeWindow};

pub const COVERAGE_NOTE: &str =
    "answer quality is scored by fact coverage: the share of each event's ground-truth steps present, in order, among the triples retrieved for its window";

/// Share of `event`'s steps matched by `triples`, with and without
/// requiring the matches to be in step order.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    pub ordered: f64,
    pub unordered: f64,
}

/// Whether the steps selected by `mask` can be matched at non-decreasing
/// times. Taking the earliest feasible triple for each step is optimal.
fn chain_exists(event: &GroundTruthEvent, by_time: &[&SemanticTriple], mask: u32) -> bool {
    let mut after = 0;
    for (i, step) in event.required_steps.iter().enumerate() {
        if mask & (1 << i) == 0 {
            continue;
        }
        match by_time.iter().find(|t| t.observed_at_ms >= after && step.matches(t)) {
            Some(t) => after = t.observed_at_ms,
            None => return false,
        }
    }
    true
}

pub fn fact_coverage(triples: &[SemanticTriple], event: &GroundTruthEvent) -> Coverage {
    let n = event.required_steps.len();
    if n == 0 {
        return Coverage {
            ordered: 1.0,
            unordered: 1.0,
        };
    }
    assert!(n < 32, "too many steps");
    let mut by_time: Vec<&SemanticTriple> = triples.iter().collect();
    by_time.sort_by_key(|t| (t.observed_at_ms, t.id));
    let present = event
        .required_steps
        .iter()
        .filter(|s| by_time.iter().any(|t| s.matches(t)))
        .count();
    let best = (0u32..1 << n)
        .filter(|&m| chain_exists(event, &by_time, m))
        .map(u32::count_ones)
        .max()
        .unwrap_or(0);
    Coverage {
        ordered: best as f64 / n as f64,
        unordered: present as f64 / n as f64,
    }
}

/// An alert detects an event when it is for the event's pattern and its
/// span overlaps the event interval.
pub fn detects(alert: &Alert, event: &GroundTruthEvent) -> bool {
    let (first, last) = alert.span_ms();
    alert.pattern == event.event_type && first <= event.end_ms() && last >= event.start_ms()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EventOutcome {
    pub event_type: String,
    pub start_s: f64,
    pub end_s: f64,
    pub detected: bool,
    /// Stream time of the first detecting alert.
    pub detected_at_ms: Option<u64>,
    pub coverage: Coverage,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRun {
    pub mode: Mode,
    pub events: Vec<EventOutcome>,
    pub detected: usize,
    pub alerts: usize,
    pub fps_series: Vec<FpsPoint>,
    pub mean_fps: f64,
    /// Admitted frames per second of stream time inside event intervals.
    pub fps_in_events: f64,
    /// Admitted frames per second of stream time outside event intervals.
    pub fps_outside_events: f64,
    pub frames_emitted: u64,
    pub admitted: u64,
    /// Share of emitted frames that were never sent to a model.
    pub drop_rate: f64,
    pub simulated_memory_mb: u64,
    pub memory_violations: u64,
    pub max_questions_per_set: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioReport {
    pub scenario: String,
    pub file: String,
    pub duration_s: f64,
    pub ground_truth: usize,
    pub baseline: ModeRun,
    pub streaming: ModeRun,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TypeRow {
    pub event_type: String,
    pub videos: usize,
    pub avg_duration_s: f64,
    pub ground_truth: usize,
    pub baseline: usize,
    pub streaming: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub note: String,
    pub scenarios: Vec<ScenarioReport>,
    /// Files that failed to load or run, with the error.
    pub errors: Vec<(String, String)>,
    pub rows: Vec<TypeRow>,
    pub total_events: usize,
    pub baseline_detected: usize,
    pub streaming_detected: usize,
    pub baseline_pct: f64,
    pub streaming_pct: f64,
    pub baseline_memory_mb: u64,
    pub streaming_memory_mb: u64,
}

fn pct(n: usize, d: usize) -> f64 {
    if d == 0 {
        0.0
    } else {
        100.0 * n as f64 / d as f64
    }
}

/// Admitted frames per second inside and outside the event intervals.
pub fn admit_rates(admits_ms: &[u64], scenario: &Scenario) -> (f64, f64) {
    let duration_ms = scenario.timestamp_ms(scenario.frame_count());
    let mut inside_ms = 0;
    let mut covered: Vec<(u64, u64)> = scenario.events.iter().map(|e| (e.start_ms(), e.end_ms().min(duration_ms))).collect();
    covered.sort();
    let mut merged: Vec<(u64, u64)> = Vec::new();
    for (a, b) in covered {
        match merged.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => merged.push((a, b)),
        }
    }
    for (a, b) in &merged {
        inside_ms += b - a;
    }
    let is_inside = |t: u64| merged.iter().any(|(a, b)| *a <= t && t < *b);
    let inside = admits_ms.iter().filter(|&&t| is_inside(t)).count();
    let outside = admits_ms.len() - inside;
    let rate = |n: usize, ms: u64| if ms == 0 { 0.0 } else { n as f64 * 1000.0 / ms as f64 };
    (rate(inside, inside_ms), rate(outside, duration_ms - inside_ms))
}

/// What one engine run left behind, for scoring.
pub struct RunArtifacts {
    pub alerts: Vec<Alert>,
    pub metrics: Metrics,
    pub events_jsonl: String,
    pub admits_ms: Vec<u64>,
    /// Live graph plus store history per ground-truth event window.
    pub event_triples: Vec<Vec<SemanticTriple>>,
}

/// Runs one scenario to completion with an in-memory store.
pub fn run_one(config: &EngineConfig, scenario: Scenario, kb: KnowledgeBase) -> Result<RunArtifacts, EngineError> {
    let mut config = config.clone();
    config.store = None;
    config.event_log = None;
    let events = scenario.events.clone();
    let engine = Engine::from_parts(config, scenario, kb)?;
    let handle = engine.handle();
    let summary = engine.run()?;
    let log = handle.events().events();
    let admits_ms = log
        .iter()
        .filter_map(|e| match e.kind {
            EventKind::Admit { ts_ms, .. } => Some(ts_ms),
            _ => None,
        })
        .collect();
    let live = handle.kg_snapshot();
    let q = InteractiveQuery::default();
    let event_triples = events
        .iter()
        .map(|ev| {
            let w = TimeWindow::new(ev.start_ms(), ev.end_ms()).unwrap_or(TimeWindow::ALL);
            retrieve(&q, w, &live, handle.store())
        })
        .collect();
    Ok(RunArtifacts {
        alerts: summary.alerts,
        metrics: summary.metrics,
        events_jsonl: handle.events().jsonl(),
        admits_ms,
        event_triples,
    })
}

fn score(mode: Mode, scenario: &Scenario, run: &RunArtifacts) -> ModeRun {
    let events: Vec<EventOutcome> = scenario
        .events
        .iter()
        .zip(&run.event_triples)
        .map(|(ev, triples)| {
            let hit = run.alerts.iter().find(|a| detects(a, ev));
            EventOutcome {
                event_type: ev.event_type.clone(),
                start_s: ev.start_s,
                end_s: ev.end_s,
                detected: hit.is_some(),
                detected_at_ms: hit.map(|a| a.fired_at_ms),
                coverage: fact_coverage(triples, ev),
            }
        })
        .collect();
    let (fps_in_events, fps_outside_events) = admit_rates(&run.admits_ms, scenario);
    let m = &run.metrics;
    ModeRun {
        mode,
        detected: events.iter().filter(|e| e.detected).count(),
        events,
        alerts: run.alerts.len(),
        fps_series: m.fps_series.clone(),
        mean_fps: m.mean_fps(),
        fps_in_events,
        fps_outside_events,
        frames_emitted: m.frames_emitted,
        admitted: m.admitted,
        drop_rate: if m.frames_emitted == 0 {
            0.0
        } else {
            1.0 - m.admitted as f64 / m.frames_emitted as f64
        },
        simulated_memory_mb: m.memory_peak_mb,
        memory_violations: m.memory_violations,
        max_questions_per_set: m.max_questions_per_set,
    }
}

/// Both configs of a comparison, with their knowledge bases loaded.
pub struct SuiteConfigs {
    pub baseline: EngineConfig,
    pub streaming: EngineConfig,
    baseline_kb: KnowledgeBase,
    streaming_kb: KnowledgeBase,
}

impl SuiteConfigs {
    pub fn new(mut baseline: EngineConfig, mut streaming: EngineConfig) -> Result<Self, EngineError> {
        baseline.mode = Mode::Baseline;
        streaming.mode = Mode::Streaming;
        baseline.validate()?;
        streaming.validate()?;
        Ok(Self {
            baseline_kb: init_kb(&baseline.kb)?,
            streaming_kb: init_kb(&streaming.kb)?,
            baseline,
            streaming,
        })
    }

    pub fn load(baseline: &Path, streaming: &Path) -> Result<Self, EngineError> {
        Self::new(EngineConfig::load(baseline)?, EngineConfig::load(streaming)?)
    }
}

/// `.scn` files of a suite directory, sorted by name.
pub fn suite_files(dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "scn"))
        .collect();
    files.sort();
    Ok(files)
}

fn run_file(path: &Path, configs: &SuiteConfigs) -> Result<ScenarioReport, String> {
    let scenario = load_scenario(path).map_err(|e| e.to_string())?;
    let base = run_one(&configs.baseline, scenario.clone(), configs.baseline_kb.clone()).map_err(|e| e.to_string())?;
    let stream = run_one(&configs.streaming, scenario.clone(), configs.streaming_kb.clone()).map_err(|e| e.to_string())?;
    Ok(ScenarioReport {
        scenario: scenario.id.clone(),
        file: path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default(),
        duration_s: scenario.duration_s,
        ground_truth: scenario.events.len(),
        baseline: score(Mode::Baseline, &scenario, &base),
        streaming: score(Mode::Streaming, &scenario, &stream),
    })
}

/// Runs both modes over every scenario in `suite_dir`. A scenario that
/// fails is recorded in `errors` and the suite continues.
pub fn run_suite(suite_dir: &Path, configs: &SuiteConfigs, parallel: bool) -> Result<BenchReport, EngineError> {
    let files = suite_files(suite_dir)?;
    let results: Vec<Result<ScenarioReport, String>> = if parallel {
        std::thread::scope(|s| {
            let handles: Vec<_> = files.iter().map(|f| s.spawn(move || run_file(f, configs))).collect();
            handles.into_iter().map(|h| h.join().expect("bench worker")).collect()
        })
    } else {
        files.iter().map(|f| run_file(f, configs)).collect()
    };
    let mut scenarios = Vec::new();
    let mut errors = Vec::new();
    for (f, r) in files.iter().zip(results) {
        match r {
            Ok(s) => scenarios.push(s),
            Err(e) => errors.push((f.display().to_string(), e)),
        }
    }
    Ok(BenchReport::from_scenarios(scenarios, errors))
}

impl BenchReport {
    pub fn from_scenarios(scenarios: Vec<ScenarioReport>, errors: Vec<(String, String)>) -> Self {
        let mut rows: BTreeMap<String, (usize, f64, usize, usize, usize)> = BTreeMap::new();
        let mut order: Vec<String> = Vec::new();
        for s in &scenarios {
            let kind = s
                .baseline
                .events
                .first()
                .map(|e| e.event_type.clone())
                .unwrap_or_else(|| "none".into());
            if !order.contains(&kind) {
                order.push(kind.clone());
            }
            let r = rows.entry(kind).or_default();
            r.0 += 1;
            r.1 += s.duration_s;
            r.2 += s.ground_truth;
            r.3 += s.baseline.detected;
            r.4 += s.streaming.detected;
        }
        let rows: Vec<TypeRow> = order
            .into_iter()
            .map(|k| {
                let r = rows[&k];
                TypeRow {
                    event_type: k,
                    videos: r.0,
                    avg_duration_s: r.1 / r.0 as f64,
                    ground_truth: r.2,
                    baseline: r.3,
                    streaming: r.4,
                }
            })
            .collect();
        let total_events = rows.iter().map(|r| r.ground_truth).sum();
        let baseline_detected = rows.iter().map(|r| r.baseline).sum();
        let streaming_detected = rows.iter().map(|r| r.streaming).sum();
        let peak = |f: fn(&ScenarioReport) -> u64| scenarios.iter().map(f).max().unwrap_or(0);
        Self {
            note: COVERAGE_NOTE.into(),
            baseline_memory_mb: peak(|s| s.baseline.simulated_memory_mb),
            streaming_memory_mb: peak(|s| s.streaming.simulated_memory_mb),
            scenarios,
            errors,
            rows,
            total_events,
            baseline_detected,
            streaming_detected,
            baseline_pct: pct(baseline_detected, total_events),
            streaming_pct: pct(streaming_detected, total_events),
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// Detection table, one row per event type, plus memory and rates.
    pub fn render_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>10} {:>12} {:>9} {:>10}",
            "event type", "videos", "avg dur s", "ground truth", "baseline", "streaming"
        );
        for r in &self.rows {
            let _ = writeln!(
                out,
                "{:<16} {:>6} {:>10.1} {:>12} {:>9} {:>10}",
                r.event_type, r.videos, r.avg_duration_s, r.ground_truth, r.baseline, r.streaming
            );
        }
        let _ = writeln!(
            out,
            "{:<16} {:>6} {:>10} {:>12} {:>9} {:>10}",
            "total",
            "",
            "",
            self.total_events,
            format!("{} ({:.1}%)", self.baseline_detected, self.baseline_pct),
            format!("{} ({:.1}%)", self.streaming_detected, self.streaming_pct)
        );
        let _ = writeln!(out);
        let _ = writeln!(
            out,
            "simulated memory: baseline {} MB, streaming {} MB",
            self.baseline_memory_mb, self.streaming_memory_mb
        );
        for s in &self.scenarios {
            let _ = writeln!(
                out,
                "{:<16} baseline {:>5.2} fps  streaming {:>5.2} fps (events {:>5.2}, elsewhere {:>5.2})",
                s.scenario, s.baseline.mean_fps, s.streaming.mean_fps, s.streaming.fps_in_events, s.streaming.fps_outside_events
            );
        }
        for (f, e) in &self.errors {
            let _ = writeln!(out, "error: {f}: {e}");
        }
        let _ = writeln!(out, "note: {}", self.note);
        out
    }
}
