use std::path::{Path, PathBuf};
use std::sync::mpsc;
use std::time::Duration;

use framekg::engine::{BackendSpec, EngineConfig, EventKind};
use framekg::ingest::load_scenario;
use framekg::knowledge::init_kb;
use framekg::lambda::{CompactionPolicy, LambdaStore};
use framekg::query::NO_OBSERVATIONS;
use framekg::{ClockMode, Engine, Mode, Scenario, TimeWindow, TriplePattern};

fn data() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

fn config(mode: Mode) -> EngineConfig {
    let name = match mode {
        Mode::Baseline => "baseline.toml",
        Mode::Streaming => "streaming.toml",
    };
    let mut c = EngineConfig::load(data().join(name)).unwrap();
    c.store = None;
    c.event_log = None;
    c
}

fn scenario(name: &str) -> Scenario {
    load_scenario(data().join("suite").join(format!("{name}.scn"))).unwrap()
}

fn engine(cfg: EngineConfig, sc: Scenario) -> Engine {
    let kb = init_kb(&cfg.kb).unwrap();
    Engine::from_parts(cfg, sc, kb).unwrap()
}

/// First `secs` seconds of a scenario.
fn truncated(mut sc: Scenario, secs: u64) -> Scenario {
    let n = (secs * sc.fps as u64) as usize;
    sc.frames.truncate(n);
    sc.duration_s = secs as f64;
    sc.events.retain(|e| e.end_s <= secs as f64);
    sc
}

#[test]
fn streaming_run_detects_and_logs_in_order() {
    let e = engine(config(Mode::Streaming), scenario("hit_and_run_2"));
    let h = e.handle();
    let summary = e.run().unwrap();
    assert!(summary.alerts.iter().any(|a| a.pattern == "hit_and_run"));
    assert!(summary.metrics.finished);

    let log = h.events().events();
    assert!(matches!(log.first().unwrap().kind, EventKind::Plan { .. }));
    assert!(matches!(log.last().unwrap().kind, EventKind::End { .. }));
    assert!(log.windows(2).all(|w| w[1].n == w[0].n + 1 && w[1].t_us >= w[0].t_us));
    let has = |f: fn(&EventKind) -> bool| log.iter().any(|e| f(&e.kind));
    assert!(has(|k| matches!(k, EventKind::ContextOpen { .. })));
    assert!(has(|k| matches!(k, EventKind::Escalate { active: true, .. })));
    assert!(has(|k| matches!(k, EventKind::Questions { .. })));
    assert!(has(|k| matches!(k, EventKind::Drop { .. })));
}

#[test]
fn baseline_uses_one_heavyweight_model() {
    let e = engine(config(Mode::Baseline), scenario("hit_and_run_2"));
    let h = e.handle();
    let s = e.run().unwrap();
    assert_eq!(s.metrics.per_model.keys().collect::<Vec<_>>(), vec!["vlm-large"]);
    assert_eq!(h.plan().footprint_mb, 18_000);
    assert!(h.plan().admit_rate < 0.25);
    let infers = h
        .events()
        .events()
        .iter()
        .filter(|e| matches!(&e.kind, EventKind::Infer { questions: 1, .. }))
        .count() as u64;
    assert_eq!(infers, s.metrics.inferences);
}

#[test]
fn user_standing_query_raises_its_own_alert() {
    let mut cfg = config(Mode::Streaming);
    cfg.kb_patterns = false;
    let e = engine(cfg, scenario("v2v_collision_1"));
    let h = e.handle();
    let q = h.register_query("standing crash: (vehicle?a collided_with vehicle?b)").unwrap();
    let s = e.run().unwrap();
    assert!(!s.alerts.is_empty());
    assert!(s.alerts.iter().all(|a| a.query_id == q.query_id));
}

#[test]
fn interactive_and_refinement_after_a_run() {
    let e = engine(config(Mode::Streaming), scenario("commotion_1"));
    let h = e.handle();
    e.run().unwrap();
    let (q, a) = h.interactive("what happened window=30s").unwrap();
    assert!(!a.triples.is_empty());
    assert_ne!(a.text, NO_OBSERVATIONS);
    let (r, b) = h.refine(&q.query_id, "focus=pushed").unwrap();
    assert_eq!(r.parent_id.as_deref(), Some(q.query_id.as_str()));
    assert!(!b.triples.is_empty());
    assert!(b.triples.iter().all(|t| t.predicate == "pushed"));
    assert!(h.refine("missing", "focus=pushed").is_err());
}

#[test]
fn persisted_store_and_event_log_survive_the_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut cfg = config(Mode::Streaming);
    cfg.scenario = data().join("suite/hit_and_run_2.scn");
    cfg.store = Some(dir.path().join("store"));
    cfg.event_log = Some(dir.path().join("events.jsonl"));
    let e = Engine::new(cfg).unwrap();
    let h = e.handle();
    e.run().unwrap();

    let file = std::fs::read_to_string(dir.path().join("events.jsonl")).unwrap();
    assert_eq!(file, h.events().jsonl());
    assert!(dir.path().join("store/traffic.kb").exists());

    let live = h.store().serve(&TriplePattern::any(), TimeWindow::ALL, None);
    drop(h);
    let reopened = LambdaStore::open(dir.path().join("store"), CompactionPolicy::default()).unwrap();
    assert!(!live.is_empty());
    assert_eq!(reopened.serve(&TriplePattern::any(), TimeWindow::ALL, None), live);
}

#[test]
fn tier_filter_skips_empty_frames() {
    let mut cfg = config(Mode::Streaming);
    cfg.models.retain(|m| m.profile.model_id != "vqa-lite");
    let mut heavy = config(Mode::Baseline).models.remove(0);
    heavy.profile.base_latency_ms = 200.0;
    heavy.profile.per_token_ms = 1.0;
    let mut lite = config(Mode::Streaming).models.remove(0);
    lite.profile.capabilities = ["collided_with".to_string()].into();
    cfg.models.push(heavy);
    cfg.models.push(lite);
    cfg.filter_predicates = vec!["collided_with".into()];
    let e = engine(cfg, scenario("hit_and_run_2"));
    let h = e.handle();
    let s = e.run().unwrap();
    assert!(s.metrics.filtered_frames > 0);
    assert!(h.events().events().iter().any(|e| matches!(e.kind, EventKind::Filtered { .. })));
}

#[test]
fn invalid_configs_are_rejected() {
    let mut cfg = config(Mode::Streaming);
    cfg.kb = data().join("missing.kb");
    assert!(Engine::new(cfg).is_err());

    let mut cfg = config(Mode::Baseline);
    cfg.models.clear();
    let sc = scenario("hit_and_run_2");
    assert!(Engine::from_parts(cfg.clone(), sc, init_kb(&cfg.kb).unwrap()).is_err());

    let mut cfg = config(Mode::Streaming);
    cfg.constraints.memory_budget_mb = 5_000;
    let sc = scenario("hit_and_run_2");
    assert!(Engine::from_parts(cfg.clone(), sc, init_kb(&cfg.kb).unwrap()).is_err());
}

#[test]
fn wall_clock_run_stays_live_under_adversarial_jitter() {
    let mut cfg = config(Mode::Streaming);
    cfg.clock = ClockMode::Wall;
    cfg.queue_capacity = 2;
    for m in &mut cfg.models {
        m.backend = BackendSpec::Mock {
            jitter_ms: vec![0.0, 450.0, 0.0, 20.0, 900.0, 5.0],
        };
    }
    let e = engine(cfg, truncated(scenario("hit_and_run_2"), 3));
    let h = e.handle();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(e.run().map(|s| s.metrics));
    });
    let m = rx
        .recv_timeout(Duration::from_secs(30))
        .expect("wall-clock run finished in time")
        .unwrap();
    assert!(m.finished);
    assert_eq!(m.frames_emitted, 72);
    assert!(m.admitted > 0);
    assert!(m.admitted + m.drops.total() + m.stream_dropped >= m.frames_delivered.min(m.frames_emitted));
    assert!(matches!(h.events().events().last().unwrap().kind, EventKind::End { .. }));
}

#[test]
fn stop_ends_a_wall_clock_run_early() {
    let mut cfg = config(Mode::Streaming);
    cfg.clock = ClockMode::Wall;
    let e = engine(cfg, scenario("v2p_collision_1"));
    let h = e.handle();
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || {
        let _ = tx.send(e.run().map(|s| s.metrics));
    });
    std::thread::sleep(Duration::from_millis(300));
    h.stop();
    let m = rx.recv_timeout(Duration::from_secs(10)).expect("run stopped").unwrap();
    assert!(m.frames_emitted < 48 * 24);
}
