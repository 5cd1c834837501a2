use std::sync::atomic::{AtomicBool, AtomicUsize, Ordering};
use std::sync::Arc;
use std::time::Duration;

use arc_swap::ArcSwap;
use crossbeam_channel::{bounded, Receiver, RecvTimeoutError, Sender, TrySendError};

use super::events::EventKind;
use super::pipeline::{extract, filter_questions, maintain, overhead_us, Controller, Knowledge};
use super::{Engine, EngineError, Shared};
use crate::ingest::{open_stream, FrameRef, StreamItem};
use crate::inference::{InferenceEngine, InferenceResponse, Question};
use crate::scheduler::{Admission, DropReason, FrameScheduler, PipelineState};

fn note_frame(shared: &Shared, frame: &FrameRef, expected: &mut u64) {
    if frame.seq > *expected {
        shared.emit(EventKind::StreamDrop {
            count: frame.seq - *expected,
            before_seq: frame.seq,
        });
    }
    *expected = frame.seq + 1;
    shared.now_ms.fetch_max(frame.timestamp_ms, Ordering::AcqRel);
}

fn record_drop(shared: &Shared, frame: &FrameRef, reason: DropReason) {
    shared.metrics.lock().drops.record(reason);
    shared.emit(EventKind::Drop {
        seq: frame.seq,
        ts_ms: frame.timestamp_ms,
        reason,
    });
}

fn record_admit(shared: &Shared, frame: &FrameRef) {
    shared.metrics.lock().admitted += 1;
    shared.emit(EventKind::Admit {
        seq: frame.seq,
        ts_ms: frame.timestamp_ms,
    });
}

fn finish(shared: &Shared, frames: u64) {
    shared.emit(EventKind::End { frames });
    shared.metrics.lock().finished = true;
}

/// Every stage in one thread, in pipeline order. With a virtual clock the
/// run is a pure function of config and scenario.
pub(super) fn run_sequential(engine: Engine) -> Result<(), EngineError> {
    let Engine {
        shared,
        scenario,
        inference,
        mut knowledge,
        mut controller,
    } = engine;
    let filter = filter_questions(&shared.config, &shared.kb)?;
    let mut stream = open_stream(scenario.clone(), shared.clock.clone());
    *shared.stream_stats.lock() = Some(stream.stats());
    let constraints = shared.config.constraints.clone();
    let mut sched = FrameScheduler::new(scenario.fps, controller.plan(), &constraints);
    let mut questions = knowledge.initial_questions(&shared);
    let mut expected = 0;
    let mut delivered = 0;
    while !shared.stop.load(Ordering::Acquire) {
        let frame = match stream.next_frame() {
            Ok(StreamItem::Frame(f)) => f,
            Ok(StreamItem::EndOfStream) | Err(_) => break,
        };
        delivered += 1;
        note_frame(&shared, &frame, &mut expected);
        controller.tick(&shared, frame.timestamp_ms);
        let plan = controller.plan().clone();
        match sched.admit(&frame, &plan, controller.state(), &constraints) {
            Admission::Drop(reason) => record_drop(&shared, &frame, reason),
            Admission::Admit => {
                record_admit(&shared, &frame);
                controller.admitted(frame.timestamp_ms);
                shared.clock.charge(overhead_us(&shared.config));
                let ts = frame.timestamp_ms;
                if let Some(resp) = extract(&shared, &inference, frame, &questions, &filter) {
                    controller.observe_latency(&resp.model_id, resp.simulated_latency_ms + constraints.overhead_ms);
                    let out = knowledge.step(&shared, &resp)?;
                    if let Some(active) = out.context_active {
                        controller.set_active(&shared, active);
                    }
                    if let Some(q) = out.questions {
                        questions = q;
                    }
                }
                maintain(&shared, ts)?;
            }
        }
    }
    controller.tick(&shared, scenario.timestamp_ms(scenario.frame_count()));
    finish(&shared, delivered);
    Ok(())
}

enum Control {
    Admitted(u64),
    Tick(u64),
    Latency { model_id: String, per_frame_ms: f64 },
    Context(bool),
}

/// How long idle stages wait before re-checking for shutdown.
const POLL: Duration = Duration::from_millis(50);

fn ingest_stage(
    shared: Arc<Shared>,
    scenario: Arc<crate::ingest::Scenario>,
    backlog_limit: usize,
    depth: Arc<AtomicUsize>,
    tx: Sender<FrameRef>,
    ctl: Sender<Control>,
) -> u64 {
    let mut stream = open_stream(scenario.clone(), shared.clock.clone());
    *shared.stream_stats.lock() = Some(stream.stats());
    let constraints = shared.config.constraints.clone();
    let mut sched = FrameScheduler::new(scenario.fps, &shared.plan.load(), &constraints);
    let mut state = PipelineState::new(scenario.fps as f64);
    state.backlog_limit = backlog_limit;
    let mut expected = 0;
    let mut delivered = 0;
    while !shared.stop.load(Ordering::Acquire) {
        let frame = match stream.next_frame() {
            Ok(StreamItem::Frame(f)) => f,
            Ok(StreamItem::EndOfStream) | Err(_) => break,
        };
        delivered += 1;
        note_frame(&shared, &frame, &mut expected);
        let _ = ctl.send(Control::Tick(frame.timestamp_ms));
        state.queue_depths.insert("inference".into(), depth.load(Ordering::Acquire));
        let plan = shared.plan.load_full();
        match sched.admit(&frame, &plan, &state, &constraints) {
            Admission::Drop(reason) => record_drop(&shared, &frame, reason),
            Admission::Admit => {
                let ts = frame.timestamp_ms;
                let snapshot = frame.clone();
                depth.fetch_add(1, Ordering::AcqRel);
                match tx.try_send(frame) {
                    Ok(()) => {
                        record_admit(&shared, &snapshot);
                        let _ = ctl.send(Control::Admitted(ts));
                    }
                    Err(TrySendError::Full(_)) => {
                        depth.fetch_sub(1, Ordering::AcqRel);
                        record_drop(&shared, &snapshot, DropReason::Backlog);
                    }
                    Err(TrySendError::Disconnected(_)) => break,
                }
            }
        }
    }
    let _ = ctl.send(Control::Tick(scenario.timestamp_ms(scenario.frame_count())));
    delivered
}

fn inference_stage(
    shared: Arc<Shared>,
    inference: Arc<InferenceEngine>,
    questions: Arc<ArcSwap<Vec<Question>>>,
    filter: Vec<Question>,
    depth: Arc<AtomicUsize>,
    rx: Receiver<FrameRef>,
    tx: Sender<InferenceResponse>,
    ctl: Sender<Control>,
) {
    let overhead_ms = shared.config.constraints.overhead_ms;
    for frame in rx.iter() {
        let qs = questions.load_full();
        let resp = extract(&shared, &inference, frame, &qs, &filter);
        depth.fetch_sub(1, Ordering::AcqRel);
        if let Some(resp) = resp {
            let _ = ctl.send(Control::Latency {
                model_id: resp.model_id.clone(),
                per_frame_ms: resp.simulated_latency_ms + overhead_ms,
            });
            if tx.send(resp).is_err() {
                break;
            }
        }
    }
}

fn knowledge_stage(
    shared: Arc<Shared>,
    mut knowledge: Knowledge,
    questions: Arc<ArcSwap<Vec<Question>>>,
    rx: Receiver<InferenceResponse>,
    ctl: Sender<Control>,
) -> Result<(), EngineError> {
    for resp in rx.iter() {
        let out = match knowledge.step(&shared, &resp) {
            Ok(o) => o,
            Err(e) => {
                shared.stop.store(true, Ordering::Release);
                return Err(e);
            }
        };
        if let Some(active) = out.context_active {
            let _ = ctl.send(Control::Context(active));
        }
        if let Some(q) = out.questions {
            questions.store(Arc::new(q));
        }
    }
    Ok(())
}

fn control_stage(shared: Arc<Shared>, mut controller: Controller, rx: Receiver<Control>) {
    for msg in rx.iter() {
        match msg {
            Control::Admitted(ts) => controller.admitted(ts),
            Control::Tick(ts) => controller.tick(&shared, ts),
            Control::Latency { model_id, per_frame_ms } => controller.observe_latency(&model_id, per_frame_ms),
            Control::Context(active) => controller.set_active(&shared, active),
        }
    }
}

fn maintenance_stage(shared: Arc<Shared>, done: Arc<AtomicBool>) -> Result<(), EngineError> {
    let ticker = crossbeam_channel::tick(POLL);
    loop {
        match ticker.recv_timeout(POLL * 2) {
            Ok(_) | Err(RecvTimeoutError::Timeout) => {}
            Err(RecvTimeoutError::Disconnected) => break,
        }
        maintain(&shared, shared.now_ms.load(Ordering::Acquire))?;
        if done.load(Ordering::Acquire) {
            break;
        }
    }
    Ok(())
}

/// One thread per stage, connected by bounded queues, plus a control
/// thread for the resolver and a maintenance thread for compaction.
pub(super) fn run_threaded(engine: Engine) -> Result<(), EngineError> {
    let Engine {
        shared,
        scenario,
        inference,
        mut knowledge,
        controller,
    } = engine;
    let cap = shared.config.queue_capacity;
    let filter = filter_questions(&shared.config, &shared.kb)?;
    let questions = Arc::new(ArcSwap::from_pointee(knowledge.initial_questions(&shared)));
    let depth = Arc::new(AtomicUsize::new(0));
    let done = Arc::new(AtomicBool::new(false));
    let (frame_tx, frame_rx) = bounded::<FrameRef>(cap);
    let (resp_tx, resp_rx) = bounded::<InferenceResponse>(cap);
    let (ctl_tx, ctl_rx) = bounded::<Control>(1024);

    let result = std::thread::scope(|s| {
        let control = {
            let shared = shared.clone();
            std::thread::Builder::new()
                .name("control".into())
                .spawn_scoped(s, move || control_stage(shared, controller, ctl_rx))
                .expect("spawn control")
        };
        let maint = {
            let (shared, done) = (shared.clone(), done.clone());
            std::thread::Builder::new()
                .name("maintenance".into())
                .spawn_scoped(s, move || maintenance_stage(shared, done))
                .expect("spawn maintenance")
        };
        let know = {
            let (shared, questions, ctl) = (shared.clone(), questions.clone(), ctl_tx.clone());
            std::thread::Builder::new()
                .name("knowledge".into())
                .spawn_scoped(s, move || knowledge_stage(shared, knowledge, questions, resp_rx, ctl))
                .expect("spawn knowledge")
        };
        let infer = {
            let (shared, depth, ctl) = (shared.clone(), depth.clone(), ctl_tx.clone());
            std::thread::Builder::new()
                .name("inference".into())
                .spawn_scoped(s, move || inference_stage(shared, inference, questions, filter, depth, frame_rx, resp_tx, ctl))
                .expect("spawn inference")
        };
        let ingest = {
            let (shared, scenario) = (shared.clone(), scenario.clone());
            std::thread::Builder::new()
                .name("ingest".into())
                .spawn_scoped(s, move || ingest_stage(shared, scenario, cap, depth, frame_tx, ctl_tx))
                .expect("spawn ingest")
        };
        let delivered = ingest.join().expect("ingest thread");
        infer.join().expect("inference thread");
        let knowledge_result = know.join().expect("knowledge thread");
        control.join().expect("control thread");
        done.store(true, Ordering::Release);
        let maint_result = maint.join().expect("maintenance thread");
        knowledge_result.and(maint_result).map(|_| delivered)
    });
    let delivered = result?;
    finish(&shared, delivered);
    Ok(())
}
