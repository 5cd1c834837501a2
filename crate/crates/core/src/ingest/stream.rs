use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use thiserror::Error;

use super::{FramePayload, FrameRef, Scenario};
use crate::clock::Clock;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StreamError {
    #[error("stream is closed")]
    StreamClosed,
}

#[derive(Debug)]
pub enum StreamItem {
    Frame(FrameRef),
    EndOfStream,
}

/// Counters readable from any thread while the stream is consumed.
#[derive(Debug, Default)]
pub struct StreamStats {
    pub emitted: AtomicU64,
    pub delivered: AtomicU64,
    pub dropped: AtomicU64,
}

impl StreamStats {
    pub fn snapshot(&self) -> (u64, u64, u64) {
        (
            self.emitted.load(Ordering::Acquire),
            self.delivered.load(Ordering::Acquire),
            self.dropped.load(Ordering::Acquire),
        )
    }
}

/// A live view over a scenario: frame `i` is "on air" from its emission time
/// until the next frame's. Emission is implied by the clock, so accounting is
/// updated in the same step that observes time passing.
pub struct StreamHandle {
    scenario: Arc<Scenario>,
    source_id: Arc<str>,
    clock: Arc<dyn Clock>,
    next_undelivered: u64,
    closed: bool,
    stats: Arc<StreamStats>,
}

pub fn open_stream(scenario: Arc<Scenario>, clock: Arc<dyn Clock>) -> StreamHandle {
    StreamHandle {
        source_id: Arc::from(scenario.id.as_str()),
        scenario,
        clock,
        next_undelivered: 0,
        closed: false,
        stats: Arc::new(StreamStats::default()),
    }
}

impl StreamHandle {
    pub fn stats(&self) -> Arc<StreamStats> {
        self.stats.clone()
    }

    pub fn scenario(&self) -> &Arc<Scenario> {
        &self.scenario
    }

    pub fn fps(&self) -> u32 {
        self.scenario.fps
    }

    fn emit_us(&self, seq: u64) -> u64 {
        seq * 1_000_000 / self.scenario.fps as u64
    }

    fn end_us(&self) -> u64 {
        self.emit_us(self.scenario.frame_count())
    }

    /// Newest frame whose emission time is at or before `now_us`.
    fn on_air(&self, now_us: u64) -> u64 {
        ((now_us + 1) * self.scenario.fps as u64 - 1) / 1_000_000
    }

    /// Returns the newest undelivered frame, waiting for the next emission if
    /// everything emitted so far has been delivered. Older undelivered frames
    /// are dropped.
    pub fn next_frame(&mut self) -> Result<StreamItem, StreamError> {
        if self.closed {
            return Err(StreamError::StreamClosed);
        }
        let n = self.scenario.frame_count();
        loop {
            let now = self.clock.now_us();
            if now >= self.end_us() {
                let missed = n - self.next_undelivered;
                self.next_undelivered = n;
                self.stats.dropped.fetch_add(missed, Ordering::AcqRel);
                self.stats.emitted.store(n, Ordering::Release);
                self.closed = true;
                return Ok(StreamItem::EndOfStream);
            }
            let cur = self.on_air(now);
            self.stats.emitted.store(cur + 1, Ordering::Release);
            if cur >= self.next_undelivered {
                self.stats
                    .dropped
                    .fetch_add(cur - self.next_undelivered, Ordering::AcqRel);
                self.stats.delivered.fetch_add(1, Ordering::AcqRel);
                self.next_undelivered = cur + 1;
                return Ok(StreamItem::Frame(self.frame_ref(cur)));
            }
            self.clock.wait_until(self.emit_us(self.next_undelivered));
        }
    }

    pub fn close(&mut self) {
        self.closed = true;
    }

    fn frame_ref(&self, seq: u64) -> FrameRef {
        let spec = self.scenario.frames[seq as usize].clone();
        FrameRef {
            source_id: self.source_id.clone(),
            seq,
            timestamp_ms: self.scenario.timestamp_ms(seq),
            motion_score: spec.motion_score,
            scene_detail_score: spec.scene_detail_score,
            payload: FramePayload::Spec(spec),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::clock::VirtualClock;
    use crate::ingest::parse_scenario;

    fn scenario(fps: u32, secs: u32) -> Arc<Scenario> {
        let mut s = format!("scenario s; fps {fps}; duration {secs}; version 1\n");
        for i in 0..fps * secs {
            s.push_str(&format!("frame {i} motion=0 detail=0\n"));
        }
        Arc::new(parse_scenario(&s).unwrap())
    }

    /// Step-by-step emission/consumption timeline, independent of the handle:
    /// at each consumer wake-up the on-air frame is the largest seq whose
    /// emission time (seq * 1e6 / fps, floored) is <= now.
    fn timeline_oracle(fps: u64, n: u64, latency_us: u64) -> (Vec<u64>, u64) {
        let emit = |i: u64| i * 1_000_000 / fps;
        let mut now = 0u64;
        let mut next = 0u64;
        let mut delivered = Vec::new();
        let mut dropped = 0;
        loop {
            if now >= emit(n) {
                dropped += n - next;
                return (delivered, dropped);
            }
            let mut cur = None;
            for i in next..n {
                if emit(i) <= now {
                    cur = Some(i);
                } else {
                    break;
                }
            }
            match cur {
                Some(c) => {
                    dropped += c - next;
                    delivered.push(c);
                    next = c + 1;
                    now += latency_us;
                }
                None => now = emit(next),
            }
        }
    }

    fn consume(sc: Arc<Scenario>, latency_us: u64) -> (Vec<u64>, Arc<StreamStats>) {
        let clock = Arc::new(VirtualClock::new());
        let mut h = open_stream(sc, clock.clone());
        let stats = h.stats();
        let mut seen = Vec::new();
        while let StreamItem::Frame(f) = h.next_frame().unwrap() {
            seen.push(f.seq);
            clock.charge(latency_us);
        }
        (seen, stats)
    }

    #[test]
    fn first_frame_is_seq_zero() {
        let mut h = open_stream(scenario(24, 1), Arc::new(VirtualClock::new()));
        match h.next_frame().unwrap() {
            StreamItem::Frame(f) => {
                assert_eq!(f.seq, 0);
                assert_eq!(f.timestamp_ms, 0);
            }
            StreamItem::EndOfStream => panic!("unexpected end"),
        }
    }

    #[test]
    fn backlog_delivers_newest_and_counts_drops() {
        let clock = Arc::new(VirtualClock::new());
        let mut h = open_stream(scenario(24, 1), clock.clone());
        // frames 0, 1, 2 emitted at 0, 41666, 83333 us; nothing consumed yet
        clock.wait_until(83_333);
        let StreamItem::Frame(f) = h.next_frame().unwrap() else { panic!() };
        assert_eq!(f.seq, 2);
        assert_eq!(h.stats().snapshot(), (3, 1, 2));
    }

    #[test]
    fn every_twelfth_frame_at_500ms_latency() {
        let (seen, stats) = consume(scenario(24, 2), 500_000);
        assert_eq!(seen, vec![0, 12, 24, 36]);
        let (oracle, dropped) = timeline_oracle(24, 48, 500_000);
        assert_eq!(seen, oracle);
        let (emitted, delivered, d) = stats.snapshot();
        assert_eq!((emitted, delivered, d), (48, 4, dropped));
    }

    #[test]
    fn slow_consumer_sees_a_third_of_the_frames() {
        let (seen, stats) = consume(scenario(24, 4), 125_000);
        assert_eq!(seen.len(), 32, "8 frames/s over 4 s");
        let (_, _, dropped) = stats.snapshot();
        assert_eq!(dropped, 64, "16 drops/s");
        assert_eq!(seen, timeline_oracle(24, 96, 125_000).0);
    }

    #[test]
    fn fast_consumer_drops_nothing() {
        let (seen, stats) = consume(scenario(24, 1), 1_000);
        assert_eq!(seen, (0..24).collect::<Vec<_>>());
        assert_eq!(stats.snapshot(), (24, 24, 0));
    }

    #[test]
    fn end_of_stream_then_closed() {
        let clock = Arc::new(VirtualClock::new());
        let mut h = open_stream(scenario(24, 1), clock.clone());
        clock.wait_until(5_000_000);
        assert!(matches!(h.next_frame().unwrap(), StreamItem::EndOfStream));
        assert_eq!(h.next_frame().unwrap_err(), StreamError::StreamClosed);
        assert_eq!(h.stats().snapshot(), (24, 0, 24));
    }

    #[test]
    fn empty_scenario_ends_immediately() {
        let sc = Arc::new(parse_scenario("scenario e; fps 24; duration 0; version 1").unwrap());
        let mut h = open_stream(sc, Arc::new(VirtualClock::new()));
        assert!(matches!(h.next_frame().unwrap(), StreamItem::EndOfStream));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(64))]

            #[test]
            fn accounting_and_monotonicity(fps in 1u32..30, secs in 0u32..4, lat in proptest::collection::vec(0u64..400_000, 1..20)) {
                let sc = scenario(fps, secs);
                let run = || {
                    let clock = Arc::new(VirtualClock::new());
                    let mut h = open_stream(sc.clone(), clock.clone());
                    let mut seen = Vec::new();
                    let mut i = 0;
                    while let StreamItem::Frame(f) = h.next_frame().unwrap() {
                        seen.push(f.seq);
                        clock.charge(lat[i % lat.len()]);
                        i += 1;
                    }
                    (seen, h.stats().snapshot())
                };
                let (seen, (emitted, delivered, dropped)) = run();
                prop_assert!(seen.windows(2).all(|w| w[0] < w[1]));
                prop_assert_eq!(delivered + dropped, emitted);
                prop_assert_eq!(emitted, (fps * secs) as u64);
                prop_assert_eq!(run().0, seen);
            }
        }
    }
}
