//! Time sources. All engine time is expressed in microseconds since the start
//! of the stream.

use std::sync::atomic::{AtomicU64, Ordering};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum ClockMode {
    #[default]
    Virtual,
    Wall,
}

pub trait Clock: Send + Sync {
    fn now_us(&self) -> u64;

    /// Blocks (or, for a virtual clock, jumps) until `t_us` has been reached.
    fn wait_until(&self, t_us: u64);

    /// Accounts for `dur_us` of work performed by the caller.
    fn charge(&self, dur_us: u64);

    fn now_ms(&self) -> u64 {
        self.now_us() / 1000
    }

    /// True when time only moves through `wait_until` and `charge`.
    fn is_virtual(&self) -> bool {
        false
    }
}

/// Deterministic clock that only moves when told to.
#[derive(Debug, Default)]
pub struct VirtualClock {
    now: AtomicU64,
}

impl VirtualClock {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn at(t_us: u64) -> Self {
        Self {
            now: AtomicU64::new(t_us),
        }
    }
}

impl Clock for VirtualClock {
    fn now_us(&self) -> u64 {
        self.now.load(Ordering::Acquire)
    }

    fn wait_until(&self, t_us: u64) {
        self.now.fetch_max(t_us, Ordering::AcqRel);
    }

    fn charge(&self, dur_us: u64) {
        self.now.fetch_add(dur_us, Ordering::AcqRel);
    }

    fn is_virtual(&self) -> bool {
        true
    }
}

#[derive(Debug)]
pub struct WallClock {
    start: Instant,
}

impl WallClock {
    pub fn new() -> Self {
        Self {
            start: Instant::now(),
        }
    }
}

impl Default for WallClock {
    fn default() -> Self {
        Self::new()
    }
}

impl Clock for WallClock {
    fn now_us(&self) -> u64 {
        self.start.elapsed().as_micros() as u64
    }

    fn wait_until(&self, t_us: u64) {
        let now = self.now_us();
        if t_us > now {
            std::thread::sleep(Duration::from_micros(t_us - now));
        }
    }

    fn charge(&self, dur_us: u64) {
        std::thread::sleep(Duration::from_micros(dur_us));
    }
}

/// Converts a millisecond latency to whole microseconds, rounding to nearest.
pub fn ms_to_us(ms: f64) -> u64 {
    if ms <= 0.0 {
        0
    } else {
        (ms * 1000.0).round() as u64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn virtual_clock_never_moves_backwards() {
        let c = VirtualClock::new();
        c.charge(500);
        c.wait_until(200);
        assert_eq!(c.now_us(), 500);
        c.wait_until(1_000);
        assert_eq!(c.now_us(), 1_000);
        assert_eq!(c.now_ms(), 1);
    }

    #[test]
    fn latency_conversion_rounds() {
        assert_eq!(ms_to_us(0.0), 0);
        assert_eq!(ms_to_us(110.0), 110_000);
        assert_eq!(ms_to_us(0.0004), 0);
        assert_eq!(ms_to_us(-3.0), 0);
    }
}
