use std::collections::{BTreeMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::Mode;
use crate::scheduler::{DropCounters, SchedulePlan};

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelStats {
    pub calls: u64,
    pub errors: u64,
    pub total_latency_ms: f64,
    pub mean_latency_ms: f64,
    pub last_latency_ms: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FpsPoint {
    /// End of the one-second bucket.
    pub t_ms: u64,
    pub fps: f64,
    pub escalated: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub mode: Mode,
    pub finished: bool,
    pub frames_emitted: u64,
    pub frames_delivered: u64,
    /// Frames that went off air before the pipeline could take them.
    pub stream_dropped: u64,
    pub admitted: u64,
    pub drops: DropCounters,
    /// Admitted frames the lightweight filter tier found empty.
    pub filtered_frames: u64,
    pub inferences: u64,
    pub per_model: BTreeMap<String, ModelStats>,
    /// Sum of footprints of the loaded models under the current plan.
    pub simulated_memory_mb: u64,
    pub memory_peak_mb: u64,
    pub memory_budget_mb: u64,
    pub memory_violations: u64,
    pub fps_series: Vec<FpsPoint>,
    pub alerts: u64,
    pub kg_triples: usize,
    pub kg_epoch: u64,
    pub resets: u64,
    pub noise: u64,
    pub compactions: u64,
    pub questions_emitted: u64,
    pub max_questions_per_set: usize,
    pub context: String,
    pub context_active: bool,
    pub plan: Option<SchedulePlan>,
}

impl Metrics {
    pub fn record_call(&mut self, model_id: &str, latency_ms: f64) {
        self.inferences += 1;
        let s = self.per_model.entry(model_id.to_string()).or_default();
        s.calls += 1;
        s.total_latency_ms += latency_ms;
        s.mean_latency_ms = s.total_latency_ms / s.calls as f64;
        s.last_latency_ms = latency_ms;
    }

    pub fn record_error(&mut self, model_id: &str) {
        self.per_model.entry(model_id.to_string()).or_default().errors += 1;
    }

    pub fn record_plan(&mut self, plan: &SchedulePlan) {
        self.simulated_memory_mb = plan.footprint_mb;
        self.memory_peak_mb = self.memory_peak_mb.max(plan.footprint_mb);
        if plan.footprint_mb > self.memory_budget_mb {
            self.memory_violations += 1;
        }
        self.plan = Some(plan.clone());
    }

    /// Mean of the fps samples.
    pub fn mean_fps(&self) -> f64 {
        if self.fps_series.is_empty() {
            return 0.0;
        }
        self.fps_series.iter().map(|p| p.fps).sum::<f64>() / self.fps_series.len() as f64
    }
}

/// Turns admit timestamps into one-second admitted-frame counts.
#[derive(Debug, Clone)]
pub struct FpsSampler {
    next_boundary_ms: u64,
    admits: VecDeque<u64>,
}

impl Default for FpsSampler {
    fn default() -> Self {
        Self {
            next_boundary_ms: 1000,
            admits: VecDeque::new(),
        }
    }
}

impl FpsSampler {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn admit(&mut self, ts_ms: u64) {
        self.admits.push_back(ts_ms);
    }

    /// Closes every bucket ending at or before `ts_ms` and returns
    /// `(bucket end, admitted frames in the bucket)`.
    pub fn advance(&mut self, ts_ms: u64) -> Vec<(u64, u64)> {
        let mut out = Vec::new();
        while self.next_boundary_ms <= ts_ms {
            let b = self.next_boundary_ms;
            let count = self.admits.iter().take_while(|&&t| t < b).count();
            self.admits.drain(..count);
            out.push((b, count as u64));
            self.next_boundary_ms += 1000;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_buckets_by_second() {
        let mut s = FpsSampler::new();
        for t in [0, 125, 250, 999, 1000, 1500] {
            s.admit(t);
        }
        assert_eq!(s.advance(999), vec![]);
        assert_eq!(s.advance(2000), vec![(1000, 4), (2000, 2)]);
        assert_eq!(s.advance(3500), vec![(3000, 0)]);
    }

    #[test]
    fn plan_memory_is_tracked() {
        let mut m = Metrics {
            memory_budget_mb: 10_000,
            ..Default::default()
        };
        let mut plan = SchedulePlan {
            admit_rate: 8.0,
            model_id: "m".into(),
            predicted_latency_ms: 110.0,
            cost_per_s: 8.0,
            footprint_mb: 10_000,
            escalated: false,
        };
        m.record_plan(&plan);
        assert_eq!((m.simulated_memory_mb, m.memory_violations), (10_000, 0));
        plan.footprint_mb = 10_001;
        m.record_plan(&plan);
        assert_eq!((m.memory_peak_mb, m.memory_violations), (10_001, 1));
        m.record_call("m", 100.0);
        m.record_call("m", 120.0);
        assert_eq!(m.per_model["m"].mean_latency_ms, 110.0);
    }
}
