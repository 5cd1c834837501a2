//! Frame sources: scripted scenario files and the paced stream handle that
//! delivers their frames with live-camera (newest-wins) semantics.

mod scenario;
mod stream;

use std::sync::Arc;

pub use scenario::{
    load_scenario, parse_scenario, FrameSpec, GroundTruthEvent, Scenario, ScenarioError,
    StepTemplate,
};
pub use stream::{open_stream, StreamError, StreamHandle, StreamItem, StreamStats};

/// Frame contents, resolved lazily by whichever backend answers questions.
#[derive(Debug, Clone)]
pub enum FramePayload {
    /// Ground-truth frame description from a scenario file.
    Spec(Arc<FrameSpec>),
    /// Encoded image bytes from a live source.
    Image(Arc<Vec<u8>>),
}

#[derive(Debug, Clone)]
pub struct FrameRef {
    pub source_id: Arc<str>,
    pub seq: u64,
    pub timestamp_ms: u64,
    pub payload: FramePayload,
    pub motion_score: f64,
    pub scene_detail_score: f64,
}

impl FrameRef {
    pub fn spec(&self) -> Option<&FrameSpec> {
        match &self.payload {
            FramePayload::Spec(s) => Some(s),
            FramePayload::Image(_) => None,
        }
    }

    /// Stable textual handle used when a frame is sent by reference.
    pub fn payload_ref(&self) -> String {
        format!("{}#{}", self.source_id, self.seq)
    }
}
