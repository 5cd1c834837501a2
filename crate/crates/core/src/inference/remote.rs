use std::sync::OnceLock;
use std::time::{Duration, Instant};

use base64::Engine as _;
use serde::{Deserialize, Serialize};

use super::{Answer, Backend, BackendOutput, InferenceError, ModelProfile, Prompt, TemplateExtractor};
use crate::ingest::FramePayload;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum WirePayload {
    /// `source#seq` handle the service can resolve itself.
    Ref(String),
    Base64(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireQuestion {
    pub qid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireRequest {
    pub model_id: String,
    pub frame_payload: WirePayload,
    pub questions: Vec<WireQuestion>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WireAnswer {
    pub qid: String,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireResponse {
    pub answers: Vec<WireAnswer>,
    pub latency_ms: f64,
}

/// Client for a question-answering service speaking JSON over `POST /infer`.
/// No connection is made until the first call.
pub struct RemoteBackend {
    endpoint: String,
    extractor: TemplateExtractor,
    agent: OnceLock<ureq::Agent>,
}

impl RemoteBackend {
    pub fn new(endpoint: impl Into<String>, extractor: TemplateExtractor) -> Self {
        Self {
            endpoint: endpoint.into().trim_end_matches('/').to_string(),
            extractor,
            agent: OnceLock::new(),
        }
    }

    pub fn request(prompt: &Prompt) -> WireRequest {
        let frame_payload = match &prompt.frame.payload {
            FramePayload::Spec(_) => WirePayload::Ref(prompt.frame.payload_ref()),
            FramePayload::Image(bytes) => {
                WirePayload::Base64(base64::engine::general_purpose::STANDARD.encode(bytes.as_slice()))
            }
        };
        WireRequest {
            model_id: prompt.model_id.clone(),
            frame_payload,
            questions: prompt
                .questions
                .iter()
                .map(|q| WireQuestion {
                    qid: q.qid.clone(),
                    text: q.text.clone(),
                })
                .collect(),
        }
    }
}

impl Backend for RemoteBackend {
    fn answer(&self, profile: &ModelProfile, prompt: &Prompt) -> Result<BackendOutput, InferenceError> {
        let limit_ms = 10.0 * profile.latency_ms(prompt.expected_tokens());
        let agent = self.agent.get_or_init(|| ureq::Agent::config_builder().http_status_as_error(true).build().into());
        let unavailable = |msg: String| InferenceError::BackendUnavailable {
            model: profile.model_id.clone(),
            msg,
        };
        let started = Instant::now();
        let result = agent
            .post(format!("{}/infer", self.endpoint))
            .config()
            .timeout_global(Some(Duration::from_secs_f64((limit_ms / 1000.0).max(0.001))))
            .build()
            .send_json(Self::request(prompt));
        let mut resp = match result {
            Ok(r) => r,
            Err(ureq::Error::Timeout(_)) => {
                return Err(InferenceError::Timeout {
                    model: profile.model_id.clone(),
                    limit_ms,
                })
            }
            Err(e) => return Err(unavailable(e.to_string())),
        };
        let body: WireResponse = resp
            .body_mut()
            .read_json()
            .map_err(|e| unavailable(format!("bad response body: {e}")))?;
        let elapsed_ms = started.elapsed().as_secs_f64() * 1000.0;
        let latency_ms = body.latency_ms.max(0.0);
        if latency_ms > limit_ms || elapsed_ms > limit_ms {
            return Err(InferenceError::Timeout {
                model: profile.model_id.clone(),
                limit_ms,
            });
        }
        let answers = prompt
            .questions
            .iter()
            .map(|q| {
                let text = body
                    .answers
                    .iter()
                    .find(|a| a.qid == q.qid)
                    .map(|a| a.text.clone())
                    .unwrap_or_default();
                Answer {
                    qid: q.qid.clone(),
                    facts: self.extractor.extract(&q.target, &text),
                    text,
                }
            })
            .collect();
        Ok(BackendOutput {
            answers,
            latency_ms,
            measured: true,
        })
    }
}

#[cfg(test)]
mod tests {
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::Arc;

    use super::*;
    use crate::clock::{Clock, VirtualClock};
    use crate::inference::tests::{frame, profile, question};
    use crate::inference::{InferenceEngine, Tier};
    use crate::knowledge::parse_kb;
    use crate::triple::Object;

    /// Serves one canned `/infer` response and hands back the request body.
    fn one_shot(reply: WireResponse) -> (String, std::thread::JoinHandle<WireRequest>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let addr = format!("http://{}", listener.local_addr().unwrap());
        let h = std::thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut body = vec![0; len];
            reader.read_exact(&mut body).unwrap();
            let out = serde_json::to_string(&reply).unwrap();
            let mut w = stream;
            write!(w, "HTTP/1.1 200 OK\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{}", out.len(), out).unwrap();
            serde_json::from_slice(&body).unwrap()
        });
        (addr, h)
    }

    #[test]
    fn round_trip_through_wire_protocol() {
        let kb = parse_kb(
            "kb t; version 1\nentity_type person\nattribute person lying_on\nextract lying_on \"(?P<s>person\\d+) is lying on the (?P<o>\\w+)\"\n",
        )
        .unwrap();
        let (addr, server) = one_shot(WireResponse {
            answers: vec![WireAnswer {
                qid: "q1".into(),
                text: "person1 is lying on the road".into(),
            }],
            latency_ms: 42.0,
        });
        let clock = Arc::new(VirtualClock::new());
        let mut e = InferenceEngine::new(clock.clone());
        e.register_backend(
            profile("far", Tier::Heavyweight, 100.0, 1.0, &["lying_on"]),
            Arc::new(RemoteBackend::new(addr, TemplateExtractor::from_kb(&kb))),
        )
        .unwrap();
        let p = Prompt::new(frame(7, vec![]), vec![question("q1", "person", "lying_on", 5)], "far").unwrap();
        let r = e.infer(&p).unwrap();
        let req = server.join().unwrap();
        assert_eq!(req.frame_payload, WirePayload::Ref("s#7".into()));
        assert_eq!(req.questions[0].qid, "q1");
        assert_eq!(r.answers[0].facts.len(), 1);
        assert_eq!(r.answers[0].facts[0].object, Object::Value("road".into()));
        assert_eq!(r.simulated_latency_ms, 42.0);
        assert_eq!(clock.now_us(), 42_000, "virtual clock charged with reported latency");
    }

    #[test]
    fn reported_latency_beyond_limit_is_timeout() {
        let (addr, server) = one_shot(WireResponse {
            answers: vec![],
            latency_ms: 5_000.0,
        });
        let backend = RemoteBackend::new(addr, TemplateExtractor::default());
        let p = Prompt::new(frame(0, vec![]), vec![question("q", "*", "*", 1)], "far").unwrap();
        let err = backend
            .answer(&profile("far", Tier::Heavyweight, 10.0, 0.0, &[]), &p)
            .unwrap_err();
        server.join().unwrap();
        assert!(matches!(err, InferenceError::Timeout { limit_ms, .. } if limit_ms == 100.0));
    }
}
