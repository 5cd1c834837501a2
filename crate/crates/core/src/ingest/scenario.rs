use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::textfmt::{self, header_fields, quote, Line};
use crate::triple::{BBox, Entity, Fact, Object, SemanticTriple};

pub const SCENARIO_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error{}: field `{field}`: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema {
        line: Option<usize>,
        field: String,
        msg: String,
    },
    #[error("cannot read scenario {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl ScenarioError {
    fn parse(line: &Line, msg: impl Into<String>) -> Self {
        ScenarioError::Parse {
            line: line.no,
            msg: msg.into(),
        }
    }

    fn schema(line: Option<usize>, field: &str, msg: impl Into<String>) -> Self {
        ScenarioError::Schema {
            line,
            field: field.to_string(),
            msg: msg.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameSpec {
    pub seq: u64,
    pub facts: Vec<Fact>,
    pub motion_score: f64,
    pub scene_detail_score: f64,
}

/// One position of a ground-truth step: `*`, an entity type, an entity id or a value.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepTemplate {
    pub subject: String,
    pub predicate: String,
    pub object: String,
}

impl StepTemplate {
    pub fn parse(s: &str) -> Option<Self> {
        let mut it = s.split(':');
        let (subject, predicate, object) = (it.next()?, it.next()?, it.next()?);
        if it.next().is_some() || [subject, predicate, object].iter().any(|t| t.is_empty()) {
            return None;
        }
        Some(Self {
            subject: subject.into(),
            predicate: predicate.into(),
            object: object.into(),
        })
    }

    pub fn matches(&self, t: &SemanticTriple) -> bool {
        fn term(pat: &str, key: &str, kind: Option<&str>) -> bool {
            pat == "*" || pat == key || Some(pat) == kind
        }
        self.predicate == t.predicate
            && term(&self.subject, &t.subject.id, Some(&t.subject.kind))
            && term(&self.object, t.object.key(), t.object.kind())
    }
}

impl std::fmt::Display for StepTemplate {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}:{}", self.subject, self.predicate, self.object)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthEvent {
    pub event_type: String,
    pub start_s: f64,
    pub end_s: f64,
    pub required_steps: Vec<StepTemplate>,
}

impl GroundTruthEvent {
    pub fn start_ms(&self) -> u64 {
        (self.start_s * 1000.0).round() as u64
    }

    pub fn end_ms(&self) -> u64 {
        (self.end_s * 1000.0).round() as u64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub id: String,
    pub fps: u32,
    pub duration_s: f64,
    pub version: u32,
    /// Entity table in declaration order.
    pub entities: Vec<Entity>,
    pub frames: Vec<Arc<FrameSpec>>,
    pub events: Vec<GroundTruthEvent>,
}

impl Scenario {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn frame_count(&self) -> u64 {
        self.frames.len() as u64
    }

    /// Emission time of frame `seq` in stream milliseconds.
    pub fn timestamp_ms(&self, seq: u64) -> u64 {
        seq * 1000 / self.fps as u64
    }

    /// Renders the scenario back into its file format.
    pub fn to_scn(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "scenario {}; fps {}; duration {}; version {}",
            self.id, self.fps, self.duration_s, self.version
        );
        for e in &self.entities {
            let _ = writeln!(out, "entity {} {}", e.id, e.kind);
        }
        for ev in &self.events {
            let _ = write!(out, "event {} {} {}", ev.event_type, ev.start_s, ev.end_s);
            for s in &ev.required_steps {
                let _ = write!(out, " step={s}");
            }
            out.push('\n');
        }
        for f in &self.frames {
            let _ = writeln!(
                out,
                "frame {} motion={} detail={}",
                f.seq, f.motion_score, f.scene_detail_score
            );
            for fact in &f.facts {
                let _ = write!(
                    out,
                    "fact {} {} {}",
                    fact.subject.id,
                    fact.predicate,
                    quote(fact.object.key())
                );
                if let Some([a, b]) = &fact.boxes {
                    let _ = write!(
                        out,
                        " box={},{},{},{};{},{},{},{}",
                        a.x, a.y, a.w, a.h, b.x, b.y, b.w, b.h
                    );
                }
                out.push('\n');
            }
        }
        out
    }
}

pub fn load_scenario(path: impl AsRef<Path>) -> Result<Scenario, ScenarioError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| ScenarioError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_scenario(&src)
}

pub fn parse_scenario(src: &str) -> Result<Scenario, ScenarioError> {
    let lines = textfmt::lex(src).map_err(|e| ScenarioError::Parse {
        line: e.line,
        msg: e.msg,
    })?;
    let mut it = lines.iter();
    let header = it.next().ok_or_else(|| ScenarioError::Parse {
        line: 1,
        msg: "empty scenario file".into(),
    })?;
    if header.keyword() != "scenario" {
        return Err(ScenarioError::parse(header, "expected `scenario <id>; fps <n>; duration <s>; version 1` header"));
    }
    let fields = header_fields(&header.raw).map_err(|m| ScenarioError::parse(header, m))?;
    let field = |k: &str| {
        fields
            .iter()
            .find(|(key, _)| key == k)
            .map(|(_, v)| v.as_str())
            .ok_or_else(|| ScenarioError::parse(header, format!("header is missing `{k}`")))
    };
    let id = field("scenario")?.to_string();
    let fps: u32 = field("fps")?
        .parse()
        .map_err(|_| ScenarioError::parse(header, "fps must be a positive integer"))?;
    if fps == 0 {
        return Err(ScenarioError::schema(Some(header.no), "fps", "must be > 0"));
    }
    let duration_s: f64 = field("duration")?
        .parse()
        .map_err(|_| ScenarioError::parse(header, "duration must be a number of seconds"))?;
    if !(duration_s.is_finite() && duration_s >= 0.0) {
        return Err(ScenarioError::schema(Some(header.no), "duration", "must be a non-negative number"));
    }
    let version: u32 = field("version")?
        .parse()
        .map_err(|_| ScenarioError::parse(header, "version must be an integer"))?;
    if version != SCENARIO_VERSION {
        return Err(ScenarioError::schema(
            Some(header.no),
            "version",
            format!("unsupported version {version}"),
        ));
    }

    let mut entities: Vec<Entity> = Vec::new();
    let mut index: BTreeMap<String, usize> = BTreeMap::new();
    let mut events = Vec::new();
    let mut frames: Vec<FrameSpec> = Vec::new();

    for line in it {
        match line.keyword() {
            "entity" => {
                let (Some(eid), Some(kind)) = (line.arg(0), line.arg(1)) else {
                    return Err(ScenarioError::parse(line, "expected `entity <id> <type>`"));
                };
                if index.contains_key(eid) {
                    return Err(ScenarioError::schema(Some(line.no), "entity", format!("duplicate entity `{eid}`")));
                }
                index.insert(eid.to_string(), entities.len());
                entities.push(Entity::new(eid, kind));
            }
            "event" => events.push(parse_event(line, duration_s)?),
            "frame" => {
                let seq: u64 = line
                    .arg(0)
                    .and_then(|s| s.parse().ok())
                    .ok_or_else(|| ScenarioError::parse(line, "expected `frame <seq> motion=<f> detail=<f>`"))?;
                if seq != frames.len() as u64 {
                    return Err(ScenarioError::schema(
                        Some(line.no),
                        "frame.seq",
                        format!("expected seq {} (frames must be dense from 0), got {seq}", frames.len()),
                    ));
                }
                let motion = score(line, "motion")?;
                let detail = score(line, "detail")?;
                frames.push(FrameSpec {
                    seq,
                    facts: Vec::new(),
                    motion_score: motion,
                    scene_detail_score: detail,
                });
            }
            "fact" => {
                let frame = frames
                    .last_mut()
                    .ok_or_else(|| ScenarioError::parse(line, "fact before any frame line"))?;
                let (Some(s), Some(p), Some(o)) = (line.arg(0), line.arg(1), line.arg(2)) else {
                    return Err(ScenarioError::parse(line, "expected `fact <subject> <predicate> <object>`"));
                };
                let subject = index
                    .get(s)
                    .map(|&i| entities[i].clone())
                    .ok_or_else(|| ScenarioError::schema(Some(line.no), "fact.subject", format!("undeclared entity `{s}`")))?;
                let object = match index.get(o) {
                    Some(&i) => Object::Entity(entities[i].clone()),
                    None => Object::Value(o.to_string()),
                };
                let mut fact = Fact::new(subject, p, object);
                if let Some(b) = line.option("box") {
                    fact.boxes = Some(parse_boxes(b).ok_or_else(|| {
                        ScenarioError::schema(Some(line.no), "fact.box", "expected two normalized rectangles x,y,w,h;x,y,w,h")
                    })?);
                }
                frame.facts.push(fact);
            }
            other => return Err(ScenarioError::parse(line, format!("unknown record `{other}`"))),
        }
    }

    let expected = fps as f64 * duration_s;
    if (expected - expected.round()).abs() > 1e-6 {
        return Err(ScenarioError::schema(None, "duration", "fps * duration must be a whole number of frames"));
    }
    if frames.len() as u64 != expected.round() as u64 {
        return Err(ScenarioError::schema(
            None,
            "frames",
            format!("expected {} frames (fps * duration), found {}", expected.round(), frames.len()),
        ));
    }

    Ok(Scenario {
        id,
        fps,
        duration_s,
        version,
        entities,
        frames: frames.into_iter().map(Arc::new).collect(),
        events,
    })
}

fn score(line: &Line, key: &str) -> Result<f64, ScenarioError> {
    let raw = line
        .option(key)
        .ok_or_else(|| ScenarioError::parse(line, format!("frame is missing `{key}=`")))?;
    let v: f64 = raw
        .parse()
        .map_err(|_| ScenarioError::parse(line, format!("`{key}` is not a number")))?;
    if !(0.0..=1.0).contains(&v) {
        return Err(ScenarioError::schema(Some(line.no), key, "score must lie in [0, 1]"));
    }
    Ok(v)
}

fn parse_event(line: &Line, duration_s: f64) -> Result<GroundTruthEvent, ScenarioError> {
    let usage = "expected `event <type> <start_s> <end_s> step=<s:p:o>...`";
    let event_type = line.arg(0).ok_or_else(|| ScenarioError::parse(line, usage))?;
    let start_s: f64 = line.arg(1).and_then(|s| s.parse().ok()).ok_or_else(|| ScenarioError::parse(line, usage))?;
    let end_s: f64 = line.arg(2).and_then(|s| s.parse().ok()).ok_or_else(|| ScenarioError::parse(line, usage))?;
    if !(start_s <= end_s) {
        return Err(ScenarioError::schema(Some(line.no), "event", "start_s must not exceed end_s"));
    }
    if start_s < 0.0 || end_s > duration_s {
        return Err(ScenarioError::schema(
            Some(line.no),
            "event",
            format!("interval [{start_s}, {end_s}] lies outside [0, {duration_s}]"),
        ));
    }
    let required_steps = line
        .options("step")
        .map(|s| StepTemplate::parse(s).ok_or_else(|| ScenarioError::parse(line, format!("bad step template `{s}`"))))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GroundTruthEvent {
        event_type: event_type.to_string(),
        start_s,
        end_s,
        required_steps,
    })
}

fn parse_boxes(s: &str) -> Option<[BBox; 2]> {
    let mut rects = s.split(';').map(|r| {
        let v: Vec<f64> = r.split(',').map(|x| x.parse().ok()).collect::<Option<_>>()?;
        let [x, y, w, h] = v[..] else { return None };
        let b = BBox { x, y, w, h };
        b.is_normalized().then_some(b)
    });
    let a = rects.next()??;
    let b = rects.next()??;
    rects.next().is_none().then_some([a, b])
}
