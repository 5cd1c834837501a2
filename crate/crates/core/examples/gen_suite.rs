//! Regenerates the shipped scenario suite under `data/suite/`.
//!
//! ```text
//! cargo run -p framekg --example gen_suite [-- <out_dir>]
//! ```
//!
//! Each scenario is a list of facts with visibility intervals plus the
//! ground-truth events they make up. Frames are sampled at 24 fps.

use std::path::PathBuf;
use std::sync::Arc;

use framekg::ingest::{FrameSpec, GroundTruthEvent, StepTemplate};
use framekg::{Entity, Fact, Object, Scenario};

const FPS: u32 = 24;

struct Shot {
    subject: &'static str,
    predicate: &'static str,
    object: &'static str,
    from_s: f64,
    to_s: f64,
}

fn shot(subject: &'static str, predicate: &'static str, object: &'static str, from_s: f64, to_s: f64) -> Shot {
    Shot {
        subject,
        predicate,
        object,
        from_s,
        to_s,
    }
}

struct Script {
    id: &'static str,
    duration_s: u32,
    entities: &'static [(&'static str, &'static str)],
    shots: Vec<Shot>,
    events: Vec<(&'static str, f64, f64, &'static [&'static str])>,
}

const HIT_AND_RUN: &[&str] = &["vehicle:collided_with:person", "person:lying_on:*", "vehicle:fleeing:*"];
const V2V: &[&str] = &["vehicle:collided_with:vehicle", "vehicle:damaged:*"];
const V2P: &[&str] = &["vehicle:collided_with:person", "person:lying_on:*", "vehicle:stopped:*"];
const COMMOTION: &[&str] = &["person:arguing_with:person", "person:pushed:person", "person:crowding:*"];

fn background(duration_s: u32) -> Vec<Shot> {
    let d = duration_s as f64;
    vec![
        shot("walker1", "walking", "sidewalk", 0.0, d),
        shot("car9", "driving", "road", 0.0, d * 0.6),
    ]
}

fn scripts() -> Vec<Script> {
    let mut out = Vec::new();

    // Two hit-and-runs; the second collision is on screen for a single frame.
    let mut shots = background(8);
    shots.extend([
        shot("car1", "collided_with", "person1", 1.0, 1.5),
        shot("person1", "lying_on", "road", 1.5, 3.5),
        shot("car1", "fleeing", "north", 2.0, 3.0),
        shot("car2", "collided_with", "person2", 5.0, 5.04),
        shot("person2", "lying_on", "road", 5.1, 7.5),
        shot("car2", "fleeing", "east", 6.0, 6.5),
    ]);
    out.push(Script {
        id: "hit_and_run_1",
        duration_s: 8,
        entities: &[
            ("walker1", "person"),
            ("car9", "vehicle"),
            ("car1", "vehicle"),
            ("person1", "person"),
            ("car2", "vehicle"),
            ("person2", "person"),
        ],
        shots,
        events: vec![("hit_and_run", 0.5, 3.5, HIT_AND_RUN), ("hit_and_run", 4.5, 7.5, HIT_AND_RUN)],
    });

    let mut shots = background(8);
    shots.extend([
        shot("van1", "collided_with", "person1", 2.0, 2.5),
        shot("person1", "lying_on", "road", 2.5, 6.0),
        shot("van1", "fleeing", "south", 3.5, 4.5),
    ]);
    out.push(Script {
        id: "hit_and_run_2",
        duration_s: 8,
        entities: &[("walker1", "person"), ("car9", "vehicle"), ("van1", "vehicle"), ("person1", "person")],
        shots,
        events: vec![("hit_and_run", 0.5, 6.0, HIT_AND_RUN)],
    });

    let mut shots = background(16);
    shots.extend([
        shot("car1", "collided_with", "car2", 2.0, 2.6),
        shot("car1", "damaged", "dent", 2.6, 5.5),
        shot("car3", "collided_with", "car4", 10.0, 10.5),
        shot("car3", "damaged", "dent", 10.5, 13.0),
    ]);
    out.push(Script {
        id: "v2v_collision_1",
        duration_s: 16,
        entities: &[
            ("walker1", "person"),
            ("car9", "vehicle"),
            ("car1", "vehicle"),
            ("car2", "vehicle"),
            ("car3", "vehicle"),
            ("car4", "vehicle"),
        ],
        shots,
        events: vec![("v2v_collision", 1.0, 6.0, V2V), ("v2v_collision", 9.0, 15.0, V2V)],
    });

    // The wreck stays locked together and burns for most of the clip.
    let mut shots = background(16);
    shots.extend([
        shot("car1", "collided_with", "car2", 4.0, 14.0),
        shot("car1", "damaged", "fire", 5.0, 15.0),
    ]);
    out.push(Script {
        id: "v2v_collision_2",
        duration_s: 16,
        entities: &[("walker1", "person"), ("car9", "vehicle"), ("car1", "vehicle"), ("car2", "vehicle")],
        shots,
        events: vec![("v2v_collision", 3.0, 15.0, V2V)],
    });

    let mut shots = background(48);
    shots.extend([
        shot("bus1", "collided_with", "person1", 21.0, 21.5),
        shot("person1", "lying_on", "road", 21.5, 34.0),
        shot("bus1", "stopped", "roadside", 22.0, 34.0),
    ]);
    out.push(Script {
        id: "v2p_collision_1",
        duration_s: 48,
        entities: &[("walker1", "person"), ("car9", "vehicle"), ("bus1", "vehicle"), ("person1", "person")],
        shots,
        events: vec![("v2p_collision", 20.0, 35.0, V2P)],
    });

    let mut shots = background(26);
    shots.extend([
        shot("person1", "arguing_with", "person2", 6.0, 9.0),
        shot("person1", "pushed", "person2", 9.0, 10.0),
        shot("person3", "crowding", "parking_lot", 10.0, 18.0),
        shot("person4", "crowding", "parking_lot", 11.0, 18.0),
    ]);
    out.push(Script {
        id: "commotion_1",
        duration_s: 26,
        entities: &[
            ("walker1", "person"),
            ("car9", "vehicle"),
            ("person1", "person"),
            ("person2", "person"),
            ("person3", "person"),
            ("person4", "person"),
        ],
        shots,
        events: vec![("commotion", 5.0, 20.0, COMMOTION)],
    });
    out
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

fn render(s: &Script) -> Scenario {
    let entities: Vec<Entity> = s.entities.iter().map(|(id, kind)| Entity::new(*id, *kind)).collect();
    let lookup = |id: &str| entities.iter().find(|e| e.id == id).cloned();
    let n = s.duration_s as u64 * FPS as u64;
    let frames = (0..n)
        .map(|seq| {
            let t = seq as f64 / FPS as f64;
            let facts: Vec<Fact> = s
                .shots
                .iter()
                .filter(|sh| sh.from_s <= t && t < sh.to_s)
                .map(|sh| {
                    let subject = lookup(sh.subject).expect("declared subject");
                    let object = match lookup(sh.object) {
                        Some(e) => Object::Entity(e),
                        None => Object::Value(sh.object.into()),
                    };
                    Fact::new(subject, sh.predicate, object)
                })
                .collect();
            let in_event = s.events.iter().any(|(_, a, b, _)| *a <= t && t <= *b);
            let base = if in_event { 0.7 } else { 0.2 };
            Arc::new(FrameSpec {
                seq,
                motion_score: round2(base + 0.1 * (t * 1.3).sin().abs()),
                scene_detail_score: round2((0.2 + 0.1 * facts.len() as f64).min(1.0)),
                facts,
            })
        })
        .collect();
    let events = s
        .events
        .iter()
        .map(|(kind, a, b, steps)| GroundTruthEvent {
            event_type: kind.to_string(),
            start_s: *a,
            end_s: *b,
            required_steps: steps.iter().map(|st| StepTemplate::parse(st).expect("step template")).collect(),
        })
        .collect();
    Scenario {
        id: s.id.into(),
        fps: FPS,
        duration_s: s.duration_s as f64,
        version: 1,
        entities,
        frames,
        events,
    }
}

fn main() -> std::io::Result<()> {
    let out: PathBuf = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data/suite"));
    std::fs::create_dir_all(&out)?;
    for s in scripts() {
        let sc = render(&s);
        let text = sc.to_scn();
        framekg::ingest::parse_scenario(&text).expect("generated scenario parses");
        let path = out.join(format!("{}.scn", s.id));
        std::fs::write(&path, text)?;
        println!("{} ({} frames, {} events)", path.display(), sc.frames.len(), sc.events.len());
    }
    Ok(())
}
