use std::path::Path;
use std::sync::Arc;

use framekg::bench::fact_coverage;
use framekg::ingest::{parse_scenario, FrameSpec, GroundTruthEvent, StepTemplate};
use framekg::knowledge::{init_kb, KnowledgeBase};
use framekg::query::{evaluate_standing, parse_standing, MatchState, QueryBody, UserQuery};
use framekg::triple::Provenance;
use framekg::{Entity, Fact, Object, Scenario, SemanticTriple};
use proptest::prelude::*;

fn kb() -> KnowledgeBase {
    init_kb(Path::new(env!("CARGO_MANIFEST_DIR")).join("data/traffic.kb")).unwrap()
}

const STEPS: [&str; 6] = [
    "(vehicle?v collided_with person?p)",
    "(?p lying_on *)",
    "(?v fleeing *)",
    "(vehicle stopped roadside)",
    "(person crowding *)",
    "(* damaged *)",
];

fn pattern_text(steps: &[usize], gaps: &[u64]) -> String {
    let mut s = String::from("standing prop:");
    for (i, &k) in steps.iter().enumerate() {
        s.push(' ');
        s.push_str(STEPS[k]);
        if i + 1 < steps.len() {
            s.push_str(&format!(" then<{}ms>", gaps[i]));
        }
    }
    s
}

const WHO: [(&str, &str); 4] = [("car1", "vehicle"), ("car2", "vehicle"), ("p1", "person"), ("p2", "person")];
const PREDS: [&str; 6] = ["collided_with", "lying_on", "fleeing", "stopped", "crowding", "damaged"];

fn stream(spec: &[(usize, usize, usize, u64)]) -> Vec<SemanticTriple> {
    let mut t = 0;
    spec.iter()
        .enumerate()
        .map(|(i, &(s, p, o, dt))| {
            t += dt;
            let (sid, skind) = WHO[s];
            let object = if o < WHO.len() {
                Object::Entity(Entity::new(WHO[o].0, WHO[o].1))
            } else {
                Object::Value("road".into())
            };
            SemanticTriple {
                id: i as u64 + 1,
                subject: Entity::new(sid, skind),
                predicate: PREDS[p].into(),
                object,
                confidence: 1.0,
                observed_at_ms: t,
                source: Provenance {
                    frame_seq: i as u64,
                    model_id: "prop".into(),
                },
                epoch: 0,
                boxes: None,
            }
        })
        .collect()
}

fn triple_spec() -> impl Strategy<Value = Vec<(usize, usize, usize, u64)>> {
    prop::collection::vec((0..WHO.len(), 0..PREDS.len(), 0..=WHO.len(), 0u64..4000), 0..40)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn standing_patterns_round_trip_through_text(
        steps in prop::collection::vec(0..STEPS.len(), 1..4),
        gaps in prop::collection::vec(1u64..30_000, 3),
    ) {
        let kb = kb();
        let p = parse_standing(&pattern_text(&steps, &gaps), &kb).unwrap();
        let again = parse_standing(&p.to_string(), &kb).unwrap();
        prop_assert_eq!(p, again);
    }

    #[test]
    fn chunking_does_not_change_alerts(
        steps in prop::collection::vec(0..STEPS.len(), 1..4),
        gaps in prop::collection::vec(1000u64..20_000, 3),
        spec in triple_spec(),
        cuts in prop::collection::vec(0usize..40, 0..6),
    ) {
        let kb = kb();
        let q = vec![UserQuery::new("q", QueryBody::Standing(parse_standing(&pattern_text(&steps, &gaps), &kb).unwrap()), "")];
        let triples = stream(&spec);
        let whole = evaluate_standing(&triples, &q, &mut MatchState::new());
        let mut cuts: Vec<usize> = cuts.into_iter().map(|c| c.min(triples.len())).collect();
        cuts.push(0);
        cuts.push(triples.len());
        cuts.sort();
        let mut st = MatchState::new();
        let mut pieces = Vec::new();
        for w in cuts.windows(2) {
            pieces.extend(evaluate_standing(&triples[w[0]..w[1]], &q, &mut st));
        }
        prop_assert_eq!(&whole, &pieces);
        prop_assert!(evaluate_standing(&triples, &q, &mut st).is_empty());
    }

    #[test]
    fn coverage_is_bounded_and_monotone(spec in triple_spec(), keep in prop::collection::vec(any::<bool>(), 40)) {
        let event = GroundTruthEvent {
            event_type: "hit_and_run".into(),
            start_s: 0.0,
            end_s: 100.0,
            required_steps: ["vehicle:collided_with:person", "person:lying_on:*", "vehicle:fleeing:*"]
                .iter()
                .map(|s| StepTemplate::parse(s).unwrap())
                .collect(),
        };
        let all = stream(&spec);
        let some: Vec<SemanticTriple> = all.iter().zip(&keep).filter(|(_, k)| **k).map(|(t, _)| t.clone()).collect();
        let full = fact_coverage(&all, &event);
        let part = fact_coverage(&some, &event);
        prop_assert!((0.0..=1.0).contains(&full.ordered) && (0.0..=1.0).contains(&full.unordered));
        prop_assert!(full.ordered <= full.unordered);
        prop_assert!(part.ordered <= full.ordered && part.unordered <= full.unordered);
    }

    #[test]
    fn scenarios_round_trip_through_text(
        fps in 1u32..30,
        frames in prop::collection::vec(
            (prop::collection::vec((0..WHO.len(), 0..PREDS.len(), 0..=WHO.len()), 0..4), 0u32..100, 0u32..100),
            1..30,
        ),
    ) {
        let entities: Vec<Entity> = WHO.iter().map(|(id, k)| Entity::new(*id, *k)).collect();
        let frames: Vec<Arc<FrameSpec>> = frames
            .into_iter()
            .enumerate()
            .map(|(seq, (facts, m, d))| {
                Arc::new(FrameSpec {
                    seq: seq as u64,
                    facts: facts
                        .into_iter()
                        .map(|(s, p, o)| {
                            let object = if o < WHO.len() { Object::Entity(entities[o].clone()) } else { Object::Value("road".into()) };
                            Fact::new(entities[s].clone(), PREDS[p], object)
                        })
                        .collect(),
                    motion_score: m as f64 / 100.0,
                    scene_detail_score: d as f64 / 100.0,
                })
            })
            .collect();
        let sc = Scenario {
            id: "prop".into(),
            fps,
            duration_s: frames.len() as f64 / fps as f64,
            version: 1,
            entities,
            frames,
            events: vec![],
        };
        let back = parse_scenario(&sc.to_scn()).unwrap();
        prop_assert_eq!(back.frames, sc.frames);
        prop_assert_eq!(back.fps, sc.fps);
        prop_assert_eq!(back.entities, sc.entities);
    }
}
