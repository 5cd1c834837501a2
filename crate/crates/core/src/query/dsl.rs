//! Query text parsing.
//!
//! ```text
//! standing <name>: (<s> <p> <o>) [then<gap> (<s> <p> <o>)]*
//! interactive <free text> [window=<dur>] [about=<entity>]* [focus=<predicate>]
//! ```
//!
//! A term is `*`, an entity type, `type?var`, `?var`, or an entity id /
//! literal value. Plain sentences are mapped through the KB synonym table:
//! alerting verbs make a one-step standing query, anything else is an
//! unfiltered interactive question.

use super::interactive::InteractiveQuery;
use super::standing::{EventPattern, PatternStep};
use super::{QueryBody, QueryError};
use crate::knowledge::KnowledgeBase;
use crate::textfmt::parse_duration_ms;
use crate::triple::{Term, TriplePattern};

const ALERT_WORDS: &[&str] = &["alert", "inform", "notify", "warn", "when", "upon", "whenever"];

/// Parses DSL text, falling back to the keyword mapper for plain sentences.
pub fn parse(input: &str, kb: &KnowledgeBase) -> Result<QueryBody, QueryError> {
    let trimmed = input.trim();
    let head = trimmed.split_whitespace().next().unwrap_or_default();
    match head {
        "" => Err(QueryError::Parse("empty query".into())),
        "standing" => parse_standing(trimmed, kb).map(QueryBody::Standing),
        "interactive" => parse_interactive(trimmed, kb).map(QueryBody::Interactive),
        _ => map_keywords(trimmed, kb),
    }
}

pub fn parse_standing(src: &str, kb: &KnowledgeBase) -> Result<EventPattern, QueryError> {
    let rest = src
        .trim()
        .strip_prefix("standing")
        .ok_or_else(|| QueryError::Parse("expected `standing`".into()))?;
    let (name, mut rest) = rest
        .split_once(':')
        .ok_or_else(|| QueryError::Parse("expected `standing <name>: ...`".into()))?;
    let name = name.trim();
    if name.is_empty() || name.contains(char::is_whitespace) {
        return Err(QueryError::Parse(format!("bad pattern name `{name}`")));
    }
    let mut steps: Vec<PatternStep> = Vec::new();
    loop {
        rest = rest.trim_start();
        let body = rest
            .strip_prefix('(')
            .ok_or_else(|| QueryError::Parse(format!("expected `(` at `{}`", excerpt(rest))))?;
        let close = body
            .find(')')
            .ok_or_else(|| QueryError::Parse("unclosed `(`".into()))?;
        steps.push(PatternStep {
            matcher: parse_step(&body[..close], kb)?,
            max_gap_ms: None,
        });
        rest = body[close + 1..].trim_start();
        if rest.is_empty() {
            break;
        }
        let after = rest
            .strip_prefix("then")
            .map(str::trim_start)
            .and_then(|r| r.strip_prefix('<'))
            .ok_or_else(|| QueryError::Parse(format!("expected `then<gap>` at `{}`", excerpt(rest))))?;
        let end = after
            .find('>')
            .ok_or_else(|| QueryError::Parse("unclosed `then<`".into()))?;
        let gap = parse_duration_ms(after[..end].trim())
            .filter(|g| *g > 0)
            .ok_or_else(|| QueryError::Parse(format!("bad gap `{}`", &after[..end])))?;
        steps.last_mut().expect("one step parsed").max_gap_ms = Some(gap);
        rest = &after[end + 1..];
    }
    EventPattern::new(name, steps)
}

fn excerpt(s: &str) -> &str {
    let end = s.char_indices().nth(20).map(|(i, _)| i).unwrap_or(s.len());
    &s[..end]
}

fn parse_step(body: &str, kb: &KnowledgeBase) -> Result<TriplePattern, QueryError> {
    let parts: Vec<&str> = body.split_whitespace().collect();
    let [s, p, o] = parts[..] else {
        return Err(QueryError::Parse(format!("step `({body})` needs exactly three terms")));
    };
    if !kb.has_predicate(p) {
        return Err(QueryError::UnknownPredicate(p.to_string()));
    }
    Ok(TriplePattern {
        subject: parse_term(s, kb)?,
        predicate: Some(p.to_string()),
        object: parse_term(o, kb)?,
    })
}

fn parse_term(tok: &str, kb: &KnowledgeBase) -> Result<Term, QueryError> {
    if tok == "*" {
        return Ok(Term::Any);
    }
    if let Some((kind, var)) = tok.split_once('?') {
        if var.is_empty() || !var.chars().all(|c| c.is_alphanumeric() || c == '_') {
            return Err(QueryError::Parse(format!("bad variable `{tok}`")));
        }
        let kind = if kind.is_empty() {
            None
        } else if kb.has_type(kind) {
            Some(kind.to_string())
        } else {
            return Err(QueryError::UnknownType(kind.to_string()));
        };
        return Ok(Term::Var {
            name: var.to_string(),
            kind,
        });
    }
    if kb.has_type(tok) {
        Ok(Term::Kind(tok.to_string()))
    } else {
        Ok(Term::Id(tok.to_string()))
    }
}

pub fn parse_interactive(src: &str, kb: &KnowledgeBase) -> Result<InteractiveQuery, QueryError> {
    let rest = src
        .trim()
        .strip_prefix("interactive")
        .ok_or_else(|| QueryError::Parse("expected `interactive`".into()))?;
    let mut q = InteractiveQuery::default();
    let text = apply_options(&mut q, rest, kb)?;
    q.text = text;
    Ok(q)
}

/// Applies `window=`, `about=` and `focus=` options from `src` to `q` and
/// returns the remaining free text.
pub(crate) fn apply_options(q: &mut InteractiveQuery, src: &str, kb: &KnowledgeBase) -> Result<String, QueryError> {
    let mut words = Vec::new();
    for tok in src.split_whitespace() {
        match tok.split_once('=') {
            Some(("window", v)) => {
                let ms = parse_duration_ms(v)
                    .filter(|ms| *ms > 0)
                    .ok_or_else(|| QueryError::Parse(format!("bad window `{v}`")))?;
                q.window_ms = Some(ms);
            }
            Some(("about", v)) => {
                for e in v.split(',').filter(|e| !e.is_empty()) {
                    if !q.about.iter().any(|a| a == e) {
                        q.about.push(e.to_string());
                    }
                }
            }
            Some(("focus", v)) => {
                for p in v.split(',').filter(|p| !p.is_empty()) {
                    if !kb.has_predicate(p) {
                        return Err(QueryError::UnknownPredicate(p.to_string()));
                    }
                    if !q.focus.iter().any(|f| f == p) {
                        q.focus.push(p.to_string());
                    }
                }
            }
            Some((k, _)) if !k.is_empty() && k.chars().all(|c| c.is_ascii_lowercase()) => {
                return Err(QueryError::Parse(format!("unknown option `{k}`")));
            }
            _ => words.push(tok),
        }
    }
    Ok(words.join(" "))
}

fn normalize(word: &str) -> String {
    word.trim_matches(|c: char| !c.is_alphanumeric() && c != '_')
        .to_lowercase()
}

/// Predicate or type named by a word, directly or through a synonym.
fn lookup<'a>(kb: &'a KnowledgeBase, word: &str) -> Option<&'a str> {
    let candidates = [word.to_string(), word.strip_suffix('s').unwrap_or(word).to_string()];
    for c in &candidates {
        if let Some(t) = kb.entity_types.get(c.as_str()) {
            return Some(t);
        }
        if let Some(p) = kb.predicates().iter().find(|p| p == &c) {
            return Some(p);
        }
        if let Some(t) = kb.synonyms.get(c.as_str()) {
            return Some(t);
        }
    }
    None
}

fn map_keywords(sentence: &str, kb: &KnowledgeBase) -> Result<QueryBody, QueryError> {
    let words: Vec<String> = sentence.split_whitespace().map(normalize).filter(|w| !w.is_empty()).collect();
    if !words.iter().any(|w| ALERT_WORDS.contains(&w.as_str())) {
        return Ok(QueryBody::Interactive(InteractiveQuery {
            text: sentence.to_string(),
            ..Default::default()
        }));
    }
    let mut kinds: Vec<&str> = Vec::new();
    let mut predicate = None;
    for w in &words {
        match lookup(kb, w) {
            Some(t) if kb.has_type(t) => {
                if !kinds.contains(&t) {
                    kinds.push(t);
                }
            }
            Some(p) if predicate.is_none() => predicate = Some(p),
            _ => {}
        }
    }
    let predicate = predicate.ok_or_else(|| {
        QueryError::Parse(format!("no known relation or attribute mentioned in `{sentence}`"))
    })?;
    let subject_kinds = kb.subject_kinds(predicate);
    let object_kinds = kb.object_kinds(predicate);
    let subject = kinds
        .iter()
        .find(|k| subject_kinds.contains(k))
        .or_else(|| subject_kinds.first())
        .map(|k| Term::Kind(k.to_string()))
        .unwrap_or(Term::Any);
    let object = kinds
        .iter()
        .find(|k| object_kinds.contains(k) && Some(**k) != subject.kind())
        .or_else(|| kinds.iter().find(|k| object_kinds.contains(k)))
        .map(|k| Term::Kind(k.to_string()))
        .unwrap_or(Term::Any);
    let name = match (&subject, &object) {
        (Term::Kind(s), Term::Kind(o)) => format!("{s}_{predicate}_{o}"),
        (Term::Kind(s), _) => format!("{s}_{predicate}"),
        _ => predicate.to_string(),
    };
    let pattern = EventPattern::new(
        name,
        vec![PatternStep {
            matcher: TriplePattern {
                subject,
                predicate: Some(predicate.to_string()),
                object,
            },
            max_gap_ms: None,
        }],
    )?;
    Ok(QueryBody::Standing(pattern))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::kb::tests::mini;

    #[test]
    fn three_step_hit_and_run() {
        let kb = mini();
        let p = parse_standing(
            "standing hit_and_run: (vehicle collided_with person) then<10s> (person lying_on *) then<15s> (vehicle fleeing *)",
            &kb,
        )
        .unwrap();
        assert_eq!(p.name, "hit_and_run");
        assert_eq!(p.steps.len(), 3);
        assert_eq!(p.steps[0].max_gap_ms, Some(10_000));
        assert_eq!(p.steps[1].max_gap_ms, Some(15_000));
        assert_eq!(p.steps[2].max_gap_ms, None);
        assert_eq!(p.window_ms, 25_000);
        assert_eq!(p.steps[0].matcher.subject, Term::Kind("vehicle".into()));
        assert_eq!(p.steps[1].matcher.object, Term::Any);
    }

    #[test]
    fn variables_and_ids() {
        let kb = mini();
        let p = parse_standing("standing x: (vehicle?v collided_with person1) then<2s> (?v fleeing north)", &kb).unwrap();
        assert_eq!(
            p.steps[0].matcher.subject,
            Term::Var {
                name: "v".into(),
                kind: Some("vehicle".into())
            }
        );
        assert_eq!(p.steps[0].matcher.object, Term::Id("person1".into()));
        assert_eq!(p.steps[1].matcher.subject, Term::Var { name: "v".into(), kind: None });
    }

    #[test]
    fn display_round_trips() {
        let kb = mini();
        let src = "standing hit_and_run: (vehicle?v collided_with person?p) then<10s> (?p lying_on *) then<1500ms> (?v fleeing *)";
        let p = parse_standing(src, &kb).unwrap();
        let again = parse_standing(&p.to_string(), &kb).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn misspelled_predicate_is_named() {
        let err = parse_standing("standing x: (vehicle colided_with person)", &mini()).unwrap_err();
        assert_eq!(err, QueryError::UnknownPredicate("colided_with".into()));
    }

    #[test]
    fn malformed_patterns() {
        let kb = mini();
        for bad in [
            "standing : (a fleeing b)",
            "standing x (vehicle fleeing *)",
            "standing x: (vehicle fleeing)",
            "standing x: (vehicle fleeing *) then (person lying_on *)",
            "standing x: (vehicle fleeing *) then<0s> (person lying_on *)",
            "standing x: (vehicle fleeing *",
            "standing x: (plane?p fleeing *)",
        ] {
            assert!(parse_standing(bad, &kb).is_err(), "{bad}");
        }
    }

    #[test]
    fn interactive_maps_options() {
        let kb = mini();
        let q = parse_interactive("interactive what happened window=60s about=person1", &kb).unwrap();
        assert_eq!(q.text, "what happened");
        assert_eq!(q.window_ms, Some(60_000));
        assert_eq!(q.about, vec!["person1"]);
        assert!(q.focus.is_empty());
        assert_eq!(
            parse_interactive("interactive x focus=flying", &kb).unwrap_err(),
            QueryError::UnknownPredicate("flying".into())
        );
        assert!(parse_interactive("interactive x window=abc", &kb).is_err());
    }

    #[test]
    fn sentences_map_through_synonyms() {
        let kb = mini();
        let QueryBody::Standing(p) = parse(
            "Raise an alert when there is an accident involving collision between vehicles and people.",
            &kb,
        )
        .unwrap() else {
            panic!("expected a standing query")
        };
        assert_eq!(p.steps.len(), 1);
        assert_eq!(p.steps[0].matcher.to_string(), "(vehicle collided_with person)");
        assert!(matches!(parse("what happened on the road", &kb).unwrap(), QueryBody::Interactive(_)));
        assert!(parse("alert me about the weather", &kb).is_err());
    }
}
