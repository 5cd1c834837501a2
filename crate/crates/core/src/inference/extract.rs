use regex::Regex;

use super::QuestionTarget;
use crate::knowledge::KnowledgeBase;
use crate::triple::{Entity, Fact, Object};

struct Rule {
    predicate: String,
    regex: Regex,
    subject_kind: String,
    /// Entity type of the object for relations; `None` for attribute values.
    object_kind: Option<String>,
}

/// Turns free-text answers into facts with one regex per predicate.
/// Patterns use the named groups `s` (subject id) and optionally `o`.
#[derive(Default)]
pub struct TemplateExtractor {
    rules: Vec<Rule>,
}

impl TemplateExtractor {
    pub fn from_kb(kb: &KnowledgeBase) -> Self {
        let rules = kb
            .extractors
            .iter()
            .map(|(p, re)| Rule {
                predicate: p.clone(),
                regex: re.clone(),
                subject_kind: kb.subject_kinds(p).first().map(|s| s.to_string()).unwrap_or_default(),
                object_kind: kb.object_kinds(p).first().map(|s| s.to_string()),
            })
            .collect();
        Self { rules }
    }

    pub fn extract(&self, target: &QuestionTarget, text: &str) -> Vec<Fact> {
        let mut out = Vec::new();
        for rule in &self.rules {
            if target.predicate != "*" && target.predicate != rule.predicate {
                continue;
            }
            let kind = if target.kind != "*" && target.predicate != "*" {
                target.kind.clone()
            } else {
                rule.subject_kind.clone()
            };
            for caps in rule.regex.captures_iter(text) {
                let Some(s) = caps.name("s") else { continue };
                let o = caps.name("o").map(|m| m.as_str()).unwrap_or("yes");
                let object = match &rule.object_kind {
                    Some(k) => Object::Entity(Entity::new(o, k.clone())),
                    None => Object::Value(o.to_string()),
                };
                let fact = Fact::new(Entity::new(s.as_str(), kind.clone()), rule.predicate.clone(), object);
                if !out.contains(&fact) {
                    out.push(fact);
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::knowledge::parse_kb;

    #[test]
    fn extracts_relation_and_attribute_facts() {
        let kb = parse_kb(
            r#"kb t; version 1
entity_type person vehicle
attribute vehicle fleeing
relation vehicle collided_with person
extract collided_with "(?P<s>car\d+) hit (?P<o>person\d+)"
extract fleeing "(?P<s>car\d+) drives off(?: to the (?P<o>\w+))?"
"#,
        )
        .unwrap();
        let x = TemplateExtractor::from_kb(&kb);
        let facts = x.extract(&QuestionTarget::new("*", "*"), "car1 hit person2, then car1 drives off to the north");
        assert_eq!(facts.len(), 2);
        assert_eq!(facts[0].object, Object::Entity(Entity::new("person2", "person")));
        assert_eq!(facts[0].subject.kind, "vehicle");
        assert_eq!(facts[1].object, Object::Value("north".into()));
        let only = x.extract(&QuestionTarget::new("vehicle", "fleeing"), "car7 drives off");
        assert_eq!(only.len(), 1);
        assert_eq!(only[0].object, Object::Value("yes".into()));
        assert!(x.extract(&QuestionTarget::new("person", "lying_on"), "car1 hit person2").is_empty());
    }
}
