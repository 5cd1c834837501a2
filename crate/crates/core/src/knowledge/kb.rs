use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use regex::Regex;
use serde::Serialize;
use thiserror::Error;

use crate::query::{parse_standing, EventPattern};
use crate::textfmt::{self, header_fields, Line};
use crate::triple::{Object, SemanticTriple};

/// Relevance prior used when the KB has no entry for a (context, type) pair.
pub const DEFAULT_PRIOR: f64 = 0.5;

#[derive(Debug, Error)]
pub enum KbError {
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("schema error{}: {msg}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    Schema { line: Option<usize>, msg: String },
    #[error("cannot read knowledge base {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

fn parse_err(line: &Line, msg: impl Into<String>) -> KbError {
    KbError::Parse {
        line: line.no,
        msg: msg.into(),
    }
}

fn schema_err(line: &Line, msg: impl Into<String>) -> KbError {
    KbError::Schema {
        line: Some(line.no),
        msg: msg.into(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Relation {
    pub subject_type: String,
    pub predicate: String,
    pub object_type: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuestionTemplate {
    /// `*` for the descriptive whole-scene template.
    pub predicate: String,
    /// May contain `{kind}`, replaced by the targeted entity type.
    pub text: String,
    pub tokens: u32,
    pub baseline: bool,
}

impl QuestionTemplate {
    pub fn render(&self, kind: &str) -> String {
        self.text.replace("{kind}", kind)
    }
}

#[derive(Debug, Clone)]
pub struct KnowledgeBase {
    pub name: String,
    pub entity_types: BTreeSet<String>,
    pub attributes: BTreeMap<String, Vec<String>>,
    pub relations: Vec<Relation>,
    /// Templates in declaration order; at most one per predicate.
    pub templates: Vec<QuestionTemplate>,
    pub descriptive: Option<QuestionTemplate>,
    pub priors: BTreeMap<(String, String), f64>,
    pub renders: BTreeMap<String, String>,
    pub extractors: Vec<(String, Regex)>,
    /// Word → predicate or entity type, for the keyword query mapper.
    pub synonyms: BTreeMap<String, String>,
    pub patterns: Vec<EventPattern>,
    /// Source text of each pattern, in the standing-query DSL.
    pub pattern_sources: Vec<String>,
    predicate_order: Vec<String>,
}

impl KnowledgeBase {
    fn empty(name: String) -> Self {
        Self {
            name,
            entity_types: BTreeSet::new(),
            attributes: BTreeMap::new(),
            relations: Vec::new(),
            templates: Vec::new(),
            descriptive: None,
            priors: BTreeMap::new(),
            renders: BTreeMap::new(),
            extractors: Vec::new(),
            synonyms: BTreeMap::new(),
            patterns: Vec::new(),
            pattern_sources: Vec::new(),
            predicate_order: Vec::new(),
        }
    }

    /// Every relation and attribute predicate, in declaration order.
    pub fn predicates(&self) -> &[String] {
        &self.predicate_order
    }

    pub fn has_predicate(&self, p: &str) -> bool {
        self.predicate_order.iter().any(|q| q == p)
    }

    pub fn has_type(&self, t: &str) -> bool {
        self.entity_types.contains(t)
    }

    /// Entity types that may appear as subject of `p`.
    pub fn subject_kinds(&self, p: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in self.relations.iter().filter(|r| r.predicate == p) {
            if !out.contains(&r.subject_type.as_str()) {
                out.push(&r.subject_type);
            }
        }
        for (kind, preds) in &self.attributes {
            if preds.iter().any(|q| q == p) && !out.contains(&kind.as_str()) {
                out.push(kind);
            }
        }
        out
    }

    pub fn object_kinds(&self, p: &str) -> Vec<&str> {
        let mut out: Vec<&str> = Vec::new();
        for r in self.relations.iter().filter(|r| r.predicate == p) {
            if !out.contains(&r.object_type.as_str()) {
                out.push(&r.object_type);
            }
        }
        out
    }

    /// Predicates an entity of `kind` can be the subject of, attributes first.
    pub fn predicates_for_kind(&self, kind: &str) -> Vec<&str> {
        let mut out: Vec<&str> = self
            .attributes
            .get(kind)
            .map(|v| v.iter().map(String::as_str).collect())
            .unwrap_or_default();
        for r in self.relations.iter().filter(|r| r.subject_type == kind) {
            if !out.contains(&r.predicate.as_str()) {
                out.push(&r.predicate);
            }
        }
        out
    }

    pub fn template(&self, predicate: &str) -> Option<&QuestionTemplate> {
        self.templates.iter().find(|t| t.predicate == predicate)
    }

    /// Templates marked `baseline`, in declaration order.
    pub fn baseline_bank(&self) -> Vec<&QuestionTemplate> {
        self.templates.iter().filter(|t| t.baseline).collect()
    }

    pub fn prior(&self, context: &str, kind: &str) -> f64 {
        self.priors
            .get(&(context.to_string(), kind.to_string()))
            .copied()
            .unwrap_or(DEFAULT_PRIOR)
    }

    /// Renders a triple as a short sentence.
    pub fn render(&self, t: &SemanticTriple) -> String {
        self.render_parts(&t.subject.id, &t.predicate, &t.object)
    }

    pub fn render_parts(&self, subject: &str, predicate: &str, object: &Object) -> String {
        match self.renders.get(predicate) {
            Some(tpl) => tpl.replace("{s}", subject).replace("{o}", object.key()),
            None => format!("{} {} {}", subject, predicate.replace('_', " "), object.key()),
        }
    }
}

pub fn init_kb(path: impl AsRef<Path>) -> Result<KnowledgeBase, KbError> {
    let path = path.as_ref();
    let src = std::fs::read_to_string(path).map_err(|source| KbError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_kb(&src)
}

pub fn parse_kb(src: &str) -> Result<KnowledgeBase, KbError> {
    let lines = textfmt::lex(src).map_err(|e| KbError::Parse {
        line: e.line,
        msg: e.msg,
    })?;
    let Some(header) = lines.first() else {
        return Err(KbError::Schema {
            line: None,
            msg: "knowledge base declares no entity types".into(),
        });
    };
    if header.keyword() != "kb" {
        return Err(parse_err(header, "expected `kb <name>; version 1` header"));
    }
    let fields = header_fields(&header.raw).map_err(|m| parse_err(header, m))?;
    let name = fields[0].1.clone();
    if let Some((_, v)) = fields.iter().find(|(k, _)| k == "version") {
        if v != "1" {
            return Err(schema_err(header, format!("unsupported version {v}")));
        }
    }

    let mut kb = KnowledgeBase::empty(name);
    // Types and predicates first, so later lines may reference any of them.
    for line in &lines[1..] {
        match line.keyword() {
            "entity_type" => {
                for t in &line.tokens[1..] {
                    kb.entity_types.insert(t.clone());
                }
            }
            "attribute" => {
                let (Some(kind), Some(p)) = (line.arg(0), line.arg(1)) else {
                    return Err(parse_err(line, "expected `attribute <type> <predicate>`"));
                };
                kb.attributes.entry(kind.into()).or_default().push(p.into());
                if !kb.predicate_order.iter().any(|q| q == p) {
                    kb.predicate_order.push(p.into());
                }
            }
            "relation" => {
                let (Some(s), Some(p), Some(o)) = (line.arg(0), line.arg(1), line.arg(2)) else {
                    return Err(parse_err(line, "expected `relation <subject_type> <predicate> <object_type>`"));
                };
                kb.relations.push(Relation {
                    subject_type: s.into(),
                    predicate: p.into(),
                    object_type: o.into(),
                });
                if !kb.predicate_order.iter().any(|q| q == p) {
                    kb.predicate_order.push(p.into());
                }
            }
            _ => {}
        }
    }
    if kb.entity_types.is_empty() {
        return Err(KbError::Schema {
            line: None,
            msg: "knowledge base declares no entity types".into(),
        });
    }
    for line in &lines[1..] {
        match line.keyword() {
            "attribute" => {
                let kind = line.arg(0).unwrap_or_default();
                if !kb.has_type(kind) {
                    return Err(schema_err(line, format!("unknown entity type `{kind}`")));
                }
            }
            "relation" => {
                for t in [line.arg(0), line.arg(2)].into_iter().flatten() {
                    if !kb.has_type(t) {
                        return Err(schema_err(line, format!("unknown entity type `{t}`")));
                    }
                }
            }
            _ => {}
        }
    }

    for line in &lines[1..] {
        match line.keyword() {
            "entity_type" | "attribute" | "relation" => {}
            "template" => {
                let (Some(p), Some(text)) = (line.arg(0), line.arg(1)) else {
                    return Err(parse_err(line, "expected `template <predicate> \"<text>\" tokens=<n>`"));
                };
                if !kb.has_predicate(p) {
                    return Err(schema_err(line, format!("template references unknown predicate `{p}`")));
                }
                if kb.template(p).is_some() {
                    return Err(schema_err(line, format!("duplicate template for `{p}`")));
                }
                let tokens = tokens(line)?;
                kb.templates.push(QuestionTemplate {
                    predicate: p.into(),
                    text: text.into(),
                    tokens,
                    baseline: line.tokens[1..].iter().any(|t| t == "baseline"),
                });
            }
            "descriptive" => {
                let text = line
                    .arg(0)
                    .ok_or_else(|| parse_err(line, "expected `descriptive \"<text>\" tokens=<n>`"))?;
                kb.descriptive = Some(QuestionTemplate {
                    predicate: "*".into(),
                    text: text.into(),
                    tokens: tokens(line)?,
                    baseline: false,
                });
            }
            "prior" => {
                let (Some(ctx), Some(kind), Some(p)) = (line.arg(0), line.arg(1), line.arg(2)) else {
                    return Err(parse_err(line, "expected `prior <context> <type> <p>`"));
                };
                let p: f64 = p.parse().map_err(|_| parse_err(line, "prior is not a number"))?;
                if !(0.0..=1.0).contains(&p) {
                    return Err(schema_err(line, "prior must lie in [0, 1]"));
                }
                if !kb.has_type(kind) {
                    return Err(schema_err(line, format!("unknown entity type `{kind}`")));
                }
                kb.priors.insert((ctx.into(), kind.into()), p);
            }
            "render" => {
                let (Some(p), Some(tpl)) = (line.arg(0), line.arg(1)) else {
                    return Err(parse_err(line, "expected `render <predicate> \"<template>\"`"));
                };
                if !kb.has_predicate(p) {
                    return Err(schema_err(line, format!("render references unknown predicate `{p}`")));
                }
                kb.renders.insert(p.into(), tpl.into());
            }
            "extract" => {
                let (Some(p), Some(re)) = (line.arg(0), line.arg(1)) else {
                    return Err(parse_err(line, "expected `extract <predicate> \"<regex>\"`"));
                };
                if !kb.has_predicate(p) {
                    return Err(schema_err(line, format!("extractor references unknown predicate `{p}`")));
                }
                let re = Regex::new(re).map_err(|e| schema_err(line, format!("bad regex: {e}")))?;
                if re.capture_names().flatten().all(|n| n != "s") {
                    return Err(schema_err(line, "extractor regex needs a named group `s`"));
                }
                kb.extractors.push((p.into(), re));
            }
            "synonym" => {
                let Some(target) = line.arg(0) else {
                    return Err(parse_err(line, "expected `synonym <predicate|type> <word>...`"));
                };
                if !kb.has_predicate(target) && !kb.has_type(target) {
                    return Err(schema_err(line, format!("synonym target `{target}` is neither a predicate nor a type")));
                }
                for w in &line.tokens[2..] {
                    kb.synonyms.insert(w.to_lowercase(), target.into());
                }
            }
            "pattern" => {}
            other => return Err(parse_err(line, format!("unknown record `{other}`"))),
        }
    }

    for line in lines[1..].iter().filter(|l| l.keyword() == "pattern") {
        let src = line.raw.trim_start().strip_prefix("pattern").unwrap_or_default().trim();
        let pattern = parse_standing(src, &kb).map_err(|e| schema_err(line, e.to_string()))?;
        if kb.patterns.iter().any(|p| p.name == pattern.name) {
            return Err(schema_err(line, format!("duplicate pattern `{}`", pattern.name)));
        }
        kb.patterns.push(pattern);
        kb.pattern_sources.push(src.to_string());
    }
    Ok(kb)
}

fn tokens(line: &Line) -> Result<u32, KbError> {
    let n: u32 = line
        .option("tokens")
        .ok_or_else(|| parse_err(line, "missing `tokens=<n>`"))?
        .parse()
        .map_err(|_| parse_err(line, "tokens must be a positive integer"))?;
    if n == 0 {
        return Err(schema_err(line, "tokens must be > 0"));
    }
    Ok(n)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub const MINI_KB: &str = r#"
kb mini; version 1
entity_type person vehicle road_object
attribute vehicle fleeing
relation vehicle collided_with person
relation person lying_on road_object
template collided_with "Did the {kind} collide with anything?" tokens=1 baseline
template lying_on "Is a {kind} lying on the ground?" tokens=1 baseline
template fleeing "Is the {kind} driving away?" tokens=1
descriptive "Describe the scene." tokens=120
prior hit_and_run person 0.9
render lying_on "{s} is lying on {o}"
extract lying_on "(?P<s>\w+) is lying on (?P<o>\w+)"
synonym collided_with collision crash
synonym person people pedestrians
pattern standing hit_and_run: (vehicle?v collided_with person?p) then<10s> (?p lying_on *) then<15s> (?v fleeing *)
"#;

    pub fn mini() -> KnowledgeBase {
        parse_kb(MINI_KB).unwrap()
    }

    #[test]
    fn mini_kb_loads() {
        let kb = mini();
        assert_eq!(kb.predicates(), ["fleeing", "collided_with", "lying_on"]);
        assert_eq!(kb.subject_kinds("collided_with"), vec!["vehicle"]);
        assert_eq!(kb.subject_kinds("fleeing"), vec!["vehicle"]);
        assert_eq!(kb.predicates_for_kind("vehicle"), vec!["fleeing", "collided_with"]);
        assert_eq!(kb.baseline_bank().len(), 2);
        assert_eq!(kb.prior("hit_and_run", "person"), 0.9);
        assert_eq!(kb.prior("hit_and_run", "vehicle"), DEFAULT_PRIOR);
        assert_eq!(kb.patterns[0].steps.len(), 3);
        assert_eq!(kb.descriptive.as_ref().unwrap().tokens, 120);
        assert_eq!(kb.synonyms["pedestrians"], "person");
    }

    #[test]
    fn empty_kb_is_schema_error() {
        assert!(matches!(parse_kb(""), Err(KbError::Schema { .. })));
        assert!(matches!(parse_kb("kb x; version 1\n"), Err(KbError::Schema { .. })));
    }

    #[test]
    fn template_with_unknown_predicate_names_it() {
        let src = "kb x; version 1\nentity_type person\ntemplate flying \"?\" tokens=1\n";
        let err = parse_kb(src).unwrap_err();
        assert!(matches!(&err, KbError::Schema { line: Some(3), msg } if msg.contains("`flying`")), "{err}");
    }

    #[test]
    fn relation_with_unknown_type_rejected() {
        let src = "kb x; version 1\nentity_type person\nrelation person rides horse\n";
        assert!(matches!(parse_kb(src), Err(KbError::Schema { line: Some(3), .. })));
    }

    #[test]
    fn pattern_with_unknown_predicate_rejected() {
        let src = "kb x; version 1\nentity_type person\nattribute person waving\npattern standing p: (person wavng *)\n";
        let err = parse_kb(src).unwrap_err();
        assert!(err.to_string().contains("wavng"), "{err}");
    }

    #[test]
    fn render_uses_template_or_default() {
        let kb = mini();
        let o = Object::Value("road".into());
        assert_eq!(kb.render_parts("p1", "lying_on", &o), "p1 is lying on road");
        assert_eq!(kb.render_parts("car1", "fleeing", &Object::Value("north".into())), "car1 fleeing north");
    }
}
