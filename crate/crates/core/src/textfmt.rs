//! Shared lexer for the line-oriented text formats (scenario and KB files).
//!
//! One record per line, whitespace-separated tokens, `"..."` for tokens that
//! contain spaces (with `\"` and `\\` escapes; any other backslash is kept
//! literally so regexes read naturally), `#` starts a comment.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("line {line}: {msg}")]
pub struct LexError {
    pub line: usize,
    pub msg: String,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Line {
    /// 1-based.
    pub no: usize,
    pub tokens: Vec<String>,
    pub raw: String,
}

impl Line {
    pub fn keyword(&self) -> &str {
        &self.tokens[0]
    }

    pub fn arg(&self, i: usize) -> Option<&str> {
        self.tokens.get(i + 1).map(String::as_str)
    }

    /// Looks up a `key=value` token among the arguments.
    pub fn option(&self, key: &str) -> Option<&str> {
        self.tokens[1..].iter().find_map(|t| {
            let (k, v) = t.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    pub fn options<'a>(&'a self, key: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.tokens[1..].iter().filter_map(move |t| {
            let (k, v) = t.split_once('=')?;
            (k == key).then_some(v)
        })
    }
}

/// Splits a document into non-empty token lines.
pub fn lex(src: &str) -> Result<Vec<Line>, LexError> {
    let mut out = Vec::new();
    for (i, raw) in src.lines().enumerate() {
        let tokens = tokenize(raw).map_err(|msg| LexError { line: i + 1, msg })?;
        if !tokens.is_empty() {
            out.push(Line {
                no: i + 1,
                tokens,
                raw: raw.to_string(),
            });
        }
    }
    Ok(out)
}

fn tokenize(line: &str) -> Result<Vec<String>, String> {
    let mut tokens = Vec::new();
    let mut chars = line.chars().peekable();
    loop {
        while chars.peek().is_some_and(|c| c.is_whitespace()) {
            chars.next();
        }
        let Some(&c) = chars.peek() else { break };
        if c == '#' {
            break;
        }
        let mut tok = String::new();
        while let Some(&c) = chars.peek() {
            if c.is_whitespace() {
                break;
            }
            chars.next();
            if c == '"' {
                loop {
                    match chars.next() {
                        None => return Err("unterminated quoted string".into()),
                        Some('"') => break,
                        Some('\\') => match chars.next() {
                            Some(e @ ('"' | '\\')) => tok.push(e),
                            Some('n') => tok.push('\n'),
                            Some(other) => {
                                tok.push('\\');
                                tok.push(other);
                            }
                            None => return Err("dangling escape".into()),
                        },
                        Some(c) => tok.push(c),
                    }
                }
            } else {
                tok.push(c);
            }
        }
        tokens.push(tok);
    }
    Ok(tokens)
}

/// Quotes a token for output if it needs it.
pub fn quote(s: &str) -> String {
    if !s.is_empty() && !s.contains(|c: char| c.is_whitespace() || c == '"' || c == '#' || c == '\\') {
        return s.to_string();
    }
    let mut out = String::with_capacity(s.len() + 2);
    out.push('"');
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            '\n' => out.push_str("\\n"),
            c => out.push(c),
        }
    }
    out.push('"');
    out
}

/// Parses a `keyword value; key value; ...` header line into ordered pairs.
pub fn header_fields(raw: &str) -> Result<Vec<(String, String)>, String> {
    let body = raw.split('#').next().unwrap_or("");
    body.split(';')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|clause| {
            let mut it = clause.split_whitespace();
            let k = it.next().ok_or("empty header clause")?;
            let v = it.next().ok_or_else(|| format!("header clause `{k}` has no value"))?;
            if it.next().is_some() {
                return Err(format!("header clause `{clause}` has trailing tokens"));
            }
            Ok((k.to_string(), v.to_string()))
        })
        .collect()
}

/// Parses `10s`, `2.5s`, `1500ms` or a bare number of seconds into ms.
pub fn parse_duration_ms(s: &str) -> Option<u64> {
    let (num, scale) = if let Some(n) = s.strip_suffix("ms") {
        (n, 1.0)
    } else if let Some(n) = s.strip_suffix('s') {
        (n, 1000.0)
    } else {
        (s, 1000.0)
    };
    let v: f64 = num.parse().ok()?;
    (v.is_finite() && v >= 0.0).then(|| (v * scale).round() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokens_quotes_and_comments() {
        let lines = lex("  # only a comment\ntemplate near \"Is the {kind} near \\\"it\\\"?\" tokens=1 # tail\n\n").unwrap();
        assert_eq!(lines.len(), 1);
        assert_eq!(lines[0].no, 2);
        assert_eq!(
            lines[0].tokens,
            vec!["template", "near", "Is the {kind} near \"it\"?", "tokens=1"]
        );
        assert_eq!(lines[0].option("tokens"), Some("1"));
        assert_eq!(lines[0].option("missing"), None);
    }

    #[test]
    fn unterminated_quote_reports_line() {
        let err = lex("ok line\nbad \"open").unwrap_err();
        assert_eq!(err.line, 2);
    }

    #[test]
    fn quote_round_trips_through_lexer() {
        for s in ["plain", "two words", "with \"quotes\"", "back\\slash", ""] {
            let lines = lex(&format!("k {}", quote(s))).unwrap();
            let got = lines[0].tokens.get(1).cloned().unwrap_or_default();
            assert_eq!(got, s);
        }
    }

    #[test]
    fn header_clauses() {
        let h = header_fields("scenario s1; fps 24; duration 8; version 1").unwrap();
        assert_eq!(h[1], ("fps".into(), "24".into()));
        assert!(header_fields("scenario; fps 24").is_err());
    }

    #[test]
    fn durations() {
        assert_eq!(parse_duration_ms("10s"), Some(10_000));
        assert_eq!(parse_duration_ms("2.5s"), Some(2_500));
        assert_eq!(parse_duration_ms("1500ms"), Some(1_500));
        assert_eq!(parse_duration_ms("60"), Some(60_000));
        assert_eq!(parse_duration_ms("-1s"), None);
        assert_eq!(parse_duration_ms("xs"), None);
    }
}
