//! Parser for "Analysis: ... Conclusion: ..." model responses.
//!
//! [`parse`] accepts only the template form. [`parse_lenient`] tries the
//! strict grammar first and otherwise scans for the last category mention,
//! flagging the result as lenient.

use serde::Serialize;
use thiserror::Error;

use crate::prompt::{NO_PERSON_SENTENCE, PERSON_PREFIX};

const ANALYSIS_MARKER: &str = "Analysis:";
const CONCLUSION_MARKER: &str = "Conclusion:";

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
#[serde(tag = "verdict", content = "category", rename_all = "snake_case")]
pub enum Verdict {
    Category(String),
    NoPerson,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParsedResponse {
    /// Analysis text exactly as it appears in the transcript, minus the
    /// surrounding whitespace. Empty for lenient parses.
    pub analysis: String,
    #[serde(flatten)]
    pub verdict: Verdict,
    pub lenient: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseError {
    #[error("response does not start with \"Analysis:\": {0:?}")]
    MissingAnalysis(String),
    #[error("response has no \"Conclusion:\": {0:?}")]
    MissingConclusion(String),
    #[error("unknown category {0:?}")]
    UnknownCategory(String),
    #[error("conclusion does not follow a template: {0:?}")]
    MalformedConclusion(String),
    #[error("no category or no-person sentence found in {0:?}")]
    NoMatch(String),
    #[error("the active category set is empty")]
    NoCategories,
}

/// Trim, collapse internal whitespace to single spaces, lower-case.
pub fn normalize(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn lookup<'a>(name: &str, categories: &'a [String]) -> Option<&'a String> {
    let key = normalize(name);
    categories.iter().find(|c| normalize(c) == key)
}

fn snippet(s: &str) -> String {
    s.chars().take(80).collect()
}

/// Strict template parse.
pub fn parse(transcript: &str, categories: &[String]) -> Result<ParsedResponse, ParseError> {
    if categories.is_empty() {
        return Err(ParseError::NoCategories);
    }
    let text = transcript.trim_start();
    let Some(body) = text.strip_prefix(ANALYSIS_MARKER) else {
        return Err(ParseError::MissingAnalysis(snippet(text)));
    };
    let Some(split) = body.rfind(CONCLUSION_MARKER) else {
        return Err(ParseError::MissingConclusion(snippet(body.trim())));
    };
    let analysis = body[..split].trim().to_string();
    let conclusion = body[split + CONCLUSION_MARKER.len()..].trim();

    if conclusion.strip_suffix('.').unwrap_or(conclusion) == NO_PERSON_SENTENCE {
        return Ok(ParsedResponse {
            analysis,
            verdict: Verdict::NoPerson,
            lenient: false,
        });
    }
    let quoted = conclusion
        .strip_prefix(PERSON_PREFIX)
        .map(|rest| rest.strip_suffix('.').unwrap_or(rest))
        .and_then(|rest| rest.strip_suffix('\''))
        .filter(|inner| !inner.contains('\''));
    let Some(name) = quoted else {
        return Err(ParseError::MalformedConclusion(conclusion.to_string()));
    };
    let category = lookup(name, categories).ok_or_else(|| ParseError::UnknownCategory(name.trim().to_string()))?;
    Ok(ParsedResponse {
        analysis,
        verdict: Verdict::Category(category.clone()),
        lenient: false,
    })
}

/// Strict parse with a scanning fallback.
///
/// The fallback reports `NoPerson` if the no-person sentence appears
/// anywhere. Otherwise it looks at the text after the last "Conclusion"
/// (or the whole text) and returns the last category mentioned, preferring
/// the longer name when one mention contains another.
pub fn parse_lenient(transcript: &str, categories: &[String]) -> Result<ParsedResponse, ParseError> {
    match parse(transcript, categories) {
        Ok(p) => return Ok(p),
        Err(ParseError::NoCategories) => return Err(ParseError::NoCategories),
        Err(_) => {}
    }
    if normalize(transcript).contains(&normalize(NO_PERSON_SENTENCE)) {
        return Ok(ParsedResponse {
            analysis: String::new(),
            verdict: Verdict::NoPerson,
            lenient: true,
        });
    }
    let scope = match transcript.rfind("Conclusion") {
        Some(i) => &transcript[i + "Conclusion".len()..],
        None => transcript,
    };
    let hay = normalize(scope);
    // (start, end, category) for every word-bounded mention.
    let mut mentions: Vec<(usize, usize, &String)> = Vec::new();
    for c in categories {
        let needle = normalize(c);
        if needle.is_empty() {
            continue;
        }
        let mut from = 0;
        while let Some(off) = hay[from..].find(&needle) {
            let start = from + off;
            let end = start + needle.len();
            if is_boundary(&hay, start, end) {
                mentions.push((start, end, c));
            }
            from = start + hay[start..].chars().next().map_or(1, char::len_utf8);
        }
    }
    let outermost = mentions.iter().filter(|&&(s, e, _)| {
        !mentions
            .iter()
            .any(|&(s2, e2, _)| s2 <= s && e <= e2 && (e2 - s2) > (e - s))
    });
    let best = outermost.max_by_key(|&&(s, e, _)| (s, e));
    match best {
        Some(&(_, _, c)) => Ok(ParsedResponse {
            analysis: String::new(),
            verdict: Verdict::Category(c.clone()),
            lenient: true,
        }),
        None => Err(ParseError::NoMatch(snippet(transcript.trim()))),
    }
}

fn is_boundary(hay: &str, start: usize, end: usize) -> bool {
    let before = hay[..start].chars().next_back();
    let after = hay[end..].chars().next();
    !before.is_some_and(char::is_alphanumeric) && !after.is_some_and(char::is_alphanumeric)
}
