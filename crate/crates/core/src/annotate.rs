//! MQM-style error annotation: prompt construction, reply parsing and tallies.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::corpus::Document;
use crate::prompting::{bindings, mark_sentences, Placeholder, PromptError, TemplateId, TemplateSet};

pub const NONE_LABEL: &str = "(none)";

const VOCABULARY: [&str; 9] = [
    "Mistranslation",
    "Overtranslation",
    "Undertranslation",
    "Addition",
    "Omission",
    "Cohesion",
    "Coherence",
    "Inconsistent style",
    "Multiple terms in translation",
];

#[derive(Debug, Error)]
pub enum AnnotateError {
    #[error("sentence counts differ: source {src}, reference {reference}, hypothesis {hyp}")]
    Count { src: usize, reference: usize, hyp: usize },
    #[error(transparent)]
    Prompt(#[from] PromptError),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ErrorType {
    Known(&'static str),
    None,
    Other(String),
}

impl ErrorType {
    /// Case-insensitive match against the label set.
    pub fn canonicalize(label: &str) -> Self {
        let t = label.trim().trim_end_matches('.').trim();
        let lower = t.to_lowercase();
        if lower.is_empty() || lower == "none" || lower == "no errors" || lower == "no error" || lower == NONE_LABEL {
            return ErrorType::None;
        }
        match VOCABULARY.iter().find(|v| v.to_lowercase() == lower) {
            Some(v) => ErrorType::Known(v),
            None => ErrorType::Other(t.to_string()),
        }
    }

    pub fn vocabulary() -> &'static [&'static str] {
        &VOCABULARY
    }
}

impl fmt::Display for ErrorType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ErrorType::Known(v) => f.write_str(v),
            ErrorType::None => f.write_str(NONE_LABEL),
            ErrorType::Other(t) => write!(f, "other:{t}"),
        }
    }
}

impl Serialize for ErrorType {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for ErrorType {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Ok(match s.strip_prefix("other:") {
            Some(rest) => ErrorType::Other(rest.to_string()),
            None => ErrorType::canonicalize(&s),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorRecord {
    pub sentence_id: usize,
    pub error_types: Vec<ErrorType>,
    pub explanation: String,
    /// No block for this sentence was found in the reply.
    #[serde(default)]
    pub missing: bool,
}

impl ErrorRecord {
    fn missing(sentence_id: usize) -> Self {
        ErrorRecord {
            sentence_id,
            error_types: vec![ErrorType::None],
            explanation: String::new(),
            missing: true,
        }
    }
}

pub fn build_mqm_prompt(src: &Document, reference: &Document, hyp: &Document) -> Result<String, AnnotateError> {
    build_mqm_prompt_with(&TemplateSet::default(), src, reference, hyp)
}

pub fn build_mqm_prompt_with(
    templates: &TemplateSet,
    src: &Document,
    reference: &Document,
    hyp: &Document,
) -> Result<String, AnnotateError> {
    if src.len() != reference.len() || src.len() != hyp.len() {
        return Err(AnnotateError::Count {
            src: src.len(),
            reference: reference.len(),
            hyp: hyp.len(),
        });
    }
    let b = bindings([
        (Placeholder::SrcDoc, mark_sentences(&src.sentences)),
        (Placeholder::RefDoc, mark_sentences(&reference.sentences)),
        (Placeholder::HypDoc, mark_sentences(&hyp.sentences)),
    ]);
    Ok(templates.render(TemplateId::MqmAnnotate, &b)?.prompt)
}

static HEADER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)Sentence\s*#\s*(\d+)").unwrap());
static TYPES: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(?i)^\s*Error\s+types?\s*:(.*)$").unwrap());
static EXPLANATION: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"(?i)^\s*Explanation(?:\s+for\s+errors?)?\s*:(.*)$").unwrap());

/// Best-effort parse. Always returns `expected_n` records ordered by id;
/// sentences without a block are marked `missing`. Repeated blocks keep the
/// first; ids outside `1..=expected_n` are ignored.
pub fn parse_mqm(reply: &str, expected_n: usize) -> Vec<ErrorRecord> {
    let mut found: BTreeMap<usize, ErrorRecord> = BTreeMap::new();
    let headers: Vec<_> = HEADER.captures_iter(reply).collect();
    for (i, cap) in headers.iter().enumerate() {
        let whole = cap.get(0).unwrap();
        let end = headers.get(i + 1).map_or(reply.len(), |c| c.get(0).unwrap().start());
        let Ok(id) = cap[1].parse::<usize>() else { continue };
        if id == 0 || id > expected_n || found.contains_key(&id) {
            continue;
        }
        let block = &reply[whole.end()..end];
        let mut types = Vec::new();
        let mut explanation = Vec::new();
        let mut in_expl = false;
        for line in block.lines() {
            if let Some(c) = TYPES.captures(line) {
                in_expl = false;
                types.extend(
                    c[1].split([',', ';'])
                        .map(ErrorType::canonicalize)
                        .filter(|t| *t != ErrorType::None),
                );
            } else if let Some(c) = EXPLANATION.captures(line) {
                in_expl = true;
                explanation.push(c[1].trim().to_string());
            } else if in_expl && !line.trim().is_empty() {
                explanation.push(line.trim().to_string());
            }
        }
        if types.is_empty() {
            types.push(ErrorType::None);
        }
        let mut seen = Vec::new();
        types.retain(|t| {
            let fresh = !seen.contains(t);
            seen.push(t.clone());
            fresh
        });
        found.insert(
            id,
            ErrorRecord {
                sentence_id: id,
                error_types: types,
                explanation: explanation.join(" "),
                missing: false,
            },
        );
    }
    (1..=expected_n)
        .map(|id| found.remove(&id).unwrap_or_else(|| ErrorRecord::missing(id)))
        .collect()
}

/// Label counts over all documents, `(none)` excluded, sorted by descending
/// count then label.
pub fn aggregate_errors(records: &[Vec<ErrorRecord>]) -> Vec<(String, usize)> {
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for r in records.iter().flatten() {
        for t in &r.error_types {
            if *t != ErrorType::None {
                *counts.entry(t.to_string()).or_default() += 1;
            }
        }
    }
    let mut out: Vec<_> = counts.into_iter().collect();
    out.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    out
}

pub fn tally_csv(tally: &[(String, usize)]) -> String {
    let mut out = String::from("error_type,count\n");
    for (label, c) in tally {
        if label.contains([',', '"', '\n']) {
            out.push_str(&format!("\"{}\",{c}\n", label.replace('"', "\"\"")));
        } else {
            out.push_str(&format!("{label},{c}\n"));
        }
    }
    out
}
