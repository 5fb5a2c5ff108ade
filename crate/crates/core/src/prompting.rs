//! Prompt templates, sentence markers and position-bias augmentation.

use std::collections::BTreeMap;
use std::fmt;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::quality::RefinementQuintuple;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum PromptError {
    #[error("unbound placeholder {0}")]
    Unbound(Placeholder),
    #[error("template {id}: {message}")]
    InvalidTemplate { id: TemplateId, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemplateId {
    Sent2sent,
    Doc2doc,
    RefineTwo,
    RefineSingleSent,
    RefineSingleDoc,
    MqmAnnotate,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::Sent2sent,
        TemplateId::Doc2doc,
        TemplateId::RefineTwo,
        TemplateId::RefineSingleSent,
        TemplateId::RefineSingleDoc,
        TemplateId::MqmAnnotate,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TemplateId::Sent2sent => "sent2sent",
            TemplateId::Doc2doc => "doc2doc",
            TemplateId::RefineTwo => "refine_two",
            TemplateId::RefineSingleSent => "refine_single_sent",
            TemplateId::RefineSingleDoc => "refine_single_doc",
            TemplateId::MqmAnnotate => "mqm_annotate",
        }
    }
}

impl fmt::Display for TemplateId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Placeholder {
    Src,
    SrcDoc,
    Hyp1,
    Hyp2,
    HypDoc,
    RefDoc,
    SrcLang,
    TgtLang,
}

impl Placeholder {
    pub const ALL: [Placeholder; 8] = [
        Placeholder::Src,
        Placeholder::SrcDoc,
        Placeholder::Hyp1,
        Placeholder::Hyp2,
        Placeholder::HypDoc,
        Placeholder::RefDoc,
        Placeholder::SrcLang,
        Placeholder::TgtLang,
    ];

    pub fn token(self) -> &'static str {
        match self {
            Placeholder::Src => "<src>",
            Placeholder::SrcDoc => "<src_doc>",
            Placeholder::Hyp1 => "<hyp1>",
            Placeholder::Hyp2 => "<hyp2>",
            Placeholder::HypDoc => "<hyp_doc>",
            Placeholder::RefDoc => "<ref_doc>",
            Placeholder::SrcLang => "<src_lang>",
            Placeholder::TgtLang => "<tgt_lang>",
        }
    }
}

impl fmt::Display for Placeholder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.token())
    }
}

pub type Bindings = BTreeMap<Placeholder, String>;

pub fn bindings<S: Into<String>>(pairs: impl IntoIterator<Item = (Placeholder, S)>) -> Bindings {
    pairs.into_iter().map(|(p, s)| (p, s.into())).collect()
}

const SENT2SENT: &str =
    "Translate the following <src_lang> sentence into <tgt_lang>. Output only the translation.\n<src>";

const DOC2DOC: &str = "Translate the following <src_lang> document into <tgt_lang>. Keep the sentence markers (#1:, #2:, ...) and translate sentence by sentence.\n<src_doc>";

const REFINE_TWO: &str = "Given the <src_lang> source document and two candidate <tgt_lang> translations, produce an improved <tgt_lang> translation of the whole document. Keep the sentence markers.\nSource:\n<src_doc>\nCandidate 1:\n<hyp1>\nCandidate 2:\n<hyp2>\nImproved translation:";

const REFINE_SINGLE: &str = "Given the <src_lang> source document and a candidate <tgt_lang> translation, produce an improved <tgt_lang> translation of the whole document. Keep the sentence markers.\nSource:\n<src_doc>\nCandidate:\n<hyp_doc>\nImproved translation:";

const MQM_ANNOTATE: &str = r#"[Source]:
<src_doc>
[Reference]:
<ref_doc>
[Hypothesis]:
<hyp_doc>

[Error Types]:
- Mistranslation: Error occurring when the target content does not accurately represent the source.
- Overtranslation: Error occurring in the target content that is inappropriately more specific than the source.
- Undertranslation: Error occurring in the target content that is inappropriately less specific than the source.
- Addition: Error occurring in the target content that includes content not present in the source.
- Omission: Error where content present in the source is missing in the target.
- Cohesion: Portions of the text needed to connect it into an understandable whole (e.g., reference, substitution, ellipsis, conjunction, and lexical cohesion) missing or incorrect.
- Coherence: Text lacking a clear semantic relationship between its parts, i.e., the different parts don't hang together, don't follow the discourse conventions of the target language, or don't "make sense."
- Inconsistent style: Style that varies inconsistently throughout the text, e.g., One part of a text is written in a clear, "terse" style, while other sections are written in a more wordy style.
- Multiple terms in translation: Error where source content terminology is correct, but target content terms are not used consistently.

Considering the provided context, please identify the errors of the translation from the source to the target in the current sentence based on a subset of Multidimensional Quality Metrics (MQM) error typology.
You should pay extra attention to the error types related to the relationship between the current sentence and its context, such as "Unclear reference", "Cohesion", "Coherence", "Inconsistent style", and "Multiple terms in translation".
For each sentence in machine translation, please give the error types and brief explanation for errors.The returned format is as follows:
Sentence #id :
Error types: ...
Explanation for errors: ..."#;

fn canonical_body(id: TemplateId) -> &'static str {
    match id {
        TemplateId::Sent2sent => SENT2SENT,
        TemplateId::Doc2doc => DOC2DOC,
        TemplateId::RefineTwo => REFINE_TWO,
        TemplateId::RefineSingleSent | TemplateId::RefineSingleDoc => REFINE_SINGLE,
        TemplateId::MqmAnnotate => MQM_ANNOTATE,
    }
}

enum Piece {
    Text(String),
    Slot(Placeholder),
}

/// A template body pre-split into literal text and placeholder slots, so
/// substitution is a single pass and bound values are never re-scanned.
pub struct PromptTemplate {
    pub id: TemplateId,
    pub body: String,
    pieces: Vec<Piece>,
}

impl fmt::Debug for PromptTemplate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PromptTemplate")
            .field("id", &self.id)
            .field("body", &self.body)
            .finish()
    }
}

impl Clone for PromptTemplate {
    fn clone(&self) -> Self {
        PromptTemplate::new(self.id, self.body.clone()).expect("already validated")
    }
}

impl PromptTemplate {
    pub fn new(id: TemplateId, body: impl Into<String>) -> Result<Self, PromptError> {
        let body = body.into();
        let invalid = |message: String| PromptError::InvalidTemplate { id, message };
        if body.trim().is_empty() {
            return Err(invalid("empty body".into()));
        }
        let pieces = split_pieces(&body);
        let count = |p: Placeholder| pieces.iter().filter(|x| matches!(x, Piece::Slot(q) if *q == p)).count();
        if id == TemplateId::RefineTwo {
            for p in [Placeholder::Hyp1, Placeholder::Hyp2] {
                if count(p) != 1 {
                    return Err(invalid(format!("{p} must appear exactly once, found {}", count(p))));
                }
            }
        }
        Ok(PromptTemplate { id, body, pieces })
    }

    pub fn canonical(id: TemplateId) -> Self {
        PromptTemplate::new(id, canonical_body(id)).expect("canonical templates are valid")
    }

    /// Placeholders used by the body, without duplicates.
    pub fn placeholders(&self) -> Vec<Placeholder> {
        let mut out: Vec<Placeholder> = self
            .pieces
            .iter()
            .filter_map(|p| match p {
                Piece::Slot(s) => Some(*s),
                Piece::Text(_) => None,
            })
            .collect();
        out.sort();
        out.dedup();
        out
    }

    pub fn fill(&self, b: &Bindings) -> Result<String, PromptError> {
        let mut out = String::with_capacity(self.body.len() + 64);
        for piece in &self.pieces {
            match piece {
                Piece::Text(t) => out.push_str(t),
                Piece::Slot(p) => out.push_str(b.get(p).ok_or(PromptError::Unbound(*p))?),
            }
        }
        Ok(out)
    }
}

fn split_pieces(body: &str) -> Vec<Piece> {
    let mut pieces = Vec::new();
    let mut text = String::new();
    let mut rest = body;
    'outer: while !rest.is_empty() {
        if rest.starts_with('<') {
            for p in Placeholder::ALL {
                if let Some(after) = rest.strip_prefix(p.token()) {
                    if !text.is_empty() {
                        pieces.push(Piece::Text(std::mem::take(&mut text)));
                    }
                    pieces.push(Piece::Slot(p));
                    rest = after;
                    continue 'outer;
                }
            }
        }
        let ch = rest.chars().next().unwrap();
        text.push(ch);
        rest = &rest[ch.len_utf8()..];
    }
    if !text.is_empty() {
        pieces.push(Piece::Text(text));
    }
    pieces
}

/// The six templates in use, canonical unless overridden.
#[derive(Debug, Clone)]
pub struct TemplateSet {
    templates: BTreeMap<TemplateId, PromptTemplate>,
}

impl Default for TemplateSet {
    fn default() -> Self {
        TemplateSet {
            templates: TemplateId::ALL
                .into_iter()
                .map(|id| (id, PromptTemplate::canonical(id)))
                .collect(),
        }
    }
}

impl TemplateSet {
    pub fn with_overrides(overrides: impl IntoIterator<Item = (TemplateId, String)>) -> Result<Self, PromptError> {
        let mut set = TemplateSet::default();
        for (id, body) in overrides {
            set.templates.insert(id, PromptTemplate::new(id, body)?);
        }
        Ok(set)
    }

    pub fn get(&self, id: TemplateId) -> &PromptTemplate {
        &self.templates[&id]
    }

    pub fn render(&self, id: TemplateId, b: &Bindings) -> Result<RenderedInstance, PromptError> {
        Ok(RenderedInstance {
            prompt: self.get(id).fill(b)?,
            target: None,
            meta: InstanceMeta::default(),
        })
    }
}

/// Renders a canonical template.
pub fn render(id: TemplateId, b: &Bindings) -> Result<RenderedInstance, PromptError> {
    TemplateSet::default().render(id, b)
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstanceMeta {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Only set for two-candidate refinement instances.
    pub swapped: Option<bool>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RenderedInstance {
    pub prompt: String,
    pub target: Option<String>,
    pub meta: InstanceMeta,
}

static MARKER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"^[ \t]*#([0-9]+):[ \t]?").expect("marker regex"));

/// Splits a leading `#<id>: ` marker off `line`. Ids too large for `usize`
/// come back as `usize::MAX`.
pub(crate) fn split_marker(line: &str) -> Option<(usize, &str)> {
    let caps = MARKER.captures(line)?;
    let id = caps[1].parse().unwrap_or(usize::MAX);
    Some((id, &line[caps.get(0).unwrap().end()..]))
}

/// Indices of sentences that already start with something parseable as a marker.
pub fn marker_collisions(sentences: &[String]) -> Vec<usize> {
    sentences
        .iter()
        .enumerate()
        .filter(|(_, s)| split_marker(s).is_some())
        .map(|(i, _)| i)
        .collect()
}

/// `#1: first\n#2: second...`. Content is not escaped; collisions are logged.
pub fn mark_sentences(sentences: &[String]) -> String {
    for i in marker_collisions(sentences) {
        warn!(index = i + 1, "sentence begins with a marker-like prefix");
    }
    let mut out = String::new();
    for (i, s) in sentences.iter().enumerate() {
        if i > 0 {
            out.push('\n');
        }
        out.push('#');
        out.push_str(&(i + 1).to_string());
        out.push_str(": ");
        out.push_str(s);
    }
    out
}

/// English display name for common language codes, falling back to the code.
pub fn language_name(code: &str) -> String {
    let base = code.split(['-', '_']).next().unwrap_or(code).to_ascii_lowercase();
    let name = match base.as_str() {
        "en" => "English",
        "de" => "German",
        "fr" => "French",
        "es" => "Spanish",
        "it" => "Italian",
        "pt" => "Portuguese",
        "nl" => "Dutch",
        "ru" => "Russian",
        "zh" => "Chinese",
        "ja" => "Japanese",
        "ko" => "Korean",
        "ar" => "Arabic",
        "cs" => "Czech",
        "pl" => "Polish",
        "tr" => "Turkish",
        _ => return code.to_string(),
    };
    name.to_string()
}

/// Emits both candidate orders for a quintuple. Instance 0 keeps the
/// sentence-level hypothesis first; instance 1 swaps them. Both share the
/// marked reference as target.
pub fn augment_swap(q: &RefinementQuintuple, templates: &TemplateSet) -> Result<[RenderedInstance; 2], PromptError> {
    let src_doc = mark_sentences(&q.src);
    let marked_y = mark_sentences(&q.y);
    let marked_z = mark_sentences(&q.z);
    let target = mark_sentences(&q.reference);
    let make = |h1: &str, h2: &str, swapped: bool| -> Result<RenderedInstance, PromptError> {
        let b = bindings([
            (Placeholder::SrcLang, language_name(&q.src_lang)),
            (Placeholder::TgtLang, language_name(&q.tgt_lang)),
            (Placeholder::SrcDoc, src_doc.clone()),
            (Placeholder::Hyp1, h1.to_string()),
            (Placeholder::Hyp2, h2.to_string()),
        ]);
        let mut inst = templates.render(TemplateId::RefineTwo, &b)?;
        inst.target = Some(target.clone());
        inst.meta = InstanceMeta {
            doc_id: q.doc_id.clone(),
            chunk_index: q.chunk_index,
            swapped: Some(swapped),
        };
        Ok(inst)
    };
    Ok([make(&marked_y, &marked_z, false)?, make(&marked_z, &marked_y, true)?])
}
