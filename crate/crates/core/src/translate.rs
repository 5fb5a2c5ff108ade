//! Sent2Sent / Doc2Doc translation of chunks, marker parsing with repair, and
//! document-level refinement from one or two intermediate translations.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

use crate::corpus::ChunkPair;
use crate::llm_client::{BatchError, DecodeParams, LlmClient, LlmError};
use crate::prompting::{
    bindings, language_name, mark_sentences, split_marker, Placeholder, PromptError, TemplateId, TemplateSet,
};

#[derive(Debug, Error)]
pub enum TranslateError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Batch(#[from] BatchError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("document {doc_id} chunk {chunk_index}: {message}")]
    Shape {
        doc_id: String,
        chunk_index: usize,
        message: String,
    },
}

/// What [`parse_marked`] found and what it had to repair.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct ParseReport {
    pub expected_n: usize,
    /// Marker lines found; 1 for a non-empty reply without markers, 0 for an empty one.
    pub found_n: usize,
    pub missing_ids: Vec<usize>,
    pub duplicate_ids: Vec<usize>,
    /// Ids outside `1..=expected_n`, in order of appearance.
    #[serde(default)]
    pub overflow_ids: Vec<usize>,
    /// No marker at all; the whole reply went to segment 1.
    #[serde(default)]
    pub markerless: bool,
    pub repaired: bool,
}

impl ParseReport {
    pub fn clean(n: usize) -> Self {
        ParseReport {
            expected_n: n,
            found_n: n,
            ..Default::default()
        }
    }

    pub fn is_clean(&self) -> bool {
        !self.repaired
    }
}

fn push_text(seg: &mut String, text: &str) {
    let text = text.trim();
    if text.is_empty() {
        return;
    }
    if !seg.is_empty() {
        seg.push(' ');
    }
    seg.push_str(text);
}

fn fold_lines(text: &str) -> String {
    let mut out = String::new();
    for line in text.lines() {
        push_text(&mut out, line);
    }
    out
}

enum Sink {
    Preamble,
    Kept(usize),
    Dropped,
    Overflow(usize),
}

/// Splits a `#<id>: ` formatted reply into exactly `expected_n` segments.
///
/// Segments are attributed by id, not by position. Repairs: missing ids become
/// "", repeated ids keep their first occurrence, out-of-range ids are appended
/// to the highest-numbered kept segment, and a reply without any marker
/// becomes segment 1. Text before the first marker is ignored. Continuation
/// lines are folded into their segment with single spaces.
pub fn parse_marked(text: &str, expected_n: usize) -> (Vec<String>, ParseReport) {
    let n = expected_n.max(1);
    let mut segments: Vec<Option<String>> = vec![None; n];
    let mut overflow: Vec<String> = Vec::new();
    let mut report = ParseReport {
        expected_n: n,
        ..Default::default()
    };
    let mut sink = Sink::Preamble;

    for line in text.lines() {
        if let Some((id, rest)) = split_marker(line) {
            report.found_n += 1;
            if (1..=n).contains(&id) {
                if segments[id - 1].is_none() {
                    let mut seg = String::new();
                    push_text(&mut seg, rest);
                    segments[id - 1] = Some(seg);
                    sink = Sink::Kept(id - 1);
                } else {
                    if !report.duplicate_ids.contains(&id) {
                        report.duplicate_ids.push(id);
                    }
                    sink = Sink::Dropped;
                }
            } else {
                report.overflow_ids.push(id);
                let mut seg = String::new();
                push_text(&mut seg, rest);
                overflow.push(seg);
                sink = Sink::Overflow(overflow.len() - 1);
            }
        } else {
            match sink {
                Sink::Kept(i) => push_text(segments[i].as_mut().unwrap(), line),
                Sink::Overflow(i) => push_text(&mut overflow[i], line),
                Sink::Preamble | Sink::Dropped => {}
            }
        }
    }

    if report.found_n == 0 {
        let whole = fold_lines(text);
        report.found_n = usize::from(!whole.is_empty());
        report.markerless = true;
        segments[0] = Some(whole);
    }

    if !overflow.is_empty() {
        let target = segments.iter().rposition(Option::is_some).unwrap_or(0);
        let seg = segments[target].get_or_insert_with(String::new);
        for extra in &overflow {
            push_text(seg, extra);
        }
    }

    report.missing_ids = segments
        .iter()
        .enumerate()
        .filter(|(_, s)| s.is_none())
        .map(|(i, _)| i + 1)
        .collect();
    report.repaired = report.markerless
        || !report.missing_ids.is_empty()
        || !report.duplicate_ids.is_empty()
        || !report.overflow_ids.is_empty();

    (segments.into_iter().map(Option::unwrap_or_default).collect(), report)
}

/// Both intermediate translations of one chunk.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IntermediatePair {
    /// `y`: one independent call per sentence.
    pub sent2sent: Vec<String>,
    /// `z`: one call for the whole marked chunk.
    pub doc2doc: Vec<String>,
    pub parse_report: ParseReport,
    /// Set when either side could not be produced in full.
    #[serde(default)]
    pub degraded: bool,
}

fn lang_bindings(pair: &ChunkPair) -> [(Placeholder, String); 2] {
    [
        (Placeholder::SrcLang, language_name(&pair.src_lang)),
        (Placeholder::TgtLang, language_name(&pair.tgt_lang)),
    ]
}

fn shape_error(pair: &ChunkPair, message: String) -> TranslateError {
    TranslateError::Shape {
        doc_id: pair.chunk.doc_id.clone(),
        chunk_index: pair.chunk.chunk_index,
        message,
    }
}

/// Prompts for sentence-by-sentence translation of a chunk.
pub fn sent2sent_prompts(templates: &TemplateSet, pair: &ChunkPair) -> Result<Vec<String>, PromptError> {
    pair.chunk
        .sentences
        .iter()
        .map(|s| {
            let mut b = bindings(lang_bindings(pair));
            b.insert(Placeholder::Src, s.clone());
            Ok(templates.render(TemplateId::Sent2sent, &b)?.prompt)
        })
        .collect()
}

pub async fn translate_sent2sent(
    client: &LlmClient,
    templates: &TemplateSet,
    pair: &ChunkPair,
    dp: &DecodeParams,
) -> Result<Vec<String>, TranslateError> {
    if pair.chunk.is_empty() {
        return Err(shape_error(pair, "empty chunk".into()));
    }
    let prompts = sent2sent_prompts(templates, pair)?;
    let outputs = client.complete_batch(&prompts, dp, false).await.into_result()?;
    Ok(outputs
        .into_iter()
        .enumerate()
        .map(|(i, o)| {
            let o = o.trim().to_string();
            if o.is_empty() {
                warn!(doc_id = %pair.chunk.doc_id, chunk = pair.chunk.chunk_index, sentence = i + 1, "empty sent2sent reply");
            }
            o
        })
        .collect())
}

pub fn doc2doc_prompt(templates: &TemplateSet, pair: &ChunkPair) -> Result<String, PromptError> {
    let mut b = bindings(lang_bindings(pair));
    b.insert(Placeholder::SrcDoc, mark_sentences(&pair.chunk.sentences));
    Ok(templates.render(TemplateId::Doc2doc, &b)?.prompt)
}

pub async fn translate_doc2doc(
    client: &LlmClient,
    templates: &TemplateSet,
    pair: &ChunkPair,
    dp: &DecodeParams,
) -> Result<(Vec<String>, ParseReport), TranslateError> {
    if pair.chunk.is_empty() {
        return Err(shape_error(pair, "empty chunk".into()));
    }
    let reply = client.complete(&doc2doc_prompt(templates, pair)?, dp).await?;
    Ok(parse_marked(&reply, pair.chunk.len()))
}

pub fn refine_prompt(
    templates: &TemplateSet,
    pair: &ChunkPair,
    h1: &[String],
    h2: &[String],
) -> Result<String, TranslateError> {
    let n = pair.chunk.len();
    if h1.len() != n || h2.len() != n {
        return Err(shape_error(
            pair,
            format!("candidates have {} and {} sentences, chunk has {n}", h1.len(), h2.len()),
        ));
    }
    let mut b = bindings(lang_bindings(pair));
    b.insert(Placeholder::SrcDoc, mark_sentences(&pair.chunk.sentences));
    b.insert(Placeholder::Hyp1, mark_sentences(h1));
    b.insert(Placeholder::Hyp2, mark_sentences(h2));
    Ok(templates.render(TemplateId::RefineTwo, &b)?.prompt)
}

/// Two-candidate refinement. `h1 == h2` is allowed (single-system refinement
/// with the candidate duplicated).
pub async fn refine(
    client: &LlmClient,
    templates: &TemplateSet,
    pair: &ChunkPair,
    h1: &[String],
    h2: &[String],
    dp: &DecodeParams,
) -> Result<(Vec<String>, ParseReport), TranslateError> {
    let prompt = refine_prompt(templates, pair, h1, h2)?;
    let reply = client.complete(&prompt, dp).await?;
    Ok(parse_marked(&reply, pair.chunk.len()))
}

pub fn refine_single_prompt(
    templates: &TemplateSet,
    template: TemplateId,
    pair: &ChunkPair,
    hyp: &[String],
) -> Result<String, TranslateError> {
    if hyp.len() != pair.chunk.len() {
        return Err(shape_error(
            pair,
            format!("candidate has {} sentences, chunk has {}", hyp.len(), pair.chunk.len()),
        ));
    }
    let mut b = bindings(lang_bindings(pair));
    b.insert(Placeholder::SrcDoc, mark_sentences(&pair.chunk.sentences));
    b.insert(Placeholder::HypDoc, mark_sentences(hyp));
    Ok(templates.render(template, &b)?.prompt)
}

/// Single-candidate refinement with `refine_single_sent` or `refine_single_doc`.
pub async fn refine_single(
    client: &LlmClient,
    templates: &TemplateSet,
    template: TemplateId,
    pair: &ChunkPair,
    hyp: &[String],
    dp: &DecodeParams,
) -> Result<(Vec<String>, ParseReport), TranslateError> {
    let prompt = refine_single_prompt(templates, template, pair, hyp)?;
    let reply = client.complete(&prompt, dp).await?;
    Ok(parse_marked(&reply, pair.chunk.len()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(xs: &[&str]) -> Vec<String> {
        xs.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn exact_match_is_clean() {
        let (out, rep) = parse_marked("#1: A.\n#2: B.", 2);
        assert_eq!(out, s(&["A.", "B."]));
        assert!(rep.is_clean());
        assert_eq!(rep, ParseReport::clean(2));
    }

    #[test]
    fn ids_are_attributed_not_positional() {
        let (out, rep) = parse_marked("#2: B.\n#1: A.", 2);
        assert_eq!(out, s(&["A.", "B."]));
        assert!(rep.is_clean());
    }

    #[test]
    fn duplicates_keep_first() {
        let (out, rep) = parse_marked("#1: A.\n#1: A2.\n#2: B.", 2);
        assert_eq!(out, s(&["A.", "B."]));
        assert_eq!(rep.duplicate_ids, vec![1]);
        assert_eq!(rep.found_n, 3);
        assert!(rep.repaired);
    }

    #[test]
    fn missing_ids_filled_empty() {
        let (out, rep) = parse_marked("#1: X.", 2);
        assert_eq!(out, s(&["X.", ""]));
        assert_eq!(rep.missing_ids, vec![2]);
        assert_eq!(rep.found_n, 1);
        assert!(rep.repaired);
    }

    #[test]
    fn markerless_reply_goes_to_segment_one() {
        let (out, rep) = parse_marked("Some prose translation.", 3);
        assert_eq!(out, s(&["Some prose translation.", "", ""]));
        assert_eq!(rep.found_n, 1);
        assert!(rep.markerless && rep.repaired);
        assert_eq!(rep.missing_ids, vec![2, 3]);

        let (out, rep) = parse_marked("", 2);
        assert_eq!(out, s(&["", ""]));
        assert_eq!(rep.found_n, 0);
    }

    #[test]
    fn overflow_appends_to_last_kept() {
        let (out, rep) = parse_marked("#1: A.\n#2: B.\n#3: C.", 2);
        assert_eq!(out, s(&["A.", "B. C."]));
        assert_eq!(rep.overflow_ids, vec![3]);
        assert!(rep.repaired);
        assert_eq!(rep.found_n, 3);

        // no kept segment at all: overflow lands in segment 1
        let (out, rep) = parse_marked("#7: Z.", 2);
        assert_eq!(out, s(&["Z.", ""]));
        assert_eq!(rep.missing_ids, vec![2]);
    }

    #[test]
    fn continuation_lines_and_preamble() {
        let (out, rep) = parse_marked("Here you go:\n#1: A\n  still A\n\n#2: B.", 2);
        assert_eq!(out, s(&["A still A", "B."]));
        assert!(rep.is_clean());
    }

    #[test]
    fn marker_without_space_and_indent() {
        let (out, _) = parse_marked("  #1:A.\n#2:  B.", 2);
        assert_eq!(out, s(&["A.", "B."]));
    }

    #[test]
    fn output_length_is_expected_n() {
        for text in ["", "x", "#1: a\n#2: b\n#3: c", "#9: a"] {
            for n in 1..5 {
                assert_eq!(parse_marked(text, n).0.len(), n);
            }
        }
    }
}
