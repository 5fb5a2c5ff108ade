//! Document-aligned parallel corpora: loading, token budgeting, chunking.

mod chunk;
mod tokenizer;

use std::collections::HashSet;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;
use tracing::warn;

pub use chunk::{reassemble, split_into_chunks, Chunk, DEFAULT_CHUNK_BUDGET};
pub use tokenizer::{token_length, Tokenizer, TokenizerSpec, Vocabulary};

/// Separator line between documents in the plaintext format.
pub const DOC_BOUNDARY: &str = "<docline>";

#[derive(Debug, Error)]
pub enum CorpusError {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("document {doc_id}: {message}")]
    Invalid { doc_id: String, message: String },
    #[error("tokenizer: {0}")]
    Tokenizer(String),
    #[error("reassemble: {0}")]
    Reassemble(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: String,
    pub lang: String,
    pub sentences: Vec<String>,
}

impl Document {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Sentences joined by single spaces.
    pub fn text(&self) -> String {
        self.sentences.join(" ")
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParallelDocument {
    pub source: Document,
    pub reference: Document,
    /// True when source and reference are sentence-aligned (equal counts).
    pub aligned: bool,
}

impl ParallelDocument {
    pub fn doc_id(&self) -> &str {
        &self.source.doc_id
    }

    /// Chunks the source side and slices the reference by the same spans.
    /// Unaligned documents carry no per-chunk reference.
    pub fn chunk(&self, budget: usize, tok: &Tokenizer) -> Vec<ChunkPair> {
        split_into_chunks(&self.source, budget, tok)
            .into_iter()
            .map(|chunk| {
                let reference = self
                    .aligned
                    .then(|| self.reference.sentences[chunk.sentence_span.0..chunk.sentence_span.1].to_vec());
                ChunkPair {
                    src_lang: self.source.lang.clone(),
                    tgt_lang: self.reference.lang.clone(),
                    chunk,
                    reference,
                }
            })
            .collect()
    }
}

/// A source chunk with its language pair and, when aligned, its reference slice.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkPair {
    pub src_lang: String,
    pub tgt_lang: String,
    #[serde(flatten)]
    pub chunk: Chunk,
    pub reference: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CorpusFormat {
    JsonlDocs,
    PlaintextWithBoundaries,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    /// Fail on documents whose source and reference sentence counts differ.
    pub require_aligned: bool,
    /// Plaintext format only: reference file mirroring the source boundaries.
    pub reference: Option<PathBuf>,
    /// Plaintext format only.
    pub src_lang: Option<String>,
    /// Plaintext format only.
    pub tgt_lang: Option<String>,
}

#[derive(Deserialize)]
struct JsonlDoc {
    doc_id: String,
    src_lang: String,
    tgt_lang: String,
    src: Vec<String>,
    #[serde(rename = "ref")]
    reference: Vec<String>,
}

pub fn load_corpus(
    path: &Path,
    format: CorpusFormat,
    opts: &LoadOptions,
) -> Result<Vec<ParallelDocument>, CorpusError> {
    let docs = match format {
        CorpusFormat::JsonlDocs => load_jsonl(path, opts)?,
        CorpusFormat::PlaintextWithBoundaries => load_plaintext(path, opts)?,
    };
    let mut seen = HashSet::new();
    for d in &docs {
        if !seen.insert(d.doc_id().to_string()) {
            return Err(CorpusError::Invalid {
                doc_id: d.doc_id().to_string(),
                message: "duplicate doc_id".into(),
            });
        }
    }
    Ok(docs)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn load_jsonl(path: &Path, opts: &LoadOptions) -> Result<Vec<ParallelDocument>, CorpusError> {
    let file = std::fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line.map_err(io_err(path))?;
        let line = line.trim_start_matches('\u{feff}');
        if line.trim().is_empty() {
            continue;
        }
        let raw: JsonlDoc = serde_json::from_str(line).map_err(|e| CorpusError::Malformed {
            line: lineno,
            message: e.to_string(),
        })?;
        let pair = build_pair(
            raw.doc_id,
            raw.src_lang,
            raw.tgt_lang,
            raw.src,
            raw.reference,
            opts.require_aligned,
        )
        .map_err(|e| match e {
            CorpusError::Invalid { doc_id, message } => CorpusError::Malformed {
                line: lineno,
                message: format!("document {doc_id}: {message}"),
            },
            other => other,
        })?;
        out.push(pair);
    }
    Ok(out)
}

fn load_plaintext(src_path: &Path, opts: &LoadOptions) -> Result<Vec<ParallelDocument>, CorpusError> {
    let missing = |what: &str| CorpusError::Invalid {
        doc_id: "-".into(),
        message: format!("plaintext corpus requires {what}"),
    };
    let ref_path = opts.reference.as_deref().ok_or_else(|| missing("a reference file"))?;
    let src_lang = opts.src_lang.clone().ok_or_else(|| missing("a source language"))?;
    let tgt_lang = opts.tgt_lang.clone().ok_or_else(|| missing("a target language"))?;

    let src_docs = read_boundary_file(src_path)?;
    let ref_docs = read_boundary_file(ref_path)?;
    if src_docs.len() != ref_docs.len() {
        return Err(CorpusError::Invalid {
            doc_id: "-".into(),
            message: format!(
                "source has {} documents, reference has {}",
                src_docs.len(),
                ref_docs.len()
            ),
        });
    }
    src_docs
        .into_iter()
        .zip(ref_docs)
        .enumerate()
        .map(|(i, (s, r))| {
            build_pair(
                format!("doc{}", i + 1),
                src_lang.clone(),
                tgt_lang.clone(),
                s,
                r,
                opts.require_aligned,
            )
        })
        .collect()
}

fn read_boundary_file(path: &Path) -> Result<Vec<Vec<String>>, CorpusError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut docs = vec![Vec::new()];
    for line in text.trim_start_matches('\u{feff}').lines() {
        if line.trim() == DOC_BOUNDARY {
            docs.push(Vec::new());
        } else {
            docs.last_mut().unwrap().push(line.to_string());
        }
    }
    // a trailing separator does not open a new document
    if docs.len() > 1 && docs.last().is_some_and(Vec::is_empty) {
        docs.pop();
    }
    Ok(docs)
}

fn build_pair(
    doc_id: String,
    src_lang: String,
    tgt_lang: String,
    src: Vec<String>,
    reference: Vec<String>,
    require_aligned: bool,
) -> Result<ParallelDocument, CorpusError> {
    let invalid = |message: String| CorpusError::Invalid {
        doc_id: doc_id.clone(),
        message,
    };
    if doc_id.is_empty() {
        return Err(invalid("empty doc_id".into()));
    }
    if src_lang == tgt_lang {
        return Err(invalid(format!("source and target language are both {src_lang:?}")));
    }
    let src = normalize_sentences(&doc_id, "src", src);
    let reference = normalize_sentences(&doc_id, "ref", reference);
    if src.is_empty() || reference.is_empty() {
        return Err(invalid("document has no sentences".into()));
    }
    let aligned = src.len() == reference.len();
    if require_aligned && !aligned {
        return Err(invalid(format!(
            "unequal sentence counts: src {} vs ref {}",
            src.len(),
            reference.len()
        )));
    }
    Ok(ParallelDocument {
        source: Document {
            doc_id: doc_id.clone(),
            lang: src_lang,
            sentences: src,
        },
        reference: Document {
            doc_id: doc_id.clone(),
            lang: tgt_lang,
            sentences: reference,
        },
        aligned,
    })
}

fn normalize_sentences(doc_id: &str, side: &str, raw: Vec<String>) -> Vec<String> {
    let mut out = Vec::with_capacity(raw.len());
    for (i, s) in raw.into_iter().enumerate() {
        let s = normalize_sentence(&s);
        if s.is_empty() {
            warn!(doc_id, side, index = i, "dropping empty sentence");
            continue;
        }
        out.push(s);
    }
    out
}

/// Strips BOMs, folds line breaks (and the whitespace around them) into one
/// space, and trims the ends.
pub fn normalize_sentence(s: &str) -> String {
    let s = s.replace('\u{feff}', "");
    let mut out = String::with_capacity(s.len());
    for (i, line) in s
        .split(['\n', '\r'])
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .enumerate()
    {
        if i > 0 {
            out.push(' ');
        }
        out.push_str(line);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write(dir: &Path, name: &str, body: &str) -> PathBuf {
        let p = dir.join(name);
        std::fs::File::create(&p).unwrap().write_all(body.as_bytes()).unwrap();
        p
    }

    fn aligned() -> LoadOptions {
        LoadOptions {
            require_aligned: true,
            ..Default::default()
        }
    }

    #[test]
    fn jsonl_maps_fields() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"doc_id":"d1","src_lang":"de","tgt_lang":"en","src":["A.","B."],"ref":["X.","Y."]}"#,
        );
        let docs = load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).unwrap();
        assert_eq!(docs.len(), 1);
        assert!(docs[0].aligned);
        assert_eq!(docs[0].source.sentences, vec!["A.", "B."]);
        assert_eq!(docs[0].reference.sentences, vec!["X.", "Y."]);
        assert_eq!(docs[0].reference.lang, "en");
    }

    #[test]
    fn jsonl_preserves_order_of_150_docs() {
        let dir = tempfile::tempdir().unwrap();
        let body: String = (0..150)
            .map(|i| {
                format!(
                    "{{\"doc_id\":\"d{i}\",\"src_lang\":\"zh\",\"tgt_lang\":\"en\",\"src\":[\"s{i}\"],\"ref\":[\"r{i}\"]}}\n"
                )
            })
            .collect();
        let p = write(dir.path(), "c.jsonl", &body);
        let docs = load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).unwrap();
        assert_eq!(docs.len(), 150);
        assert_eq!(docs[149].doc_id(), "d149");
    }

    #[test]
    fn unequal_counts_name_the_document() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"doc_id":"d1","src_lang":"de","tgt_lang":"en","src":["A.","B.","C."],"ref":["X.","Y."]}"#,
        );
        let err = load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).unwrap_err();
        assert!(err.to_string().contains("d1"), "{err}");

        let docs = load_corpus(&p, CorpusFormat::JsonlDocs, &LoadOptions::default()).unwrap();
        assert!(!docs[0].aligned);
    }

    #[test]
    fn malformed_line_reports_line_number() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"doc_id":"d1","src_lang":"de","tgt_lang":"en","src":["A."],"ref":["X."]}"#;
        let p = write(dir.path(), "c.jsonl", &format!("{good}\n{{not json\n"));
        match load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).unwrap_err() {
            CorpusError::Malformed { line, .. } => assert_eq!(line, 2),
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn duplicate_doc_ids_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let good = r#"{"doc_id":"d1","src_lang":"de","tgt_lang":"en","src":["A."],"ref":["X."]}"#;
        let p = write(dir.path(), "c.jsonl", &format!("{good}\n{good}\n"));
        assert!(load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).is_err());
    }

    #[test]
    fn normalization_rules() {
        assert_eq!(normalize_sentence("\u{feff}Hello"), "Hello");
        assert_eq!(normalize_sentence("a\nb"), "a b");
        assert_eq!(normalize_sentence("a \r\n  b\n\nc"), "a b c");
        assert_eq!(normalize_sentence("  x  "), "x");
        assert_eq!(normalize_sentence("a  b"), "a  b");

        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            "\u{feff}{\"doc_id\":\"d1\",\"src_lang\":\"de\",\"tgt_lang\":\"en\",\"src\":[\"A\\nB.\",\"\",\"C.\"],\"ref\":[\"X.\",\"Y.\"]}",
        );
        let docs = load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).unwrap();
        assert_eq!(docs[0].source.sentences, vec!["A B.", "C."]);
    }

    #[test]
    fn plaintext_with_boundaries() {
        let dir = tempfile::tempdir().unwrap();
        let s = write(dir.path(), "src.txt", "A.\nB.\n<docline>\nC.\n");
        let r = write(dir.path(), "ref.txt", "X.\nY.\n<docline>\nZ.\n");
        let opts = LoadOptions {
            require_aligned: true,
            reference: Some(r),
            src_lang: Some("fr".into()),
            tgt_lang: Some("en".into()),
        };
        let docs = load_corpus(&s, CorpusFormat::PlaintextWithBoundaries, &opts).unwrap();
        assert_eq!(docs.len(), 2);
        assert_eq!(docs[0].doc_id(), "doc1");
        assert_eq!(docs[1].source.sentences, vec!["C."]);
        assert_eq!(docs[1].reference.sentences, vec!["Z."]);
    }

    #[test]
    fn same_language_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = write(
            dir.path(),
            "c.jsonl",
            r#"{"doc_id":"d1","src_lang":"en","tgt_lang":"en","src":["A."],"ref":["X."]}"#,
        );
        assert!(load_corpus(&p, CorpusFormat::JsonlDocs, &aligned()).is_err());
    }
}
