use serde::{Deserialize, Serialize};

use super::{CorpusError, Document, Tokenizer};

/// Budget used throughout the pipeline unless configured otherwise.
pub const DEFAULT_CHUNK_BUDGET: usize = 512;

/// A contiguous run of sentences from one document.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Chunk {
    pub doc_id: String,
    pub chunk_index: usize,
    /// Half-open `[start, end)` into the parent document's sentences.
    pub sentence_span: (usize, usize),
    pub sentences: Vec<String>,
    pub token_lengths: Vec<usize>,
}

impl Chunk {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    pub fn total_tokens(&self) -> usize {
        self.token_lengths.iter().sum()
    }
}

/// Greedy sentence packing: a sentence opens a new chunk when adding it would
/// push the running length past `budget`. A sentence that alone exceeds the
/// budget becomes a singleton chunk; empty chunks are never emitted.
pub fn split_into_chunks(doc: &Document, budget: usize, tok: &Tokenizer) -> Vec<Chunk> {
    let mut chunks = Vec::new();
    let mut start = 0;
    let mut lengths: Vec<usize> = Vec::new();
    let mut running = 0usize;

    for (i, sentence) in doc.sentences.iter().enumerate() {
        let len = tok.token_length(sentence);
        if running + len > budget {
            if !lengths.is_empty() {
                chunks.push(make_chunk(doc, chunks.len(), start, std::mem::take(&mut lengths)));
            }
            start = i;
            running = len;
        } else {
            running += len;
        }
        lengths.push(len);
    }
    if !lengths.is_empty() {
        chunks.push(make_chunk(doc, chunks.len(), start, lengths));
    }
    chunks
}

fn make_chunk(doc: &Document, chunk_index: usize, start: usize, token_lengths: Vec<usize>) -> Chunk {
    let end = start + token_lengths.len();
    Chunk {
        doc_id: doc.doc_id.clone(),
        chunk_index,
        sentence_span: (start, end),
        sentences: doc.sentences[start..end].to_vec(),
        token_lengths,
    }
}

/// Stitches per-chunk outputs back into a document, ordered by `chunk_index`.
pub fn reassemble(chunks: &[Chunk], sentence_lists: &[Vec<String>], lang: &str) -> Result<Document, CorpusError> {
    if chunks.is_empty() {
        return Err(CorpusError::Reassemble("no chunks".into()));
    }
    if chunks.len() != sentence_lists.len() {
        return Err(CorpusError::Reassemble(format!(
            "{} chunks but {} output lists",
            chunks.len(),
            sentence_lists.len()
        )));
    }
    let doc_id = &chunks[0].doc_id;
    if let Some(other) = chunks.iter().find(|c| &c.doc_id != doc_id) {
        return Err(CorpusError::Reassemble(format!(
            "mixed doc_ids {doc_id:?} and {:?}",
            other.doc_id
        )));
    }

    let mut order: Vec<usize> = (0..chunks.len()).collect();
    order.sort_by_key(|&i| chunks[i].chunk_index);

    let mut sentences = Vec::new();
    let mut next_start = 0;
    for (expected, &i) in order.iter().enumerate() {
        let chunk = &chunks[i];
        if chunk.chunk_index > expected {
            return Err(CorpusError::Reassemble(format!("gap at chunk {expected}")));
        }
        if chunk.chunk_index < expected {
            return Err(CorpusError::Reassemble(format!(
                "duplicate chunk {}",
                chunk.chunk_index
            )));
        }
        let (s, e) = chunk.sentence_span;
        if s > next_start {
            return Err(CorpusError::Reassemble(format!(
                "gap at chunk {expected}: span starts at {s}, expected {next_start}"
            )));
        }
        if s < next_start {
            return Err(CorpusError::Reassemble(format!(
                "overlap at chunk {expected}: span starts at {s}, expected {next_start}"
            )));
        }
        if e <= s {
            return Err(CorpusError::Reassemble(format!("empty span at chunk {expected}")));
        }
        next_start = e;
        sentences.extend(sentence_lists[i].iter().cloned());
    }

    Ok(Document {
        doc_id: doc_id.clone(),
        lang: lang.to_string(),
        sentences,
    })
}
