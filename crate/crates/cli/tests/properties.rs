use proptest::prelude::*;

use refinekit_cli::artifacts::{documents_from_chunks, SystemChunk};
use refinekit_core::corpus::{Document, ParallelDocument, Tokenizer};

fn document(id: usize, sentences: Vec<String>) -> ParallelDocument {
    let source = Document {
        doc_id: format!("d{id}"),
        lang: "de".into(),
        sentences: sentences.clone(),
    };
    let reference = Document {
        lang: "en".into(),
        ..source.clone()
    };
    ParallelDocument {
        source,
        reference,
        aligned: true,
    }
}

proptest! {
    #[test]
    fn per_chunk_outputs_rebuild_whole_documents(
        docs in prop::collection::vec(prop::collection::vec("[a-z]{1,6}( [a-z]{1,6}){0,5}", 1..12), 1..6),
        budget in 1usize..20,
    ) {
        let tok = Tokenizer::Whitespace;
        let corpus: Vec<ParallelDocument> = docs.into_iter().enumerate().map(|(i, s)| document(i, s)).collect();
        let chunks: Vec<_> = corpus.iter().flat_map(|d| d.chunk(budget, &tok)).collect();
        let outputs: Vec<SystemChunk> = chunks
            .iter()
            .rev()
            .map(|p| SystemChunk {
                doc_id: p.chunk.doc_id.clone(),
                chunk_index: p.chunk.chunk_index,
                sentences: p.chunk.sentences.iter().map(|s| s.to_uppercase()).collect(),
                parse_report: None,
                degraded: false,
            })
            .collect();
        let rebuilt = documents_from_chunks(&chunks, &outputs, |c| c.tgt_lang.clone()).unwrap();
        prop_assert_eq!(rebuilt.len(), corpus.len());
        for (r, d) in rebuilt.iter().zip(&corpus) {
            prop_assert_eq!(&r.doc_id, &d.source.doc_id);
            prop_assert_eq!(&r.lang, "en");
            let want: Vec<String> = d.source.sentences.iter().map(|s| s.to_uppercase()).collect();
            prop_assert_eq!(&r.sentences, &want);
        }
    }
}
