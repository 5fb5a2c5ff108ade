use proptest::prelude::*;

use refinekit_core::annotate::{aggregate_errors, parse_mqm, ErrorType};
use refinekit_core::corpus::{reassemble, split_into_chunks, Document, Tokenizer};
use refinekit_core::metrics::{compare_systems, score_distribution};
use refinekit_core::prompting::mark_sentences;
use refinekit_core::quality::{sentence_weight, weighted_nll, DaScore, TokenWeightVector, WeightParams};
use refinekit_core::rerank::rerank_select;
use refinekit_core::translate::parse_marked;

fn sentence() -> impl Strategy<Value = String> {
    "[a-zA-Z][a-zA-Z ,.!?]{0,30}[a-zA-Z.]".prop_map(|s| s.split_whitespace().collect::<Vec<_>>().join(" "))
}

proptest! {
    #[test]
    fn chunks_respect_budget_and_round_trip(
        sents in prop::collection::vec(sentence(), 1..30),
        budget in 1usize..40,
    ) {
        let doc = Document { doc_id: "d".into(), lang: "en".into(), sentences: sents.clone() };
        let tok = Tokenizer::Whitespace;
        let chunks = split_into_chunks(&doc, budget, &tok);
        prop_assert!(chunks.iter().all(|c| !c.is_empty()));
        for c in &chunks {
            if c.len() > 1 {
                prop_assert!(c.total_tokens() <= budget);
            }
        }
        let flat: Vec<String> = chunks.iter().flat_map(|c| c.sentences.clone()).collect();
        prop_assert_eq!(&flat, &sents);
        let hyps: Vec<Vec<String>> = chunks.iter().map(|c| c.sentences.clone()).collect();
        prop_assert_eq!(reassemble(&chunks, &hyps, "en").unwrap().sentences, sents);
    }

    #[test]
    fn mark_parse_round_trip(sents in prop::collection::vec(sentence(), 1..20)) {
        let (out, rep) = parse_marked(&mark_sentences(&sents), sents.len());
        prop_assert_eq!(out, sents);
        prop_assert!(rep.is_clean());
    }

    #[test]
    fn parse_always_yields_expected_length(text in ".{0,200}", n in 1usize..10) {
        let (out, rep) = parse_marked(&text, n);
        prop_assert_eq!(out.len(), n);
        prop_assert_eq!(rep.expected_n, n);
    }

    #[test]
    fn weight_is_symmetric_and_monotone(a in 0.0f64..=1.0, b in 0.0f64..=1.0, d in 0.0f64..=1.0) {
        let p = WeightParams::default();
        let w = sentence_weight(DaScore::new(a).unwrap(), DaScore::new(b).unwrap(), &p).unwrap();
        let w_rev = sentence_weight(DaScore::new(b).unwrap(), DaScore::new(a).unwrap(), &p).unwrap();
        prop_assert_eq!(w, w_rev);
        let a2 = (a + d).min(1.0);
        let w2 = sentence_weight(DaScore::new(a2).unwrap(), DaScore::new(b).unwrap(), &p).unwrap();
        prop_assert!(w2 >= w);
    }

    #[test]
    fn nll_is_linear_in_weights(
        lps in prop::collection::vec(-20.0f64..0.0, 1..50),
        k in 0.1f64..10.0,
    ) {
        let n = lps.len();
        let base = weighted_nll(&lps, &TokenWeightVector::uniform(n, 1.0)).unwrap();
        let plain: f64 = -lps.iter().sum::<f64>();
        prop_assert!((base - plain).abs() <= 1e-12 * plain.abs().max(1.0));
        let scaled = weighted_nll(&lps, &TokenWeightVector::uniform(n, k)).unwrap();
        prop_assert!((scaled - k * base).abs() <= 1e-9 * (k * base).abs().max(1.0));
    }

    #[test]
    fn rerank_scaling_invariance(
        scores in prop::collection::vec((0.0f64..=0.5, 0.0f64..=0.5), 1..20),
        c in 0.01f64..2.0,
    ) {
        let n = scores.len();
        let y: Vec<String> = (0..n).map(|i| format!("y{i}")).collect();
        let z: Vec<String> = (0..n).map(|i| format!("z{i}")).collect();
        let ky: Vec<DaScore> = scores.iter().map(|s| DaScore::new(s.0).unwrap()).collect();
        let kz: Vec<DaScore> = scores.iter().map(|s| DaScore::new(s.1).unwrap()).collect();
        let cy: Vec<DaScore> = scores.iter().map(|s| DaScore::new(s.0 * c).unwrap()).collect();
        let cz: Vec<DaScore> = scores.iter().map(|s| DaScore::new(s.1 * c).unwrap()).collect();
        prop_assert_eq!(rerank_select(&y, &z, &ky, &kz).unwrap(), rerank_select(&y, &z, &cy, &cz).unwrap());
        prop_assert_eq!(rerank_select(&y, &y, &ky, &kz).unwrap(), y);
    }

    #[test]
    fn compare_partitions_items(
        pairs in prop::collection::vec((0.0f64..1.0, 0.0f64..1.0), 0..100),
        eps in 0.0f64..0.1,
    ) {
        let (a, b): (Vec<f64>, Vec<f64>) = pairs.into_iter().unzip();
        let r = compare_systems(&a, &b, eps).unwrap();
        prop_assert_eq!(r.wins + r.ties + r.losses, a.len());
    }

    #[test]
    fn histogram_counts_every_score(scores in prop::collection::vec(0.0f64..1.0, 1..200)) {
        let bins = score_distribution(&scores, 0.05).unwrap();
        prop_assert_eq!(bins.iter().map(|b| b.1).sum::<usize>(), scores.len());
    }

    #[test]
    fn mqm_parse_length_and_tally(reply in ".{0,300}", n in 1usize..8) {
        let recs = parse_mqm(&reply, n);
        prop_assert_eq!(recs.len(), n);
        let labels = recs.iter().flat_map(|r| &r.error_types).filter(|t| **t != ErrorType::None).count();
        let total: usize = aggregate_errors(&[recs]).iter().map(|x| x.1).sum();
        prop_assert_eq!(total, labels);
    }
}
