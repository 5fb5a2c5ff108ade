use std::time::Duration;

use refinekit_core::corpus::{Chunk, ChunkPair};
use refinekit_core::llm_client::{Backoff, DecodeParams, EndpointConfig, LlmClient};
use refinekit_core::prompting::TemplateSet;
use refinekit_core::quality::DaScore;
use refinekit_core::rerank::{rerank_refine, rerank_select, RerankMode};
use refinekit_core::scorer::{mock_score, HttpScorer, ScoreItem, ScoreMetric, Scorer};
use refinekit_core::translate::{refine, translate_doc2doc, translate_sent2sent};
use refinekit_fixtures::{Fixture, Reply};
use serde_json::json;

fn client(f: &Fixture) -> LlmClient {
    let backoff = Backoff {
        base: Duration::from_millis(5),
        factor: 2.0,
        jitter: 0.0,
        cap: Duration::from_millis(10),
    };
    LlmClient::with_backoff(EndpointConfig::new(f.base_url()), backoff).unwrap()
}

fn pair(sentences: &[&str]) -> ChunkPair {
    let n = sentences.len();
    ChunkPair {
        src_lang: "de".into(),
        tgt_lang: "en".into(),
        chunk: Chunk {
            doc_id: "doc1".into(),
            chunk_index: 0,
            sentence_span: (0, n),
            sentences: sentences.iter().map(|s| s.to_string()).collect(),
            token_lengths: vec![1; n],
        },
        reference: None,
    }
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

/// Replies with the text between `start` and `end` in the prompt.
fn section_echo(start: &'static str, end: &'static str) -> Fixture {
    Fixture::spawn(move |c| {
        let p = c.prompt();
        let from = p.find(start).map_or(0, |i| i + start.len());
        let to = p[from..].find(end).map_or(p.len(), |i| from + i);
        Reply::chat(&p[from..to])
    })
}

#[tokio::test]
async fn sent2sent_makes_one_call_per_sentence() {
    let f = Fixture::echo();
    let p = pair(&["Eins.", "Zwei.", "Drei."]);
    let out = translate_sent2sent(&client(&f), &TemplateSet::default(), &p, &DecodeParams::default())
        .await
        .unwrap();
    assert_eq!(out.len(), 3);
    for (o, s) in out.iter().zip(&p.chunk.sentences) {
        assert!(o.contains(s.as_str()));
    }
    assert_eq!(f.calls(), 3);
}

#[tokio::test]
async fn sent2sent_single_sentence_single_call() {
    let f = Fixture::echo();
    translate_sent2sent(
        &client(&f),
        &TemplateSet::default(),
        &pair(&["Nur."]),
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    assert_eq!(f.calls(), 1);
}

#[tokio::test]
async fn sent2sent_empty_reply_kept_as_empty() {
    let f = Fixture::spawn(|c| {
        if c.prompt().ends_with("Zwei.") {
            Reply::chat("  ")
        } else {
            Reply::chat("ok")
        }
    });
    let out = translate_sent2sent(
        &client(&f),
        &TemplateSet::default(),
        &pair(&["Eins.", "Zwei."]),
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    assert_eq!(out, ["ok", ""]);
}

#[tokio::test]
async fn doc2doc_is_one_call() {
    let f = Fixture::spawn(|_| Reply::chat("#1: One.\n#2: Two."));
    let (out, rep) = translate_doc2doc(
        &client(&f),
        &TemplateSet::default(),
        &pair(&["Eins.", "Zwei."]),
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    assert_eq!(out, ["One.", "Two."]);
    assert!(rep.is_clean());
    assert_eq!(f.calls(), 1);
}

#[tokio::test]
async fn refine_with_identical_candidates() {
    let f = section_echo("Candidate 1:\n", "\nCandidate 2:");
    let p = pair(&["Eins.", "Zwei."]);
    let h = strings(&["One.", "Two."]);
    let (out, rep) = refine(
        &client(&f),
        &TemplateSet::default(),
        &p,
        &h,
        &h,
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    assert_eq!(out, h);
    assert!(rep.is_clean());
    let prompt = f.log()[0].prompt().to_string();
    assert_eq!(prompt.matches("#1: One.").count(), 2);
    assert!(refine(
        &client(&f),
        &TemplateSet::default(),
        &p,
        &h[..1],
        &h,
        &DecodeParams::default()
    )
    .await
    .is_err());
}

#[tokio::test]
async fn rerank_refine_with_echo_refiner() {
    let f = section_echo("Candidate:\n", "\nImproved translation:");
    let p = pair(&["Eins.", "Zwei."]);
    let y = strings(&["y1", "y2"]);
    let z = strings(&["z1", "z2"]);
    let ky = [DaScore::new(0.2).unwrap(), DaScore::new(0.9).unwrap()];
    let kz = [DaScore::new(0.5).unwrap(), DaScore::new(0.1).unwrap()];
    let (out, _) = rerank_refine(
        &client(&f),
        &TemplateSet::default(),
        &p,
        &y,
        &z,
        &ky,
        &kz,
        RerankMode::AsDocCandidate,
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    assert_eq!(out, rerank_select(&y, &z, &ky, &kz).unwrap());
    assert_eq!(out, ["z1", "y2"]);
    assert_eq!(f.calls(), 1);
}

#[tokio::test]
async fn rerank_refine_dominant_y_fills_candidate_block() {
    let f = section_echo("Candidate:\n", "\nImproved translation:");
    let p = pair(&["Eins.", "Zwei."]);
    let y = strings(&["y1", "y2"]);
    let z = strings(&["z1", "z2"]);
    let hi = [DaScore::new(0.9).unwrap(); 2];
    let lo = [DaScore::new(0.1).unwrap(); 2];
    rerank_refine(
        &client(&f),
        &TemplateSet::default(),
        &p,
        &y,
        &z,
        &hi,
        &lo,
        RerankMode::AsSentCandidate,
        &DecodeParams::default(),
    )
    .await
    .unwrap();
    let prompt = f.log()[0].prompt().to_string();
    let block = &prompt[prompt.find("Candidate:\n").unwrap()..];
    assert!(block.contains("#1: y1\n#2: y2"));
    assert!(!block.contains("z1") && !block.contains("z2"));
}

#[tokio::test]
async fn http_scorer_matches_mock_double() {
    let f = Fixture::spawn(|c| match c.path.as_str() {
        "/v1/score" => {
            let items: Vec<ScoreItem> = serde_json::from_value(c.body["items"].clone()).unwrap();
            let scores: Vec<f64> = items.iter().map(mock_score).collect();
            Reply::Json(200, json!({ "scores": scores }))
        }
        _ => Reply::Status(404, "no".into()),
    });
    let http = HttpScorer::new(EndpointConfig::new(f.base_url()))
        .unwrap()
        .batch_size(3);
    let items: Vec<ScoreItem> = (0..7)
        .map(|i| ScoreItem::new(format!("s{i}"), format!("m{i}"), Some(format!("r{i}"))))
        .collect();
    let remote = Scorer::Http(http).score(ScoreMetric::Da, &items).await.unwrap();
    let local = Scorer::Mock.score(ScoreMetric::Da, &items).await.unwrap();
    assert_eq!(remote, local);
    assert_eq!(f.calls(), 3);
}

#[tokio::test]
async fn http_scorer_length_mismatch() {
    let f = Fixture::spawn(|_| Reply::Json(200, json!({ "scores": [0.5] })));
    let http = HttpScorer::new(EndpointConfig::new(f.base_url())).unwrap();
    let items = vec![ScoreItem::new("a", "b", None), ScoreItem::new("c", "d", None)];
    assert!(Scorer::Http(http).score(ScoreMetric::Qe, &items).await.is_err());
}
