use std::time::Duration;

use refinekit_core::llm_client::{Backoff, DecodeParams, EndpointConfig, LlmClient, LlmError};
use refinekit_fixtures::{Fixture, Reply};

fn fast() -> Backoff {
    Backoff {
        base: Duration::from_millis(5),
        factor: 2.0,
        jitter: 0.0,
        cap: Duration::from_millis(20),
    }
}

fn client(f: &Fixture) -> LlmClient {
    LlmClient::with_backoff(EndpointConfig::new(f.base_url()), fast()).unwrap()
}

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|x| x.to_string()).collect()
}

#[tokio::test]
async fn echo_returns_prompt() {
    let f = Fixture::echo();
    let out = client(&f)
        .complete("hello there", &DecodeParams::default())
        .await
        .unwrap();
    assert_eq!(out, "hello there");
    let call = &f.log()[0];
    assert_eq!(call.path, "/v1/chat/completions");
    assert_eq!(call.body["temperature"], 0.0);
    assert_eq!(call.body["top_p"], 1.0);
    assert_eq!(call.body["num_beams"], 3);
}

#[tokio::test]
async fn sampling_params_are_sent_when_enabled() {
    let f = Fixture::echo();
    client(&f).complete("x", &DecodeParams::diverse()).await.unwrap();
    let body = &f.log()[0].body;
    assert_eq!(body["temperature"], 0.3);
    assert_eq!(body["top_p"], 0.7);
}

#[tokio::test]
async fn retries_after_two_429s() {
    let f = Fixture::spawn(|c| {
        if c.index < 2 {
            Reply::Status(429, "slow down".into())
        } else {
            Reply::chat("ok")
        }
    });
    let c = client(&f);
    assert_eq!(c.complete("p", &DecodeParams::default()).await.unwrap(), "ok");
    assert_eq!(c.retry_count(), 2);
    assert_eq!(f.calls(), 3);
}

#[tokio::test]
async fn retry_budget_exhausted() {
    let f = Fixture::spawn(|_| Reply::Status(503, "down".into()));
    let mut cfg = EndpointConfig::new(f.base_url());
    cfg.max_retries = 2;
    let c = LlmClient::with_backoff(cfg, fast()).unwrap();
    let err = c.complete("p", &DecodeParams::default()).await.unwrap_err();
    assert!(matches!(err, LlmError::Exhausted { attempts: 3, .. }), "{err}");
    assert_eq!(f.calls(), 3);
}

#[tokio::test]
async fn non_retryable_status_surfaces_body() {
    let f = Fixture::spawn(|_| Reply::Status(401, "bad key".into()));
    let c = client(&f);
    match c.complete("p", &DecodeParams::default()).await.unwrap_err() {
        LlmError::Status { status, body } => {
            assert_eq!(status, 401);
            assert!(body.contains("bad key"));
        }
        e => panic!("unexpected {e}"),
    }
    assert_eq!(c.retry_count(), 0);
}

#[tokio::test]
async fn endpoint_down_without_retries() {
    let port = {
        let l = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
        l.local_addr().unwrap().port()
    };
    let mut cfg = EndpointConfig::new(format!("http://127.0.0.1:{port}"));
    cfg.max_retries = 0;
    let c = LlmClient::with_backoff(cfg, fast()).unwrap();
    let err = c.complete("p", &DecodeParams::default()).await.unwrap_err();
    assert!(matches!(err, LlmError::Connect(_)), "{err}");
}

#[tokio::test]
async fn num_beams_rejection_falls_back_once() {
    let f = Fixture::spawn(|c| {
        if c.body.get("num_beams").is_some() {
            Reply::Status(400, "unknown field num_beams".into())
        } else {
            Reply::chat("greedy")
        }
    });
    let c = client(&f);
    assert_eq!(c.complete("a", &DecodeParams::default()).await.unwrap(), "greedy");
    assert_eq!(c.complete("b", &DecodeParams::default()).await.unwrap(), "greedy");
    assert_eq!(f.calls(), 3);
}

#[tokio::test]
async fn bounded_concurrency() {
    let f = Fixture::spawn_with_latency(Duration::from_millis(40), |c| Reply::chat(c.prompt()));
    let mut cfg = EndpointConfig::new(f.base_url());
    cfg.max_in_flight = 3;
    let c = LlmClient::with_backoff(cfg, fast()).unwrap();
    let prompts: Vec<String> = (0..10).map(|i| format!("p{i}")).collect();
    let out = c
        .complete_batch(&prompts, &DecodeParams::default(), false)
        .await
        .into_result()
        .unwrap();
    assert_eq!(out, prompts);
    assert!(f.peak_in_flight() <= 3, "peak {}", f.peak_in_flight());
    assert!(f.peak_in_flight() >= 2);
}

#[tokio::test]
async fn batch_keeps_order() {
    let f = Fixture::echo();
    let out = client(&f)
        .complete_batch(&strings(&["a", "b"]), &DecodeParams::default(), false)
        .await
        .into_result()
        .unwrap();
    assert_eq!(out, ["a", "b"]);
}

#[tokio::test]
async fn partial_failure_reports_index() {
    let f = Fixture::spawn(|c| {
        if c.prompt() == "p2" {
            Reply::Status(400, "rejected".into())
        } else {
            Reply::chat(c.prompt())
        }
    });
    let prompts: Vec<String> = (0..5).map(|i| format!("p{i}")).collect();
    let outcome = client(&f)
        .complete_batch(&prompts, &DecodeParams::default(), false)
        .await;
    assert_eq!(outcome.succeeded(), 4);
    let err = outcome.into_result().unwrap_err();
    assert_eq!(err.failed_indices(), [2]);
    assert_eq!(err.partial[4].as_deref(), Some("p4"));
    assert!(err.partial[2].is_none());
}

#[tokio::test]
async fn fail_fast_skips_unsent_prompts() {
    let f = Fixture::spawn(|c| {
        if c.prompt() == "p0" {
            Reply::Status(400, "rejected".into())
        } else {
            Reply::chat(c.prompt())
        }
    });
    let mut cfg = EndpointConfig::new(f.base_url());
    cfg.max_in_flight = 1;
    let c = LlmClient::with_backoff(cfg, fast()).unwrap();
    let prompts: Vec<String> = (0..4).map(|i| format!("p{i}")).collect();
    let outcome = c.complete_batch(&prompts, &DecodeParams::default(), true).await;
    assert!(matches!(outcome.results[0], Err(LlmError::Status { status: 400, .. })));
    assert!(outcome.results[1..].iter().all(|r| matches!(r, Err(LlmError::Aborted))));
    assert_eq!(f.calls(), 1);
}

#[test]
fn invalid_config_is_rejected() {
    assert!(LlmClient::new(EndpointConfig::new("not a url")).is_err());
    let mut cfg = EndpointConfig::new("http://127.0.0.1:1");
    cfg.max_in_flight = 0;
    assert!(matches!(LlmClient::new(cfg), Err(LlmError::Config(_))));
}
