//! Client for the neural scoring service (quality scores, embeddings,
//! perplexity) plus an in-process double that reproduces the service's mock
//! mode bit for bit.

use std::sync::Arc;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};
use thiserror::Error;

use crate::llm_client::{Backoff, EndpointConfig, LlmError, Transport};

/// Dimension of mock embeddings.
pub const MOCK_EMBED_DIM: usize = 16;

#[derive(Debug, Error)]
pub enum ScorerError {
    #[error("schema violation at {path}: {message}")]
    Schema { path: String, message: String },
    #[error("scorer returned {got} values for {expected} items")]
    Length { expected: usize, got: usize },
    #[error("scorer returned invalid value at index {index}: {message}")]
    Value { index: usize, message: String },
    #[error(transparent)]
    Http(#[from] LlmError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreMetric {
    /// Reference-based direct assessment.
    Da,
    /// Reference-free quality estimation.
    Qe,
}

impl ScoreMetric {
    pub fn as_str(self) -> &'static str {
        match self {
            ScoreMetric::Da => "da",
            ScoreMetric::Qe => "qe",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScoreItem {
    pub src: String,
    pub mt: String,
    #[serde(rename = "ref", skip_serializing_if = "Option::is_none", default)]
    pub reference: Option<String>,
}

impl ScoreItem {
    pub fn new(src: impl Into<String>, mt: impl Into<String>, reference: Option<String>) -> Self {
        ScoreItem {
            src: src.into(),
            mt: mt.into(),
            reference,
        }
    }
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> ScorerError {
    ScorerError::Schema {
        path: path.into(),
        message: message.into(),
    }
}

pub fn validate_score_request(metric: ScoreMetric, items: &[ScoreItem]) -> Result<(), ScorerError> {
    if items.is_empty() {
        return Err(schema("items", "must be non-empty"));
    }
    for (i, it) in items.iter().enumerate() {
        match (metric, &it.reference) {
            (ScoreMetric::Da, None) => return Err(schema(format!("items[{i}].ref"), "required for metric da")),
            (ScoreMetric::Qe, Some(_)) => return Err(schema(format!("items[{i}].ref"), "not allowed for metric qe")),
            _ => {}
        }
    }
    Ok(())
}

fn validate_texts(texts: &[String], reject_empty: bool) -> Result<(), ScorerError> {
    if texts.is_empty() {
        return Err(schema("texts", "must be non-empty"));
    }
    if reject_empty {
        if let Some(i) = texts.iter().position(|t| t.is_empty()) {
            return Err(schema(format!("texts[{i}]"), "must be a non-empty string"));
        }
    }
    Ok(())
}

/// 64-bit FNV-1a.
pub fn fnv1a64(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Top 53 bits of `h` scaled onto [0, 1]; exact in IEEE doubles.
fn unit_interval(h: u64) -> f64 {
    (h >> 11) as f64 / ((1u64 << 53) - 1) as f64
}

/// Mock quality score: FNV-1a of `src|mt|ref` (empty ref for QE) folded into [0, 1].
pub fn mock_score(item: &ScoreItem) -> f64 {
    let key = format!("{}|{}|{}", item.src, item.mt, item.reference.as_deref().unwrap_or(""));
    unit_interval(fnv1a64(key.as_bytes()))
}

/// Deterministic unit-length pseudo-embedding.
pub fn mock_embedding(text: &str) -> Vec<f64> {
    let mut v: Vec<f64> = (0..MOCK_EMBED_DIM as u32)
        .map(|j| {
            let mut key = text.as_bytes().to_vec();
            key.push(0xff);
            key.extend_from_slice(&j.to_le_bytes());
            unit_interval(fnv1a64(&key)) * 2.0 - 1.0
        })
        .collect();
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 {
        v[0] = 1.0;
    } else {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    v
}

/// Deterministic positive pseudo-perplexity in [1, 1001).
pub fn mock_ppl(text: &str) -> f64 {
    1.0 + (fnv1a64(text.as_bytes()) % 1_000_000) as f64 / 1000.0
}

/// HTTP client for the scoring service.
#[derive(Clone)]
pub struct HttpScorer {
    transport: Arc<Transport>,
    batch_size: usize,
}

impl HttpScorer {
    pub fn new(cfg: EndpointConfig) -> Result<Self, ScorerError> {
        Self::with_backoff(cfg, Backoff::default())
    }

    pub fn with_backoff(cfg: EndpointConfig, backoff: Backoff) -> Result<Self, ScorerError> {
        Ok(HttpScorer {
            transport: Arc::new(Transport::new(cfg, backoff)?),
            batch_size: 64,
        })
    }

    /// Items per request; requests for one call run concurrently under the
    /// endpoint's in-flight bound.
    pub fn batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub async fn health(&self) -> Result<Value, ScorerError> {
        let url = self.transport.cfg.endpoint("/v1/health");
        let resp = reqwest::get(&url).await.map_err(|e| LlmError::Connect(e.to_string()))?;
        resp.json()
            .await
            .map_err(|e| ScorerError::Http(LlmError::Decode(e.to_string())))
    }

    async fn batched<F>(&self, n: usize, path: &str, body: F, field: &str) -> Result<Vec<Value>, ScorerError>
    where
        F: Fn(std::ops::Range<usize>) -> Value,
    {
        let ranges: Vec<_> = (0..n)
            .step_by(self.batch_size)
            .map(|s| s..(s + self.batch_size).min(n))
            .collect();
        let futs = ranges.iter().map(|r| {
            let payload = body(r.clone());
            async move {
                let v = self.transport.post_json(path, || payload.clone()).await?;
                let arr = v
                    .get(field)
                    .and_then(Value::as_array)
                    .cloned()
                    .ok_or_else(|| ScorerError::Http(LlmError::Decode(format!("missing {field:?} array"))))?;
                if arr.len() != r.len() {
                    return Err(ScorerError::Length {
                        expected: r.len(),
                        got: arr.len(),
                    });
                }
                Ok::<_, ScorerError>(arr)
            }
        });
        let parts = futures::future::try_join_all(futs).await?;
        Ok(parts.into_iter().flatten().collect())
    }
}

fn as_f64(v: &Value, index: usize) -> Result<f64, ScorerError> {
    v.as_f64().ok_or_else(|| ScorerError::Value {
        index,
        message: format!("expected a number, got {v}"),
    })
}

/// Either the remote service or the in-process mock double.
#[derive(Clone)]
pub enum Scorer {
    Http(HttpScorer),
    Mock,
}

impl Scorer {
    pub fn is_mock(&self) -> bool {
        matches!(self, Scorer::Mock)
    }

    /// Raw scores, positionally aligned with `items`. Values are not range
    /// checked here; callers ingest them as `DaScore`.
    pub async fn score(&self, metric: ScoreMetric, items: &[ScoreItem]) -> Result<Vec<f64>, ScorerError> {
        validate_score_request(metric, items)?;
        match self {
            Scorer::Mock => Ok(items.iter().map(mock_score).collect()),
            Scorer::Http(h) => {
                let vals = h
                    .batched(
                        items.len(),
                        "/v1/score",
                        |r| json!({"metric": metric.as_str(), "items": &items[r]}),
                        "scores",
                    )
                    .await?;
                vals.iter().enumerate().map(|(i, v)| as_f64(v, i)).collect()
            }
        }
    }

    pub async fn embed(&self, texts: &[String]) -> Result<Vec<Vec<f64>>, ScorerError> {
        validate_texts(texts, false)?;
        match self {
            Scorer::Mock => Ok(texts.iter().map(|t| mock_embedding(t)).collect()),
            Scorer::Http(h) => {
                let vals = h
                    .batched(texts.len(), "/v1/embed", |r| json!({"texts": &texts[r]}), "embeddings")
                    .await?;
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| {
                        v.as_array()
                            .ok_or_else(|| ScorerError::Value {
                                index: i,
                                message: "expected an array".into(),
                            })?
                            .iter()
                            .map(|x| as_f64(x, i))
                            .collect()
                    })
                    .collect()
            }
        }
    }

    pub async fn ppl(&self, texts: &[String]) -> Result<Vec<f64>, ScorerError> {
        validate_texts(texts, true)?;
        let out: Vec<f64> = match self {
            Scorer::Mock => texts.iter().map(|t| mock_ppl(t)).collect(),
            Scorer::Http(h) => {
                let vals = h
                    .batched(texts.len(), "/v1/ppl", |r| json!({"texts": &texts[r]}), "ppls")
                    .await?;
                vals.iter()
                    .enumerate()
                    .map(|(i, v)| as_f64(v, i))
                    .collect::<Result<_, _>>()?
            }
        };
        if let Some(i) = out.iter().position(|p| !(*p > 0.0)) {
            return Err(ScorerError::Value {
                index: i,
                message: format!("perplexity must be > 0, got {}", out[i]),
            });
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fnv_reference_vectors() {
        // published FNV-1a 64-bit test vectors
        assert_eq!(fnv1a64(b""), 0xcbf29ce484222325);
        assert_eq!(fnv1a64(b"a"), 0xaf63dc4c8601ec8c);
        assert_eq!(fnv1a64(b"foobar"), 0x85944171f73967e8);
    }

    #[test]
    fn mock_score_is_deterministic_and_bounded() {
        let a = ScoreItem::new("a", "a", Some("a".into()));
        assert_eq!(mock_score(&a), mock_score(&a.clone()));
        assert!((0.0..=1.0).contains(&mock_score(&a)));
        assert_eq!(unit_interval(u64::MAX), 1.0);
        assert_eq!(unit_interval(0), 0.0);
        let b = ScoreItem::new("a", "b", Some("a".into()));
        assert_ne!(mock_score(&a), mock_score(&b));
    }

    #[test]
    fn mock_embeddings_are_unit() {
        for t in ["", "hello", "another sentence"] {
            let v = mock_embedding(t);
            assert_eq!(v.len(), MOCK_EMBED_DIM);
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-6);
            assert_eq!(v, mock_embedding(t));
        }
    }

    #[test]
    fn request_schema() {
        let da = [ScoreItem::new("s", "m", None)];
        let err = validate_score_request(ScoreMetric::Da, &da).unwrap_err();
        assert!(err.to_string().contains("items[0].ref"));
        assert!(validate_score_request(ScoreMetric::Qe, &da).is_ok());
        assert!(validate_score_request(ScoreMetric::Qe, &[]).is_err());
        assert!(validate_texts(&["".into()], true).is_err());
        assert!(validate_texts(&[], false).is_err());
    }

    #[tokio::test]
    async fn mock_double_matches_free_functions() {
        let s = Scorer::Mock;
        let items = vec![
            ScoreItem::new("a", "a", Some("a".into())),
            ScoreItem::new("a", "a", Some("a".into())),
        ];
        let scores = s.score(ScoreMetric::Da, &items).await.unwrap();
        assert_eq!(scores[0], scores[1]);
        let p = s.ppl(&["x".into()]).await.unwrap();
        assert!(p[0] >= 1.0);
        assert!(s.ppl(&["".into()]).await.is_err());
    }
}
