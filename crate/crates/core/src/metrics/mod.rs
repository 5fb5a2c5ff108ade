//! Document-level evaluation: d-BLEU, term consistency, embedding coherence,
//! pairwise system comparison and score histograms.

mod bleu;
mod ltcr;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use bleu::{d_bleu, d_bleu_stats, tokenize as bleu_tokenize, BleuStats, BleuTokenize};
pub use ltcr::{contains_term, ltcr, Lexicon, LtcrResult};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("no documents to score")]
    NoDocuments,
    #[error("document mismatch: {0}")]
    DocMismatch(String),
    #[error("embedding dimension mismatch in document {doc}: expected {expected}, got {got}")]
    Dimension { doc: usize, expected: usize, got: usize },
    #[error("length mismatch: {0}")]
    Length(String),
    #[error("lexicon: {0}")]
    Lexicon(String),
    #[error("invalid parameter: {0}")]
    Param(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoherenceResult {
    /// `None` when every document has fewer than two sentences.
    pub score: Option<f64>,
    pub skipped_docs: usize,
}

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot / (na * nb)
    }
}

/// Mean cosine similarity of adjacent sentence embeddings, averaged per
/// document and then over documents.
pub fn coherence(docs: &[Vec<Vec<f64>>]) -> Result<CoherenceResult, MetricError> {
    let mut dim = None;
    let mut per_doc = Vec::new();
    let mut skipped = 0;
    for (d, sents) in docs.iter().enumerate() {
        for v in sents {
            let expected = *dim.get_or_insert(v.len());
            if v.len() != expected || expected == 0 {
                return Err(MetricError::Dimension {
                    doc: d,
                    expected,
                    got: v.len(),
                });
            }
        }
        if sents.len() < 2 {
            skipped += 1;
            continue;
        }
        let sims: f64 = sents.windows(2).map(|w| cosine(&w[0], &w[1])).sum();
        per_doc.push(sims / (sents.len() - 1) as f64);
    }
    let score = (!per_doc.is_empty()).then(|| per_doc.iter().sum::<f64>() / per_doc.len() as f64);
    Ok(CoherenceResult {
        score,
        skipped_docs: skipped,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WinTieLoss {
    pub wins: usize,
    pub ties: usize,
    pub losses: usize,
    pub tie_eps: f64,
}

impl WinTieLoss {
    pub fn total(&self) -> usize {
        self.wins + self.ties + self.losses
    }
}

pub const DEFAULT_TIE_EPS: f64 = 1e-3;

/// Per-item comparison of system A against system B. Differences within
/// `tie_eps` are ties.
pub fn compare_systems(a: &[f64], b: &[f64], tie_eps: f64) -> Result<WinTieLoss, MetricError> {
    if a.len() != b.len() {
        return Err(MetricError::Length(format!("{} scores vs {}", a.len(), b.len())));
    }
    if !(tie_eps >= 0.0) || !tie_eps.is_finite() {
        return Err(MetricError::Param(format!(
            "tie_eps must be finite and >= 0, got {tie_eps}"
        )));
    }
    let mut r = WinTieLoss {
        wins: 0,
        ties: 0,
        losses: 0,
        tie_eps,
    };
    for (x, y) in a.iter().zip(b) {
        let d = x - y;
        if d.abs() <= tie_eps {
            r.ties += 1;
        } else if d > 0.0 {
            r.wins += 1;
        } else {
            r.losses += 1;
        }
    }
    Ok(r)
}

/// Histogram with half-open bins `[lo, lo + width)` anchored at multiples of
/// `bin_width`. Empty bins between the extremes are kept. Values sitting on a
/// bin edge (within floating error) land in the upper bin.
pub fn score_distribution(scores: &[f64], bin_width: f64) -> Result<Vec<(f64, usize)>, MetricError> {
    if !(bin_width > 0.0) || !bin_width.is_finite() {
        return Err(MetricError::Param(format!("bin width must be > 0, got {bin_width}")));
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(MetricError::Param(format!("non-finite score {bad}")));
    }
    if scores.is_empty() {
        return Ok(Vec::new());
    }
    let bin_of = |s: f64| -> i64 {
        let q = s / bin_width;
        let r = q.round();
        if (q - r).abs() <= 1e-12 * r.abs().max(1.0) {
            r as i64
        } else {
            q.floor() as i64
        }
    };
    let bins: Vec<i64> = scores.iter().map(|&s| bin_of(s)).collect();
    let lo = *bins.iter().min().unwrap();
    let hi = *bins.iter().max().unwrap();
    let mut counts = vec![0usize; (hi - lo + 1) as usize];
    for b in bins {
        counts[(b - lo) as usize] += 1;
    }
    Ok(counts
        .into_iter()
        .enumerate()
        .map(|(i, c)| ((lo + i as i64) as f64 * bin_width, c))
        .collect())
}

pub fn distribution_csv(bins: &[(f64, usize)]) -> String {
    let mut out = String::from("bin_lo,count\n");
    for (lo, c) in bins {
        out.push_str(&format!("{lo},{c}\n"));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DocumentMetrics {
    pub d_bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ltcr: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coherence: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub system_name: String,
    pub d_bleu: f64,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub ltcr: Option<LtcrResult>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub coherence: Option<CoherenceResult>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub scorer_metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "BTreeMap::is_empty", default)]
    pub per_document: BTreeMap<String, DocumentMetrics>,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coherence_of_identical_vectors_is_one() {
        let d = vec![vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![2.0, 0.0]]];
        let r = coherence(&d).unwrap();
        assert!((r.score.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(r.skipped_docs, 0);
    }

    #[test]
    fn coherence_averages_per_document() {
        let docs = vec![
            vec![vec![1.0, 0.0], vec![0.0, 1.0]],
            vec![vec![1.0, 0.0], vec![1.0, 0.0]],
            vec![vec![1.0, 0.0]],
        ];
        let r = coherence(&docs).unwrap();
        assert!((r.score.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.skipped_docs, 1);
        assert_eq!(coherence(&[vec![vec![1.0]]]).unwrap().score, None);
        assert!(coherence(&[vec![vec![1.0, 0.0], vec![1.0]]]).is_err());
    }

    #[test]
    fn compare_counts() {
        let r = compare_systems(&[0.5, 0.7, 0.3, 0.5005], &[0.5, 0.6, 0.4, 0.5], 1e-3).unwrap();
        assert_eq!((r.wins, r.ties, r.losses), (1, 2, 1));
        assert_eq!(r.total(), 4);
        assert!(compare_systems(&[1.0], &[], 0.0).is_err());
        assert!(compare_systems(&[1.0], &[1.0], -1.0).is_err());
    }

    #[test]
    fn distribution_bins() {
        let b = score_distribution(&[0.05, 0.1, 0.15, 0.42], 0.1).unwrap();
        let counts: Vec<usize> = b.iter().map(|x| x.1).collect();
        assert_eq!(counts, [1, 2, 0, 0, 1]);
        assert!((b[1].0 - 0.1).abs() < 1e-12);
        // 0.3 / 0.1 is 2.9999999999999996 in floating point
        let b = score_distribution(&[0.3], 0.1).unwrap();
        assert!((b[0].0 - 0.3).abs() < 1e-12);
        assert!(score_distribution(&[], 0.1).unwrap().is_empty());
        assert!(score_distribution(&[1.0], 0.0).is_err());
        assert!(distribution_csv(&b).starts_with("bin_lo,count\n"));
    }

    #[test]
    fn report_skips_absent_fields() {
        let r = MetricReport {
            system_name: "s".into(),
            d_bleu: 10.0,
            ltcr: None,
            coherence: None,
            scorer_metrics: BTreeMap::new(),
            per_document: BTreeMap::new(),
        };
        let v = serde_json::to_value(&r).unwrap();
        assert_eq!(v, serde_json::json!({"system_name": "s", "d_bleu": 10.0}));
    }
}
