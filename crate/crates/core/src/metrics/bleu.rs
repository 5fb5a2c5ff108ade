//! Corpus BLEU over whole documents.

use std::collections::HashMap;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Document;

const MAX_ORDER: usize = 4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BleuTokenize {
    /// mteval-v13a style punctuation splitting.
    #[default]
    #[serde(rename = "13a")]
    Thirteen,
    /// Unicode-aware variant (punctuation and symbols by category).
    Intl,
    /// Whitespace only.
    None,
}

static R13_PUNCT: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([\{-~\[-` -&\(-\+:-@/])").unwrap());
static R13_PERIOD_COMMA_BEFORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([^0-9])([\.,])").unwrap());
static R13_PERIOD_COMMA_AFTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([\.,])([^0-9])").unwrap());
static R13_DASH: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"([0-9])(-)").unwrap());

static RINTL_PUNCT_BEFORE: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\P{N})(\p{P})").unwrap());
static RINTL_PUNCT_AFTER: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{P})(\P{N})").unwrap());
static RINTL_SYMBOL: LazyLock<Regex> = LazyLock::new(|| Regex::new(r"(\p{S})").unwrap());

pub fn tokenize(text: &str, mode: BleuTokenize) -> Vec<String> {
    let line = match mode {
        BleuTokenize::None => text.to_string(),
        BleuTokenize::Thirteen => {
            let mut line = text.replace("<skipped>", "").replace("-\n", "").replace('\n', " ");
            if line.contains('&') {
                line = line
                    .replace("&quot;", "\"")
                    .replace("&amp;", "&")
                    .replace("&lt;", "<")
                    .replace("&gt;", ">");
            }
            let line = format!(" {line} ");
            let line = R13_PUNCT.replace_all(&line, " $1 ");
            let line = R13_PERIOD_COMMA_BEFORE.replace_all(&line, "$1 $2 ");
            let line = R13_PERIOD_COMMA_AFTER.replace_all(&line, " $1 $2");
            R13_DASH.replace_all(&line, "$1 $2 ").into_owned()
        }
        BleuTokenize::Intl => {
            let line = RINTL_PUNCT_BEFORE.replace_all(text, "$1 $2 ");
            let line = RINTL_PUNCT_AFTER.replace_all(&line, " $1 $2");
            RINTL_SYMBOL.replace_all(&line, " $1 ").into_owned()
        }
    };
    line.split_whitespace().map(str::to_string).collect()
}

/// Sufficient statistics for corpus BLEU.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [usize; MAX_ORDER],
    pub totals: [usize; MAX_ORDER],
    pub hyp_len: usize,
    pub ref_len: usize,
}

impl BleuStats {
    pub fn of(hyp: &[String], reference: &[String]) -> Self {
        let mut s = BleuStats {
            hyp_len: hyp.len(),
            ref_len: reference.len(),
            ..Default::default()
        };
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            s.totals[n - 1] = hyp.len().saturating_sub(n - 1);
            s.matches[n - 1] = hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum();
        }
        s
    }

    pub fn add(&mut self, o: &BleuStats) {
        for i in 0..MAX_ORDER {
            self.matches[i] += o.matches[i];
            self.totals[i] += o.totals[i];
        }
        self.hyp_len += o.hyp_len;
        self.ref_len += o.ref_len;
    }

    /// BLEU on the 0-100 scale. Orders with no hypothesis n-grams at all are
    /// left out of the geometric mean; any order with zero matches gives 0.
    pub fn score(&self) -> f64 {
        if self.hyp_len == 0 {
            return 0.0;
        }
        let mut log_sum = 0.0;
        let mut orders = 0;
        for i in 0..MAX_ORDER {
            if self.totals[i] == 0 {
                continue;
            }
            if self.matches[i] == 0 {
                return 0.0;
            }
            log_sum += (self.matches[i] as f64 / self.totals[i] as f64).ln();
            orders += 1;
        }
        let bp = if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        };
        let score = 100.0 * bp * (log_sum / orders as f64).exp();
        score.min(100.0)
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// d-BLEU: sentences of each document are joined with single spaces and the
/// whole corpus is scored at once. Hypotheses are matched to references by
/// doc_id, so document order does not matter.
pub fn d_bleu(hyp_docs: &[Document], ref_docs: &[Document], mode: BleuTokenize) -> Result<f64, MetricError> {
    Ok(d_bleu_stats(hyp_docs, ref_docs, mode)?.score())
}

pub fn d_bleu_stats(
    hyp_docs: &[Document],
    ref_docs: &[Document],
    mode: BleuTokenize,
) -> Result<BleuStats, MetricError> {
    if hyp_docs.is_empty() {
        return Err(MetricError::NoDocuments);
    }
    if hyp_docs.len() != ref_docs.len() {
        return Err(MetricError::DocMismatch(format!(
            "{} hypothesis documents vs {} references",
            hyp_docs.len(),
            ref_docs.len()
        )));
    }
    let refs: HashMap<&str, &Document> = ref_docs.iter().map(|d| (d.doc_id.as_str(), d)).collect();
    let mut total = BleuStats::default();
    for h in hyp_docs {
        let r = refs
            .get(h.doc_id.as_str())
            .ok_or_else(|| MetricError::DocMismatch(format!("no reference for doc_id {:?}", h.doc_id)))?;
        total.add(&BleuStats::of(&tokenize(&h.text(), mode), &tokenize(&r.text(), mode)));
    }
    Ok(total)
}
