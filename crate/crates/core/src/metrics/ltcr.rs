//! Lexical translation consistency over a user-supplied term lexicon.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::MetricError;
use crate::corpus::Document;

/// Source terms and their accepted target realizations, in file order.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Lexicon {
    pub entries: Vec<(String, Vec<String>)>,
}

impl Lexicon {
    pub fn new(entries: Vec<(String, Vec<String>)>) -> Result<Self, MetricError> {
        for (term, reals) in &entries {
            if term.trim().is_empty() {
                return Err(MetricError::Lexicon("empty source term".into()));
            }
            if reals.is_empty() || reals.iter().any(|r| r.trim().is_empty()) {
                return Err(MetricError::Lexicon(format!("term {term:?} has an empty realization")));
            }
        }
        Ok(Lexicon { entries })
    }

    /// `term<TAB>real1|real2|...` per line; blank lines and `#` comments skipped.
    pub fn parse_tsv(text: &str) -> Result<Self, MetricError> {
        let mut entries = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (term, reals) = line
                .split_once('\t')
                .ok_or_else(|| MetricError::Lexicon(format!("line {}: expected a tab", i + 1)))?;
            entries.push((
                term.trim().to_string(),
                reals.split('|').map(|r| r.trim().to_string()).collect(),
            ));
        }
        Self::new(entries)
    }

    pub fn from_file(path: &Path) -> Result<Self, MetricError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| MetricError::Lexicon(format!("{}: {e}", path.display())))?;
        Self::parse_tsv(&text)
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// Scripts written without spaces have no word boundaries to check.
fn is_unspaced(c: char) -> bool {
    matches!(c as u32,
        0x3040..=0x30ff | 0x3400..=0x4dbf | 0x4e00..=0x9fff | 0xf900..=0xfaff | 0x20000..=0x2ffff | 0x0e00..=0x0eff)
}

fn is_word_char(c: char) -> bool {
    c.is_alphanumeric() && !is_unspaced(c)
}

/// Case-insensitive occurrence of `needle` not flanked by word characters.
pub fn contains_term(haystack: &str, needle: &str) -> bool {
    let hay = haystack.to_lowercase();
    let needle = needle.to_lowercase();
    if needle.is_empty() {
        return false;
    }
    hay.match_indices(&needle).any(|(i, m)| {
        let before = hay[..i].chars().next_back();
        let after = hay[i + m.len()..].chars().next();
        !before.is_some_and(is_word_char) && !after.is_some_and(is_word_char)
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LtcrResult {
    pub score: f64,
    pub consistent_pairs: usize,
    pub total_pairs: usize,
    /// No term repeated anywhere; `score` is 1.0 by convention.
    pub vacuous: bool,
}

/// For every document and every lexicon term found in at least two source
/// sentences, each occurrence is realized by the first lexicon realization
/// present in the aligned hypothesis sentence (or none). Over all pairs of
/// occurrences, a pair counts as consistent when both realizations exist and
/// agree. Documents are paired by position.
pub fn ltcr(src_docs: &[Document], hyp_docs: &[Document], lexicon: &Lexicon) -> Result<LtcrResult, MetricError> {
    if lexicon.is_empty() {
        return Err(MetricError::Lexicon("lexicon is empty".into()));
    }
    if src_docs.len() != hyp_docs.len() {
        return Err(MetricError::DocMismatch(format!(
            "{} source documents vs {} hypotheses",
            src_docs.len(),
            hyp_docs.len()
        )));
    }
    let mut consistent = 0usize;
    let mut total = 0usize;
    for (src, hyp) in src_docs.iter().zip(hyp_docs) {
        for (term, reals) in &lexicon.entries {
            let realized: Vec<Option<usize>> = src
                .sentences
                .iter()
                .enumerate()
                .filter(|(_, s)| contains_term(s, term))
                .map(|(i, _)| {
                    let h = hyp.sentences.get(i)?;
                    reals.iter().position(|r| contains_term(h, r))
                })
                .collect();
            let k = realized.len();
            if k < 2 {
                continue;
            }
            total += k * (k - 1) / 2;
            for a in 0..k {
                for b in a + 1..k {
                    if realized[a].is_some() && realized[a] == realized[b] {
                        consistent += 1;
                    }
                }
            }
        }
    }
    Ok(if total == 0 {
        LtcrResult {
            score: 1.0,
            consistent_pairs: 0,
            total_pairs: 0,
            vacuous: true,
        }
    } else {
        LtcrResult {
            score: consistent as f64 / total as f64,
            consistent_pairs: consistent,
            total_pairs: total,
            vacuous: false,
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, s: &[&str]) -> Document {
        Document {
            doc_id: id.into(),
            lang: "x".into(),
            sentences: s.iter().map(|x| x.to_string()).collect(),
        }
    }

    fn lex() -> Lexicon {
        Lexicon::parse_tsv("跑步机\ttreadmill|running machine\n").unwrap()
    }

    #[test]
    fn consistent_pair() {
        let src = [doc("d", &["我的跑步机", "跑步机坏了"])];
        let hyp = [doc("d", &["My treadmill", "The treadmill broke"])];
        let r = ltcr(&src, &hyp, &lex()).unwrap();
        assert_eq!(r.score, 1.0);
        assert_eq!(r.total_pairs, 1);
        assert!(!r.vacuous);
    }

    #[test]
    fn inconsistent_pair() {
        let src = [doc("d", &["我的跑步机", "跑步机坏了"])];
        let hyp = [doc("d", &["My treadmill", "The running machine broke"])];
        assert_eq!(ltcr(&src, &hyp, &lex()).unwrap().score, 0.0);
    }

    #[test]
    fn three_occurrences_one_consistent_pair() {
        let lex = Lexicon::parse_tsv("term\tA|B\n").unwrap();
        let src = [doc("d", &["term one", "term two", "term three"])];
        let hyp = [doc("d", &["A x", "A y", "B z"])];
        let r = ltcr(&src, &hyp, &lex).unwrap();
        assert_eq!((r.consistent_pairs, r.total_pairs), (1, 3));
        assert!((r.score - 1.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn unrealized_pairs_are_inconsistent() {
        let lex = Lexicon::parse_tsv("term\tA\n").unwrap();
        let src = [doc("d", &["term", "term"])];
        let hyp = [doc("d", &["nothing", "nothing"])];
        assert_eq!(ltcr(&src, &hyp, &lex).unwrap().score, 0.0);
    }

    #[test]
    fn vacuous_when_nothing_repeats() {
        let lex = Lexicon::parse_tsv("term\tA\n").unwrap();
        let r = ltcr(&[doc("d", &["term"])], &[doc("d", &["A"])], &lex).unwrap();
        assert!(r.vacuous);
        assert_eq!(r.score, 1.0);
    }

    #[test]
    fn word_boundaries_and_case() {
        assert!(contains_term("The Cat sat", "cat"));
        assert!(!contains_term("concatenate", "cat"));
        assert!(contains_term("cat.", "cat"));
        assert!(contains_term("running machine!", "Running Machine"));
        assert!(!contains_term("x", ""));
        assert!(contains_term("我的跑步机坏了", "跑步机"));
    }

    #[test]
    fn lexicon_parsing_errors() {
        assert!(Lexicon::parse_tsv("no tab here").is_err());
        assert!(Lexicon::parse_tsv("t\ta||b").is_err());
        assert!(Lexicon::parse_tsv("# comment\n\nt\ta\n").is_ok());
        assert!(ltcr(&[], &[], &Lexicon::default()).is_err());
    }
}
