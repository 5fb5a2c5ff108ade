use std::collections::HashSet;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// How sentence lengths are measured for chunk budgeting.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum TokenizerSpec {
    /// One token per maximal run of non-whitespace characters.
    Whitespace,
    /// `ceil(chars / divisor)`; a cheap stand-in for subword counts.
    CharBudget { divisor: usize },
    /// Greedy longest-match over a vocabulary file (one entry per line).
    External { vocab: PathBuf },
}

impl Default for TokenizerSpec {
    fn default() -> Self {
        TokenizerSpec::CharBudget { divisor: 4 }
    }
}

impl TokenizerSpec {
    /// Builds the tokenizer, reading the vocabulary if needed.
    pub fn load(&self) -> Result<Tokenizer, CorpusError> {
        match self {
            TokenizerSpec::Whitespace => Ok(Tokenizer::Whitespace),
            TokenizerSpec::CharBudget { divisor } => {
                if *divisor == 0 {
                    return Err(CorpusError::Tokenizer("char-budget divisor must be >= 1".into()));
                }
                Ok(Tokenizer::CharBudget(*divisor))
            }
            TokenizerSpec::External { vocab } => Ok(Tokenizer::Vocab(Vocabulary::from_file(vocab)?)),
        }
    }
}

/// Vocabulary for greedy longest-match segmentation.
#[derive(Debug, Clone)]
pub struct Vocabulary {
    pieces: HashSet<String>,
    longest: usize,
}

impl Vocabulary {
    pub fn from_file(path: &Path) -> Result<Self, CorpusError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CorpusError::Tokenizer(format!("cannot read vocabulary {}: {e}", path.display())))?;
        Ok(Self::from_pieces(text.lines().map(str::trim_end)))
    }

    pub fn from_pieces<'a>(pieces: impl IntoIterator<Item = &'a str>) -> Self {
        let pieces: HashSet<String> = pieces
            .into_iter()
            .filter(|p| !p.is_empty())
            .map(str::to_string)
            .collect();
        let longest = pieces.iter().map(|p| p.chars().count()).max().unwrap_or(0);
        Vocabulary { pieces, longest }
    }

    fn segment<'t>(&self, word: &'t str, out: &mut Vec<&'t str>) {
        let bounds: Vec<usize> = word
            .char_indices()
            .map(|(i, _)| i)
            .chain(std::iter::once(word.len()))
            .collect();
        let nchars = bounds.len() - 1;
        let mut i = 0;
        while i < nchars {
            let max = self.longest.min(nchars - i).max(1);
            let mut take = 1;
            for len in (1..=max).rev() {
                if self.pieces.contains(&word[bounds[i]..bounds[i + len]]) {
                    take = len;
                    break;
                }
            }
            out.push(&word[bounds[i]..bounds[i + take]]);
            i += take;
        }
    }
}

#[derive(Debug, Clone)]
pub enum Tokenizer {
    Whitespace,
    CharBudget(usize),
    Vocab(Vocabulary),
}

impl Tokenizer {
    pub fn token_length(&self, text: &str) -> usize {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().count(),
            Tokenizer::CharBudget(divisor) => text.chars().count().div_ceil(*divisor),
            Tokenizer::Vocab(_) => self.tokenize(text).len(),
        }
    }

    /// Surface pieces whose count equals [`Tokenizer::token_length`].
    pub fn tokenize<'t>(&self, text: &'t str) -> Vec<&'t str> {
        match self {
            Tokenizer::Whitespace => text.split_whitespace().collect(),
            Tokenizer::CharBudget(divisor) => {
                let mut out = Vec::new();
                let mut start = 0;
                for (n, (i, _)) in text.char_indices().enumerate() {
                    if n > 0 && n % divisor == 0 {
                        out.push(&text[start..i]);
                        start = i;
                    }
                }
                if start < text.len() {
                    out.push(&text[start..]);
                }
                out
            }
            Tokenizer::Vocab(v) => {
                let mut out = Vec::new();
                for word in text.split_whitespace() {
                    v.segment(word, &mut out);
                }
                out
            }
        }
    }
}

/// Convenience wrapper that loads `tok` on every call.
pub fn token_length(text: &str, tok: &TokenizerSpec) -> Result<usize, CorpusError> {
    Ok(tok.load()?.token_length(text))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn whitespace_counts_words() {
        assert_eq!(token_length("the cat sat", &TokenizerSpec::Whitespace).unwrap(), 3);
        assert_eq!(token_length("", &TokenizerSpec::Whitespace).unwrap(), 0);
        assert_eq!(token_length("  a \t b\n", &TokenizerSpec::Whitespace).unwrap(), 2);
    }

    #[test]
    fn char_budget_rounds_up() {
        let tok = TokenizerSpec::CharBudget { divisor: 4 };
        assert_eq!(token_length("abcdefgh", &tok).unwrap(), 2);
        assert_eq!(token_length("abcdefghi", &tok).unwrap(), 3);
        assert_eq!(token_length("", &tok).unwrap(), 0);
        // counts chars, not bytes
        assert_eq!(token_length("äöüß", &tok).unwrap(), 1);
    }

    #[test]
    fn char_budget_pieces_match_length() {
        let tok = Tokenizer::CharBudget(3);
        for text in ["", "a", "abc", "abcd", "日本語のテキスト"] {
            assert_eq!(tok.tokenize(text).len(), tok.token_length(text));
            assert_eq!(tok.tokenize(text).concat(), text);
        }
    }

    #[test]
    fn zero_divisor_rejected() {
        assert!(TokenizerSpec::CharBudget { divisor: 0 }.load().is_err());
    }

    #[test]
    fn vocab_greedy_longest_match() {
        let v = Vocabulary::from_pieces(["un", "believ", "able", "unbeliev"]);
        let tok = Tokenizer::Vocab(v);
        assert_eq!(tok.tokenize("unbelievable"), vec!["unbeliev", "able"]);
        // unknown characters fall back to one token each
        assert_eq!(tok.tokenize("xy able"), vec!["x", "y", "able"]);
        assert_eq!(tok.token_length("xy able"), 3);
    }

    #[test]
    fn missing_vocab_file_is_an_error() {
        let spec = TokenizerSpec::External {
            vocab: "/nonexistent/vocab.txt".into(),
        };
        assert!(token_length("a", &spec).is_err());
    }

    #[test]
    fn vocab_from_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "he\nllo\nhello\n").unwrap();
        let spec = TokenizerSpec::External { vocab: path };
        assert_eq!(token_length("hello hell", &spec).unwrap(), 1 + 3);
    }
}
