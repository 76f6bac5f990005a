//! Greedy longest-match WordPiece tokenization.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use super::RepresentError;

/// Prefix marking a subword that continues the previous piece.
pub const CONTINUATION_PREFIX: &str = "##";
pub const DEFAULT_UNK: &str = "[UNK]";

/// Words longer than this (in chars) become the unknown token outright.
pub const MAX_WORD_CHARS: usize = 100;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
    unk: String,
}

impl Vocabulary {
    pub fn new<I, S>(tokens: I, unk_token: &str) -> Result<Self, RepresentError>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut out = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
            unk: unk_token.to_string(),
        };
        for tok in tokens {
            let tok = tok.into();
            if tok.is_empty() {
                return Err(RepresentError::Vocabulary("empty entry".into()));
            }
            if out.index.contains_key(&tok) {
                return Err(RepresentError::Vocabulary(format!("duplicate entry {tok:?}")));
            }
            out.index.insert(tok.clone(), out.tokens.len() as u32);
            out.tokens.push(tok);
        }
        if !out.index.contains_key(unk_token) {
            return Err(RepresentError::Vocabulary(format!("unknown token {unk_token:?} missing")));
        }
        Ok(out)
    }

    /// Reads a one-token-per-line vocabulary file.
    pub fn load(path: &Path, unk_token: &str) -> Result<Self, RepresentError> {
        let text = fs::read_to_string(path).map_err(|e| RepresentError::io(path, e))?;
        Self::new(text.lines(), unk_token)
    }

    pub fn save(&self, path: &Path) -> Result<(), RepresentError> {
        let mut text = self.tokens.join("\n");
        text.push('\n');
        fs::write(path, text).map_err(|e| RepresentError::io(path, e))
    }

    /// Corpus-derived vocabulary: every word seen at least `min_count` times,
    /// plus each letter as a word-initial and a continuation piece so no
    /// lowercase alphabetic word falls through to the unknown token.
    pub fn from_corpus<'a, I>(texts: I, min_count: usize) -> Self
    where
        I: IntoIterator<Item = &'a str>,
    {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        for t in texts {
            for w in t.split_whitespace() {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut tokens = vec![DEFAULT_UNK.to_string()];
        for c in 'a'..='z' {
            tokens.push(c.to_string());
            tokens.push(format!("{CONTINUATION_PREFIX}{c}"));
        }
        for (w, n) in counts {
            if n >= min_count && w.chars().count() > 1 {
                tokens.push(w.to_string());
            }
        }
        Self::new(tokens, DEFAULT_UNK).expect("letters and words are unique and non-empty")
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn unk_token(&self) -> &str {
        &self.unk
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }
}

/// Splits preprocessed text on whitespace and tokenizes each word with the
/// greedy longest-prefix rule. A word with any unmatched remainder becomes
/// the unknown token as a whole.
pub fn wordpiece_tokenize(text: &str, vocab: &Vocabulary) -> Vec<String> {
    let mut out = Vec::new();
    let mut candidate = String::new();
    for word in text.split_whitespace() {
        let chars: Vec<char> = word.chars().collect();
        if chars.len() > MAX_WORD_CHARS {
            out.push(vocab.unk.clone());
            continue;
        }
        let mark = out.len();
        let mut start = 0;
        while start < chars.len() {
            let mut found = None;
            let mut end = chars.len();
            while end > start {
                candidate.clear();
                if start > 0 {
                    candidate.push_str(CONTINUATION_PREFIX);
                }
                candidate.extend(&chars[start..end]);
                if vocab.contains(&candidate) {
                    found = Some(end);
                    break;
                }
                end -= 1;
            }
            match found {
                Some(end) => {
                    out.push(candidate.clone());
                    start = end;
                }
                None => {
                    out.truncate(mark);
                    out.push(vocab.unk.clone());
                    break;
                }
            }
        }
    }
    out
}
