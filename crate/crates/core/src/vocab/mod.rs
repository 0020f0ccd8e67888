//! Vocabularies, BPE training and application, and vocabulary intersection.
//!
//! Words are split on whitespace and the first character of every word
//! carries the word-initial marker (`▁` by default), so `"low lower"` is seen
//! by the merge rules as `["▁l" "o" "w"] ["▁l" "o" "w" "e" "r"]`.

mod bpe;
mod intersect;
mod tokenizer;

use std::collections::HashMap;
use std::path::Path;

pub use bpe::{train_bpe, BpeTrainerConfig};
pub use intersect::{intersect_tokenizers, intersect_vocab, IntersectEntry, VocabIntersection};
pub use tokenizer::{BpeTokenizer, TokenizerFile};

use crate::error::{Error, Result};
use crate::io;

pub const DEFAULT_WORD_PREFIX: &str = "\u{2581}";

/// Begin, end, pad, unknown and mask, in id order.
pub const DEFAULT_SPECIALS: [&str; 5] = ["<s>", "</s>", "<pad>", "<unk>", "<mask>"];

pub const BEGIN_ID: u32 = 0;
pub const END_ID: u32 = 1;
pub const PAD_ID: u32 = 2;
pub const UNK_ID: u32 = 3;
pub const MASK_ID: u32 = 4;
pub const NUM_SPECIALS: usize = 5;

pub fn is_special(id: u32) -> bool {
    (id as usize) < NUM_SPECIALS
}

/// Ordered token list with its inverse map. Ids are positions.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Builds a vocabulary; the first five tokens are the special tokens.
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < NUM_SPECIALS {
            return Err(Error::input(format!(
                "vocabulary needs at least {NUM_SPECIALS} special tokens, got {} tokens",
                tokens.len()
            )));
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::input("vocabulary too large"));
        }
        let mut ids = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() {
                return Err(Error::input(format!("empty token at id {i}")));
            }
            if t.contains(['\t', '\n', '\r']) {
                return Err(Error::input(format!("token at id {i} contains a tab or newline")));
            }
            if ids.insert(t.clone(), i as u32).is_some() {
                return Err(Error::input(format!("duplicate token {t:?} at id {i}")));
            }
        }
        Ok(Self { tokens, ids })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id_of(&self, token: &str) -> Option<u32> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.contains_key(token)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn specials(&self) -> &[String] {
        &self.tokens[..NUM_SPECIALS]
    }

    /// Content hash of the token list, recorded in checkpoint metadata so a
    /// checkpoint can be matched against its tokenizer.
    pub fn fingerprint(&self) -> String {
        let mut joined = String::new();
        for t in &self.tokens {
            joined.push_str(t);
            joined.push('\n');
        }
        io::sha256_hex(joined.as_bytes())
    }

    pub(crate) fn push(&mut self, token: String) -> u32 {
        let id = self.tokens.len() as u32;
        self.ids.insert(token.clone(), id);
        self.tokens.push(token);
        id
    }

    /// `token \t id` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.tokens.iter().enumerate() {
            out.push_str(t);
            out.push('\t');
            out.push_str(&i.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let rows = io::parse_tsv(text, 2)?;
        let mut tokens = Vec::with_capacity(rows.len());
        for (line, fields) in rows {
            let id: usize = fields[1]
                .trim()
                .parse()
                .map_err(|_| Error::input(format!("line {line}: bad id {:?}", fields[1])))?;
            if id != tokens.len() {
                return Err(Error::input(format!(
                    "line {line}: ids must be contiguous from 0, expected {} got {id}",
                    tokens.len()
                )));
            }
            tokens.push(fields[0].clone());
        }
        Self::new(tokens)
    }

    pub fn save_tsv(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, self.to_tsv().as_bytes())
    }

    pub fn load_tsv(path: &Path) -> Result<Self> {
        Self::from_tsv(&io::read_to_string(path)?)
    }
}

/// Splits a word into its initial symbols: the first character carries the
/// word prefix, the rest stand alone.
pub(crate) fn word_symbols(word: &str, prefix: &str) -> Vec<String> {
    let mut out = Vec::with_capacity(word.chars().count());
    for (i, c) in word.chars().enumerate() {
        if i == 0 {
            let mut s = String::with_capacity(prefix.len() + c.len_utf8());
            s.push_str(prefix);
            s.push(c);
            out.push(s);
        } else {
            out.push(c.to_string());
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specials() -> Vec<String> {
        DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn rejects_duplicates() {
        let mut t = specials();
        t.push("a".into());
        t.push("a".into());
        assert!(matches!(Vocabulary::new(t), Err(Error::Input(_))));
    }

    #[test]
    fn tsv_round_trip() {
        let mut t = specials();
        t.extend(["\u{2581}low".to_string(), "er".to_string()]);
        let v = Vocabulary::new(t).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(v, back);
        assert_eq!(back.id_of("er"), Some(6));
    }

    #[test]
    fn tsv_rejects_gaps() {
        let text = "<s>\t0\n</s>\t1\n<pad>\t2\n<unk>\t3\n<mask>\t5\n";
        assert!(Vocabulary::from_tsv(text).is_err());
    }

    #[test]
    fn word_symbols_marks_first_char() {
        assert_eq!(word_symbols("ab", "_"), vec!["_a", "b"]);
        assert!(word_symbols("", "_").is_empty());
    }
}
