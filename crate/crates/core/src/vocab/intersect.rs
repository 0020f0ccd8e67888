use std::collections::HashSet;

use log::warn;

use super::{BpeTokenizer, Vocabulary, NUM_SPECIALS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IntersectEntry {
    pub token: String,
    pub old_id: u32,
    pub new_id: u32,
}

/// Tokens shared by a donor vocabulary and a new one, with the donor id each
/// token came from and its id in the reduced vocabulary.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VocabIntersection {
    pub pairs: Vec<IntersectEntry>,
    /// Set when nothing beyond the special tokens is shared.
    pub specials_only: bool,
}

impl VocabIntersection {
    pub fn new_size(&self) -> usize {
        self.pairs.len()
    }

    pub fn old_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.pairs.iter().map(|p| p.old_id)
    }

    pub fn vocabulary(&self) -> Result<Vocabulary> {
        Vocabulary::new(self.pairs.iter().map(|p| p.token.clone()).collect())
    }

    /// An intersection that keeps every token of `vocab` in place.
    pub fn identity(vocab: &Vocabulary) -> Self {
        intersect_vocab(vocab, vocab)
    }

    /// `old_id new_id token` lines.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            out.push_str(&format!("{}\t{}\t{}\n", p.token, p.old_id, p.new_id));
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let rows = crate::io::parse_tsv(text, 3)?;
        let mut pairs = Vec::with_capacity(rows.len());
        let mut seen = HashSet::new();
        for (line, f) in rows {
            let parse = |s: &str| {
                s.trim()
                    .parse::<u32>()
                    .map_err(|_| Error::input(format!("line {line}: bad id {s:?}")))
            };
            let old_id = parse(&f[1])?;
            let new_id = parse(&f[2])?;
            if new_id as usize != pairs.len() {
                return Err(Error::input(format!("line {line}: new ids must be contiguous")));
            }
            if !seen.insert(f[0].clone()) {
                return Err(Error::input(format!("line {line}: duplicate token {:?}", f[0])));
            }
            pairs.push(IntersectEntry {
                token: f[0].clone(),
                old_id,
                new_id,
            });
        }
        let specials_only = pairs.len() <= NUM_SPECIALS;
        Ok(Self {
            pairs,
            specials_only,
        })
    }
}

/// Keeps every token of `donor` that also occurs in `other`, plus the special
/// tokens. New ids follow ascending donor id.
pub fn intersect_vocab(donor: &Vocabulary, other: &Vocabulary) -> VocabIntersection {
    let mut pairs = Vec::new();
    for (old_id, token) in donor.tokens().iter().enumerate() {
        if old_id < NUM_SPECIALS || other.contains(token) {
            pairs.push(IntersectEntry {
                token: token.clone(),
                old_id: old_id as u32,
                new_id: pairs.len() as u32,
            });
        }
    }
    let specials_only = pairs.len() == NUM_SPECIALS;
    if specials_only {
        warn!("vocabulary intersection contains only the special tokens");
    }
    VocabIntersection {
        pairs,
        specials_only,
    }
}

/// Intersection of two tokenizers' vocabularies after checking that they use
/// the same word-initial marker and special tokens.
pub fn intersect_tokenizers(donor: &BpeTokenizer, other: &BpeTokenizer) -> Result<VocabIntersection> {
    if donor.word_prefix() != other.word_prefix() {
        return Err(Error::config(format!(
            "word prefix mismatch: {:?} vs {:?}",
            donor.word_prefix(),
            other.word_prefix()
        )));
    }
    if donor.vocab().specials() != other.vocab().specials() {
        return Err(Error::config("special tokens differ between tokenizers"));
    }
    Ok(intersect_vocab(donor.vocab(), other.vocab()))
}

impl BpeTokenizer {
    /// The tokenizer of a reduced model: the intersection's tokens in new-id
    /// order with the merge rules of `self` whose inputs and output survive.
    pub fn restrict(&self, mapping: &VocabIntersection) -> Result<BpeTokenizer> {
        let vocab = mapping.vocabulary()?;
        let merges = self
            .merges()
            .iter()
            .filter(|(l, r)| vocab.contains(l) && vocab.contains(r) && vocab.contains(&format!("{l}{r}")))
            .cloned()
            .collect();
        let added = self
            .added_tokens()
            .iter()
            .filter(|t| vocab.contains(t))
            .cloned()
            .collect();
        BpeTokenizer::from_parts(vocab, merges, self.word_prefix().to_string(), added)
    }
}
