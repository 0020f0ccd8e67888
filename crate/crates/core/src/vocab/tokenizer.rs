use std::collections::{HashMap, HashSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::bpe::apply_merge;
use super::{word_symbols, Vocabulary, BEGIN_ID, END_ID, NUM_SPECIALS, UNK_ID};
use crate::error::{Error, Result};
use crate::io;

const FORMAT_VERSION: u32 = 1;

/// On-disk layout of a tokenizer. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TokenizerFile {
    pub version: u32,
    pub specials: Vec<String>,
    pub vocab: Vec<String>,
    pub merges: Vec<[String; 2]>,
    pub word_prefix: String,
    /// Tokens appended by vocabulary extension. They are matched as
    /// contiguous runs of BPE pieces after the merge rules have run.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub added_tokens: Vec<String>,
}

/// Vocabulary plus ordered merge rules. Immutable once built.
#[derive(Debug, Clone)]
pub struct BpeTokenizer {
    vocab: Vocabulary,
    merges: Vec<(String, String)>,
    word_prefix: String,
    added: Vec<String>,
    ranks: HashMap<(u32, u32), (usize, u32)>,
    added_ids: HashMap<String, u32>,
    max_added_chars: usize,
}

impl PartialEq for BpeTokenizer {
    fn eq(&self, other: &Self) -> bool {
        self.vocab == other.vocab
            && self.merges == other.merges
            && self.word_prefix == other.word_prefix
            && self.added == other.added
    }
}

impl BpeTokenizer {
    pub fn from_parts(
        vocab: Vocabulary,
        merges: Vec<(String, String)>,
        word_prefix: String,
        added: Vec<String>,
    ) -> Result<Self> {
        if word_prefix.is_empty() {
            return Err(Error::input("word prefix must not be empty"));
        }
        let mut ranks = HashMap::with_capacity(merges.len());
        for (rank, (l, r)) in merges.iter().enumerate() {
            let lookup = |t: &str| {
                vocab
                    .id_of(t)
                    .ok_or_else(|| Error::input(format!("merge {rank} refers to unknown token {t:?}")))
            };
            let li = lookup(l)?;
            let ri = lookup(r)?;
            let mi = lookup(&format!("{l}{r}"))?;
            ranks.entry((li, ri)).or_insert((rank, mi));
        }
        let mut added_ids = HashMap::new();
        let mut max_added_chars = 0;
        for t in &added {
            let id = vocab
                .id_of(t)
                .ok_or_else(|| Error::input(format!("added token {t:?} is not in the vocabulary")))?;
            added_ids.insert(t.clone(), id);
            max_added_chars = max_added_chars.max(t.chars().count());
        }
        Ok(Self {
            vocab,
            merges,
            word_prefix,
            added,
            ranks,
            added_ids,
            max_added_chars,
        })
    }

    pub fn vocab(&self) -> &Vocabulary {
        &self.vocab
    }

    pub fn merges(&self) -> &[(String, String)] {
        &self.merges
    }

    pub fn word_prefix(&self) -> &str {
        &self.word_prefix
    }

    pub fn added_tokens(&self) -> &[String] {
        &self.added
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn fingerprint(&self) -> String {
        self.vocab.fingerprint()
    }

    /// Token ids of `text` wrapped in begin/end markers.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut ids = vec![BEGIN_ID];
        ids.extend(self.encode_pieces(text));
        ids.push(END_ID);
        ids
    }

    /// Token ids of `text` without begin/end markers.
    pub fn encode_pieces(&self, text: &str) -> Vec<u32> {
        let mut ids = Vec::new();
        for word in text.split_whitespace() {
            ids.extend(self.encode_word(word));
        }
        ids
    }

    fn encode_word(&self, word: &str) -> Vec<u32> {
        let symbols = word_symbols(word, &self.word_prefix);
        self.segment(&symbols)
    }

    /// Segments a piece string the way it would appear inside encoded text:
    /// a leading word prefix marks a word start, anything else is a word
    /// interior. Used to find the subtokens of a new token.
    pub fn segment_piece(&self, piece: &str) -> Vec<u32> {
        let symbols: Vec<String> = match piece.strip_prefix(self.word_prefix.as_str()) {
            Some(rest) if !rest.is_empty() => word_symbols(rest, &self.word_prefix),
            Some(_) => vec![self.word_prefix.clone()],
            None => piece.chars().map(|c| c.to_string()).collect(),
        };
        self.segment(&symbols)
    }

    fn segment(&self, symbols: &[String]) -> Vec<u32> {
        // Unknown symbols keep a sentinel so they never merge with neighbours.
        const BARRIER: u32 = u32::MAX;
        let mut ids: Vec<u32> = symbols
            .iter()
            .map(|s| self.vocab.id_of(s).unwrap_or(BARRIER))
            .collect();
        loop {
            let best = ids
                .windows(2)
                .filter(|w| w[0] != BARRIER && w[1] != BARRIER)
                .filter_map(|w| self.ranks.get(&(w[0], w[1])).map(|&(r, m)| (r, (w[0], w[1]), m)))
                .min_by_key(|&(r, _, _)| r);
            match best {
                Some((_, pair, merged)) => ids = apply_merge(&ids, pair, merged),
                None => break,
            }
        }
        for id in ids.iter_mut() {
            if *id == BARRIER {
                *id = UNK_ID;
            }
        }
        if self.added.is_empty() {
            ids
        } else {
            self.match_added(ids)
        }
    }

    /// Greedy longest-first replacement of piece runs that spell an added token.
    fn match_added(&self, ids: Vec<u32>) -> Vec<u32> {
        let mut out = Vec::with_capacity(ids.len());
        let mut i = 0;
        while i < ids.len() {
            let mut best: Option<(usize, u32)> = None;
            let mut spelled = String::new();
            let mut chars = 0;
            for (j, &id) in ids.iter().enumerate().skip(i) {
                if id == UNK_ID {
                    break;
                }
                let piece = self.vocab.token(id).unwrap_or_default();
                spelled.push_str(piece);
                chars += piece.chars().count();
                if chars > self.max_added_chars {
                    break;
                }
                if j > i {
                    if let Some(&aid) = self.added_ids.get(&spelled) {
                        best = Some((j, aid));
                    }
                }
            }
            match best {
                Some((j, aid)) => {
                    out.push(aid);
                    i = j + 1;
                }
                None => {
                    out.push(ids[i]);
                    i += 1;
                }
            }
        }
        out
    }

    /// Inverse of [`encode`](Self::encode) for in-alphabet text: drops special
    /// tokens and turns word prefixes back into single spaces.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        let mut joined = String::new();
        for &id in ids {
            let tok = self.vocab.token(id).ok_or_else(|| {
                Error::input(format!("token id {id} out of range for vocabulary of {}", self.vocab.len()))
            })?;
            if (id as usize) < NUM_SPECIALS {
                continue;
            }
            joined.push_str(tok);
        }
        let spaced = joined.replace(self.word_prefix.as_str(), " ");
        Ok(spaced.strip_prefix(' ').unwrap_or(&spaced).to_string())
    }

    /// A tokenizer with `new_tokens` appended to the vocabulary as added tokens.
    pub fn with_added_tokens(&self, new_tokens: &[String]) -> Result<Self> {
        let mut vocab = self.vocab.clone();
        let mut added = self.added.clone();
        let mut seen = HashSet::new();
        for t in new_tokens {
            if vocab.contains(t) || !seen.insert(t.as_str()) {
                return Err(Error::input(format!("token {t:?} is already in the vocabulary")));
            }
            if t.is_empty() || t.contains(char::is_whitespace) {
                return Err(Error::input(format!("token {t:?} is empty or contains whitespace")));
            }
            vocab.push(t.clone());
            added.push(t.clone());
        }
        Self::from_parts(vocab, self.merges.clone(), self.word_prefix.clone(), added)
    }

    pub fn to_file(&self) -> TokenizerFile {
        TokenizerFile {
            version: FORMAT_VERSION,
            specials: self.vocab.specials().to_vec(),
            vocab: self.vocab.tokens().to_vec(),
            merges: self
                .merges
                .iter()
                .map(|(l, r)| [l.clone(), r.clone()])
                .collect(),
            word_prefix: self.word_prefix.clone(),
            added_tokens: self.added.clone(),
        }
    }

    pub fn from_file(file: TokenizerFile) -> Result<Self> {
        if file.version != FORMAT_VERSION {
            return Err(Error::input(format!(
                "unsupported tokenizer version {}",
                file.version
            )));
        }
        if file.specials.len() != NUM_SPECIALS {
            return Err(Error::input(format!(
                "expected {NUM_SPECIALS} specials, found {}",
                file.specials.len()
            )));
        }
        if file.vocab.len() < NUM_SPECIALS || file.vocab[..NUM_SPECIALS] != file.specials[..] {
            return Err(Error::input("special tokens must occupy the lowest vocabulary ids"));
        }
        let vocab = Vocabulary::new(file.vocab)?;
        let merges = file.merges.into_iter().map(|[l, r]| (l, r)).collect();
        Self::from_parts(vocab, merges, file.word_prefix, file.added_tokens)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(&self.to_file()).expect("tokenizer serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(text)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, self.to_json().as_bytes())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_to_string(path)?)
    }
}
