use crate::error::{Error, Result};
use crate::vocab::{BpeTokenizer, BEGIN_ID, END_ID, PAD_ID};

pub const DEFAULT_MAX_LEN: usize = 128;

/// Padded `[B, L]` token ids with a 0/1 mask (1 = real token).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    ids: Vec<u32>,
    mask: Vec<u8>,
    batch: usize,
    len: usize,
}

impl TokenBatch {
    pub fn new(ids: Vec<u32>, mask: Vec<u8>, batch: usize, len: usize) -> Result<Self> {
        if ids.len() != batch * len || mask.len() != batch * len {
            return Err(Error::input(format!(
                "token batch of shape [{batch}, {len}] needs {} ids and mask entries",
                batch * len
            )));
        }
        if mask.iter().any(|&m| m > 1) {
            return Err(Error::input("mask entries must be 0 or 1"));
        }
        Ok(Self {
            ids,
            mask,
            batch,
            len,
        })
    }

    /// Right-pads (and right-truncates to `max_len`) a list of sequences.
    pub fn from_sequences(seqs: &[Vec<u32>], max_len: usize) -> Self {
        let len = seqs.iter().map(|s| s.len().min(max_len)).max().unwrap_or(0);
        let mut ids = Vec::with_capacity(seqs.len() * len);
        let mut mask = Vec::with_capacity(seqs.len() * len);
        for s in seqs {
            let s = &s[..s.len().min(max_len)];
            ids.extend_from_slice(s);
            mask.extend(std::iter::repeat_n(1u8, s.len()));
            ids.extend(std::iter::repeat_n(PAD_ID, len - s.len()));
            mask.extend(std::iter::repeat_n(0u8, len - s.len()));
        }
        Self {
            ids,
            mask,
            batch: seqs.len(),
            len,
        }
    }

    pub fn from_texts(tok: &BpeTokenizer, texts: &[&str], max_len: usize) -> Self {
        let seqs: Vec<Vec<u32>> = texts.iter().map(|t| tok.encode(t)).collect();
        Self::from_sequences(&seqs, max_len)
    }

    pub fn batch_size(&self) -> usize {
        self.batch
    }

    pub fn seq_len(&self) -> usize {
        self.len
    }

    pub fn ids_row(&self, b: usize) -> &[u32] {
        &self.ids[b * self.len..(b + 1) * self.len]
    }

    pub fn mask_row(&self, b: usize) -> &[u8] {
        &self.mask[b * self.len..(b + 1) * self.len]
    }

    pub fn id(&self, b: usize, l: usize) -> u32 {
        self.ids[b * self.len + l]
    }

    pub fn set_id(&mut self, b: usize, l: usize, id: u32) {
        self.ids[b * self.len + l] = id;
    }

    pub fn is_real(&self, b: usize, l: usize) -> bool {
        self.mask[b * self.len + l] == 1
    }

    /// Ids of the real (unmasked) tokens of row `b`.
    pub fn real_ids(&self, b: usize) -> impl Iterator<Item = u32> + '_ {
        self.ids_row(b)
            .iter()
            .zip(self.mask_row(b))
            .filter(|(_, &m)| m == 1)
            .map(|(&id, _)| id)
    }

    pub fn real_count(&self, b: usize) -> usize {
        self.mask_row(b).iter().filter(|&&m| m == 1).count()
    }

    /// Checks that every row has a real token and that ids fit the vocabulary.
    pub fn validate(&self, vocab_size: usize) -> Result<()> {
        for b in 0..self.batch {
            if self.real_count(b) == 0 {
                return Err(Error::input(format!("row {b} of the token batch is all padding")));
            }
            if let Some(id) = self.real_ids(b).find(|&id| id as usize >= vocab_size) {
                return Err(Error::input(format!(
                    "token id {id} in row {b} is out of range for vocabulary of {vocab_size}"
                )));
            }
        }
        Ok(())
    }
}

/// Anchor/positive pairs laid out as `<s> a </s> b </s>` with a segment id per
/// position: 0 for `<s> a </s>`, 1 for `b </s>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairBatch {
    pub tokens: TokenBatch,
    segments: Vec<u8>,
}

impl PairBatch {
    /// Over-length pairs lose tokens from the right end of `b` first; `a` is
    /// only cut when it alone exceeds the limit. Both separators always stay.
    pub fn from_pairs(tok: &BpeTokenizer, pairs: &[(&str, &str)], max_len: usize) -> Self {
        let max_len = max_len.max(3);
        let mut seqs = Vec::with_capacity(pairs.len());
        let mut segs = Vec::with_capacity(pairs.len());
        for (a, b) in pairs {
            let mut pa = tok.encode_pieces(a);
            let mut pb = tok.encode_pieces(b);
            let budget = max_len - 3;
            pa.truncate(budget);
            pb.truncate(budget - pa.len());
            let mut seq = Vec::with_capacity(pa.len() + pb.len() + 3);
            seq.push(BEGIN_ID);
            seq.extend(&pa);
            seq.push(END_ID);
            let first = seq.len();
            seq.extend(&pb);
            seq.push(END_ID);
            let mut seg = vec![0u8; first];
            seg.resize(seq.len(), 1);
            seqs.push(seq);
            segs.push(seg);
        }
        let tokens = TokenBatch::from_sequences(&seqs, max_len);
        let len = tokens.seq_len();
        let mut segments = Vec::with_capacity(pairs.len() * len);
        for mut s in segs {
            s.resize(len, 1);
            segments.extend(s);
        }
        Self { tokens, segments }
    }

    pub fn new(tokens: TokenBatch, segments: Vec<u8>) -> Result<Self> {
        if segments.len() != tokens.batch_size() * tokens.seq_len() {
            return Err(Error::input("segment ids do not match the token batch shape"));
        }
        Ok(Self { tokens, segments })
    }

    pub fn segment(&self, b: usize, l: usize) -> u8 {
        self.segments[b * self.tokens.seq_len() + l]
    }

    pub fn len(&self) -> usize {
        self.tokens.batch_size()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Padding appended at the end of every row (for invariance checks).
    pub fn with_extra_padding(&self, extra: usize) -> Self {
        let b = self.tokens.batch_size();
        let l = self.tokens.seq_len();
        let mut ids = Vec::with_capacity(b * (l + extra));
        let mut mask = Vec::with_capacity(b * (l + extra));
        let mut segments = Vec::with_capacity(b * (l + extra));
        for r in 0..b {
            ids.extend_from_slice(self.tokens.ids_row(r));
            ids.extend(std::iter::repeat_n(PAD_ID, extra));
            mask.extend_from_slice(self.tokens.mask_row(r));
            mask.extend(std::iter::repeat_n(0, extra));
            segments.extend_from_slice(&self.segments[r * l..(r + 1) * l]);
            segments.extend(std::iter::repeat_n(1, extra));
        }
        Self {
            tokens: TokenBatch::new(ids, mask, b, l + extra).expect("consistent shape"),
            segments,
        }
    }
}
