//! Vocabulary surgery on checkpoints.
//!
//! [`reduce_model`] keeps a subset of embedding rows (language reduction) and
//! [`extend_model`] appends rows for new tokens initialised from the mean of
//! their subtoken rows (domain vocabulary). Tensors tagged `encoder`, and heads
//! not indexed by token id, are carried over untouched. The MLM head of the
//! reference encoder is tied to the embedding, so it is remapped exactly once
//! through the embedding itself.

use std::collections::HashSet;

use log::warn;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::checkpoint::{ModelCheckpoint, Tensor, META_VOCAB_HASH};
use crate::error::{Error, Result};
use crate::vocab::{is_special, BpeTokenizer, VocabIntersection};

/// Standard deviation of the Gaussian used for tokens with no usable subtokens.
pub const FALLBACK_INIT_STD: f64 = 0.02;

/// Gathers the embedding rows (and vocabulary-head rows) named by the
/// mapping's donor ids into a new checkpoint ordered by new id.
pub fn reduce_model(src: &ModelCheckpoint, mapping: &VocabIntersection) -> Result<ModelCheckpoint> {
    let (_, emb) = src.embedding()?;
    let rows = emb.rows();
    for p in &mapping.pairs {
        if p.old_id as usize >= rows {
            return Err(Error::Mapping(format!(
                "token {:?} has donor id {} but the embedding has {rows} rows",
                p.token, p.old_id
            )));
        }
    }
    let keep: Vec<usize> = mapping.old_ids().map(|i| i as usize).collect();

    let mut out = ModelCheckpoint::default();
    for (k, v) in src.metadata() {
        out.set_metadata(k.clone(), v.clone());
    }
    for (name, t) in src.tensors() {
        let t = if is_vocab_indexed(t) {
            gather_rows(t, &keep)
        } else {
            t.clone()
        };
        out.insert(name, t);
    }
    out.set_metadata(META_VOCAB_HASH, mapping.vocabulary()?.fingerprint());
    Ok(out)
}

fn is_vocab_indexed(t: &Tensor) -> bool {
    t.role == crate::checkpoint::TensorRole::Embedding || t.vocab_rows
}

fn gather_rows(t: &Tensor, keep: &[usize]) -> Tensor {
    let n = t.row_len();
    let mut data = Vec::with_capacity(keep.len() * n);
    for &r in keep {
        data.extend_from_slice(t.row(r));
    }
    let mut shape = t.shape.clone();
    shape[0] = keep.len();
    Tensor { shape, data, ..t.clone() }
}

/// Result of [`extend_model`].
#[derive(Debug, Clone)]
pub struct Extension {
    pub checkpoint: ModelCheckpoint,
    /// `tokenizer` plus the new tokens, matching the extended checkpoint.
    pub tokenizer: BpeTokenizer,
    /// New tokens with no non-special subtokens; their rows are drawn from
    /// N(0, [`FALLBACK_INIT_STD`]²).
    pub fallback_tokens: Vec<String>,
}

/// Appends one embedding row per new token, in order. Each row is the
/// arithmetic mean, accumulated in `f64`, of the rows of the token's
/// subtokens under `tokenizer` (special tokens skipped).
pub fn extend_model(
    src: &ModelCheckpoint,
    new_tokens: &[String],
    tokenizer: &BpeTokenizer,
    seed: u64,
) -> Result<Extension> {
    let (_, emb) = src.embedding()?;
    src.check_vocab(&tokenizer.fingerprint())?;
    if emb.rows() != tokenizer.vocab_size() {
        return Err(Error::Checkpoint(format!(
            "embedding has {} rows but the tokenizer has {} tokens",
            emb.rows(),
            tokenizer.vocab_size()
        )));
    }
    let mut seen = HashSet::new();
    for t in new_tokens {
        if tokenizer.vocab().contains(t) {
            return Err(Error::input(format!("token {t:?} is already in the vocabulary")));
        }
        if !seen.insert(t) {
            return Err(Error::input(format!("token {t:?} listed twice")));
        }
    }
    if new_tokens.is_empty() {
        return Ok(Extension {
            checkpoint: src.clone(),
            tokenizer: tokenizer.clone(),
            fallback_tokens: Vec::new(),
        });
    }
    let extended_tok = tokenizer.with_added_tokens(new_tokens)?;

    let sources: Vec<Vec<usize>> = new_tokens
        .iter()
        .map(|t| {
            tokenizer
                .segment_piece(t)
                .into_iter()
                .filter(|&id| !is_special(id))
                .map(|id| id as usize)
                .collect()
        })
        .collect();
    let fallback_tokens: Vec<String> = new_tokens
        .iter()
        .zip(&sources)
        .filter(|(_, s)| s.is_empty())
        .map(|(t, _)| t.clone())
        .collect();
    if !fallback_tokens.is_empty() {
        warn!(
            "{} new token(s) have no known subtokens and get random rows: {:?}",
            fallback_tokens.len(),
            fallback_tokens
        );
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, FALLBACK_INIT_STD).expect("valid std");
    let mut out = ModelCheckpoint::default();
    for (k, v) in src.metadata() {
        out.set_metadata(k.clone(), v.clone());
    }
    // Tensors are visited in name order, so the fallback draws are reproducible.
    for (name, t) in src.tensors() {
        if !is_vocab_indexed(t) {
            out.insert(name, t.clone());
            continue;
        }
        let n = t.row_len();
        let mut data = t.data.clone();
        data.reserve(new_tokens.len() * n);
        for rows in &sources {
            if rows.is_empty() {
                data.extend((0..n).map(|_| normal.sample(&mut rng) as f32));
            } else {
                data.extend(mean_rows(t, rows));
            }
        }
        let mut shape = t.shape.clone();
        shape[0] += new_tokens.len();
        out.insert(name, Tensor { shape, data, ..t.clone() });
    }
    out.set_metadata(META_VOCAB_HASH, extended_tok.fingerprint());
    Ok(Extension {
        checkpoint: out,
        tokenizer: extended_tok,
        fallback_tokens,
    })
}

fn mean_rows(t: &Tensor, rows: &[usize]) -> Vec<f32> {
    let n = t.row_len();
    let mut acc = vec![0.0f64; n];
    for &r in rows {
        for (a, &x) in acc.iter_mut().zip(t.row(r)) {
            *a += f64::from(x);
        }
    }
    let k = rows.len() as f64;
    acc.into_iter().map(|a| (a / k) as f32).collect()
}
