use std::cmp::Ordering;
use std::path::{Path, PathBuf};

use log::warn;
use rayon::prelude::*;

use super::corpus::Corpus;
use crate::checkpoint::{ModelCheckpoint, Tensor, TensorRole};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};
use crate::io;
use crate::linalg::{dot, l2_norm, Matrix};

const VECTORS_TENSOR: &str = "vectors";
const META_ENCODER: &str = "encoder_fingerprint";
const ENCODE_CHUNK: usize = 64;

/// One search result.
#[derive(Debug, Clone, PartialEq)]
pub struct Hit {
    pub position: usize,
    pub doc_id: String,
    pub score: f32,
}

/// Unit-normalised document vectors in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingIndex {
    corpus: Corpus,
    vectors: Matrix<f32>,
    fingerprint: String,
}

fn normalize_rows(m: &mut Matrix<f32>) -> Result<()> {
    for r in 0..m.rows() {
        let row = m.row_mut(r);
        let n = l2_norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(Error::Numeric(format!("vector {r} has norm {n}")));
        }
        row.iter_mut().for_each(|x| *x /= n);
    }
    Ok(())
}

/// Encodes and normalises texts, in parallel chunks with fixed placement.
pub fn encode_normalized<E: SentenceEncoder + ?Sized>(enc: &E, texts: &[&str]) -> Result<Matrix<f32>> {
    let d = enc.out_dim();
    let parts: Vec<Matrix<f32>> = texts
        .par_chunks(ENCODE_CHUNK)
        .map(|chunk| {
            let mut m = enc.encode(chunk)?;
            normalize_rows(&mut m)?;
            Ok(m)
        })
        .collect::<Result<_>>()?;
    let mut data = Vec::with_capacity(texts.len() * d);
    for p in parts {
        data.extend_from_slice(p.as_slice());
    }
    Ok(Matrix::from_vec(texts.len(), d, data))
}

pub fn build_index<E: SentenceEncoder + ?Sized>(enc: &E, corpus: &Corpus) -> Result<EmbeddingIndex> {
    if corpus.is_empty() {
        return Err(Error::input("cannot index an empty corpus"));
    }
    let texts: Vec<&str> = corpus.entries().iter().map(|(_, t)| t.as_str()).collect();
    Ok(EmbeddingIndex {
        corpus: corpus.clone(),
        vectors: encode_normalized(enc, &texts)?,
        fingerprint: enc.fingerprint(),
    })
}

impl EmbeddingIndex {
    /// Wraps precomputed vectors; rows are normalised here.
    pub fn from_vectors(corpus: Corpus, mut vectors: Matrix<f32>, fingerprint: impl Into<String>) -> Result<Self> {
        if vectors.rows() != corpus.len() {
            return Err(Error::input(format!(
                "{} vectors for {} documents",
                vectors.rows(),
                corpus.len()
            )));
        }
        normalize_rows(&mut vectors)?;
        Ok(Self {
            corpus,
            vectors,
            fingerprint: fingerprint.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.corpus.len()
    }

    pub fn is_empty(&self) -> bool {
        self.corpus.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.vectors.cols()
    }

    pub fn corpus(&self) -> &Corpus {
        &self.corpus
    }

    pub fn vectors(&self) -> &Matrix<f32> {
        &self.vectors
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Top-`k` documents by dot product, ties by corpus position.
    pub fn search(&self, query: &[f32], k: usize) -> Result<Vec<Hit>> {
        if k == 0 {
            return Err(Error::input("k must be at least 1"));
        }
        if query.len() != self.dim() {
            return Err(Error::input(format!(
                "query has dimension {}, index has {}",
                query.len(),
                self.dim()
            )));
        }
        if k > self.len() {
            warn!("k = {k} exceeds index size {}; returning all documents", self.len());
        }
        let mut scored: Vec<(usize, f32)> = self
            .vectors
            .iter_rows()
            .enumerate()
            .map(|(i, row)| (i, dot(row, query)))
            .collect();
        let by_rank = |a: &(usize, f32), b: &(usize, f32)| b.1.partial_cmp(&a.1).unwrap_or(Ordering::Equal).then(a.0.cmp(&b.0));
        let k = k.min(scored.len());
        if k < scored.len() {
            scored.select_nth_unstable_by(k - 1, by_rank);
            scored.truncate(k);
        }
        scored.sort_by(by_rank);
        Ok(scored
            .into_iter()
            .map(|(i, score)| Hit {
                position: i,
                doc_id: self.corpus.entries()[i].0.clone(),
                score,
            })
            .collect())
    }

    /// Encodes the query with `enc` and searches. The encoder must be the one
    /// that built the index.
    pub fn search_text<E: SentenceEncoder + ?Sized>(&self, enc: &E, query: &str, k: usize) -> Result<Vec<Hit>> {
        let q = encode_normalized(enc, &[query])?;
        self.search(q.row(0), k)
    }

    pub fn check_encoder(&self, fingerprint: &str) -> Result<()> {
        if self.fingerprint != fingerprint {
            return Err(Error::config(format!(
                "index was built with encoder {} but {} was supplied",
                self.fingerprint, fingerprint
            )));
        }
        Ok(())
    }

    /// Path of the `doc_id \t text` file stored next to an index file.
    pub fn sidecar_path(path: &Path) -> PathBuf {
        let mut s = path.as_os_str().to_owned();
        s.push(".docs.tsv");
        PathBuf::from(s)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut c = ModelCheckpoint::new(self.dim(), self.corpus_hash());
        c.set_metadata(META_ENCODER, self.fingerprint.clone());
        c.insert(
            VECTORS_TENSOR,
            Tensor::new(
                vec![self.len(), self.dim()],
                self.vectors.as_slice().to_vec(),
                TensorRole::Encoder,
            )?,
        );
        c.save(path)?;
        self.corpus.save(&Self::sidecar_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let c = ModelCheckpoint::load(path)?;
        let t = c.require(VECTORS_TENSOR)?;
        if t.shape.len() != 2 {
            return Err(Error::Checkpoint("index vectors must be a matrix".into()));
        }
        let corpus = Corpus::load(&Self::sidecar_path(path))?;
        let fingerprint = c
            .metadata()
            .get(META_ENCODER)
            .cloned()
            .ok_or_else(|| Error::Checkpoint("index has no encoder fingerprint".into()))?;
        let index = Self {
            vectors: Matrix::from_vec(t.shape[0], t.shape[1], t.data.clone()),
            corpus,
            fingerprint,
        };
        if index.vectors.rows() != index.corpus.len() {
            return Err(Error::Checkpoint(format!(
                "index has {} vectors but its document file lists {}",
                index.vectors.rows(),
                index.corpus.len()
            )));
        }
        if c.vocab_hash() != Some(index.corpus_hash().as_str()) {
            return Err(Error::Checkpoint("index document file does not match the vectors".into()));
        }
        Ok(index)
    }

    fn corpus_hash(&self) -> String {
        io::sha256_hex(self.corpus.to_tsv().as_bytes())
    }
}
