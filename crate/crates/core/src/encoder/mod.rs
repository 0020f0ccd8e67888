//! The reference bi-encoder: mean-pooled token embeddings followed by a
//! `tanh` projection, optionally L2-normalised. The same weights carry a tied
//! MLM head for continued pre-training and a pair classifier used as the
//! cross-encoder during augmentation.

mod batch;
mod kernels;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

pub use batch::{PairBatch, TokenBatch, DEFAULT_MAX_LEN};
pub use kernels::{
    cross_backward, cross_forward, embed_backward, embed_forward, mlm_backward, mlm_forward,
    CrossCache, EmbedCache, EncoderGrads, EncoderWeights, MlmCache,
};

use crate::checkpoint::{ModelCheckpoint, Tensor, TensorRole};
use crate::error::{Error, Result};
use crate::linalg::Matrix;
use crate::vocab::BpeTokenizer;

pub const EMBEDDING_TENSOR: &str = "embeddings.word";
pub const PROJ_WEIGHT_TENSOR: &str = "pooler.dense.weight";
pub const PROJ_BIAS_TENSOR: &str = "pooler.dense.bias";
pub const MLM_WEIGHT_TENSOR: &str = "mlm.transform.weight";
pub const CLS_WEIGHT_TENSOR: &str = "cross.classifier.weight";
pub const CLS_BIAS_TENSOR: &str = "cross.classifier.bias";

const META_NORMALIZE: &str = "normalize_output";
const META_MAX_LEN: &str = "max_len";

const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum SimilarityKind {
    #[default]
    Cosine,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    #[serde(default)]
    pub kind: SimilarityKind,
    /// Multiplier applied to similarities before the softmax.
    pub scale: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            kind: SimilarityKind::Cosine,
            scale: 20.0,
        }
    }
}

impl SimilarityConfig {
    pub fn validate(&self) -> Result<()> {
        if self.scale > 0.0 && self.scale.is_finite() {
            Ok(())
        } else {
            Err(Error::config(format!("similarity scale must be positive, got {}", self.scale)))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    /// Output dimension; `None` keeps the model dimension.
    pub out_dim: Option<usize>,
    pub normalize_output: bool,
    pub max_len: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            out_dim: None,
            normalize_output: true,
            max_len: DEFAULT_MAX_LEN,
        }
    }
}

/// Anything that turns texts into fixed-size vectors.
pub trait SentenceEncoder: Sync {
    fn encode(&self, texts: &[&str]) -> Result<Matrix<f32>>;
    fn out_dim(&self) -> usize;
    /// Identifies the weights, so an index can be matched to its encoder.
    fn fingerprint(&self) -> String;
}

/// Anything that scores a text pair in `[0, 1]`.
pub trait PairScorer: Sync {
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f32>>;
}

/// Tokenizer, weights, and the remaining checkpoint tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct BiEncoder {
    tokenizer: BpeTokenizer,
    weights: EncoderWeights<f32>,
    config: EncoderConfig,
    /// Checkpoint the weights came from; untouched tensors are written back.
    base: ModelCheckpoint,
    embedding_name: String,
}

fn normal_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f32> {
    let n = Normal::new(0.0, INIT_STD).expect("valid std");
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| n.sample(rng) as f32).collect())
}

impl BiEncoder {
    /// A freshly initialised encoder: embeddings ~ N(0, 0.02²), identity
    /// projection (random when `out_dim != dim`), identity MLM transform and a
    /// zero pair classifier.
    pub fn init(tokenizer: BpeTokenizer, dim: usize, config: EncoderConfig, seed: u64) -> Result<Self> {
        if dim == 0 {
            return Err(Error::config("model dimension must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let embedding = normal_matrix(tokenizer.vocab_size(), dim, &mut rng);
        let mut ckpt = ModelCheckpoint::new(dim, tokenizer.fingerprint());
        ckpt.insert(
            EMBEDDING_TENSOR,
            Tensor::new(vec![embedding.rows(), dim], embedding.into_vec(), TensorRole::Embedding)?,
        );
        Self::from_checkpoint(ckpt, tokenizer, config, seed)
    }

    /// Wraps a checkpoint; heads missing from it are initialised as in
    /// [`init`](Self::init).
    pub fn from_checkpoint(
        ckpt: ModelCheckpoint,
        tokenizer: BpeTokenizer,
        config: EncoderConfig,
        seed: u64,
    ) -> Result<Self> {
        ckpt.validate()?;
        ckpt.check_vocab(&tokenizer.fingerprint())?;
        let (emb_name, emb) = ckpt.embedding()?;
        let dim = ckpt.dim()?;
        if emb.rows() != tokenizer.vocab_size() {
            return Err(Error::Checkpoint(format!(
                "embedding has {} rows but the tokenizer has {} tokens",
                emb.rows(),
                tokenizer.vocab_size()
            )));
        }
        let out_dim = match ckpt.get(PROJ_WEIGHT_TENSOR) {
            Some(t) => t.rows(),
            None => config.out_dim.unwrap_or(dim),
        };
        if config.out_dim.is_some_and(|o| o != out_dim) {
            return Err(Error::config(format!(
                "requested output dimension {:?} but checkpoint projection has {out_dim}",
                config.out_dim
            )));
        }
        // Head initialisation draws from its own stream so that it does not
        // depend on whether the embedding was sampled.
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x9e37_79b9_7f4a_7c15);
        let matrix = |name: &str, rows: usize, cols: usize, init: &mut dyn FnMut() -> Matrix<f32>| -> Result<Matrix<f32>> {
            match ckpt.get(name) {
                Some(t) if t.shape == [rows, cols] => Ok(Matrix::from_vec(rows, cols, t.data.clone())),
                Some(t) => Err(Error::Checkpoint(format!(
                    "tensor `{name}` has shape {:?}, expected [{rows}, {cols}]",
                    t.shape
                ))),
                None => Ok(init()),
            }
        };
        let vector = |name: &str, len: usize| -> Result<Vec<f32>> {
            match ckpt.get(name) {
                Some(t) if t.data.len() == len => Ok(t.data.clone()),
                Some(t) => Err(Error::Checkpoint(format!(
                    "tensor `{name}` has {} values, expected {len}",
                    t.data.len()
                ))),
                None => Ok(vec![0.0; len]),
            }
        };
        let proj_weight = matrix(PROJ_WEIGHT_TENSOR, out_dim, dim, &mut || {
            if out_dim == dim {
                Matrix::identity(dim)
            } else {
                normal_matrix(out_dim, dim, &mut rng)
            }
        })?;
        let mlm_weight = matrix(MLM_WEIGHT_TENSOR, dim, dim, &mut || Matrix::identity(dim))?;
        let weights = EncoderWeights {
            embedding: Matrix::from_vec(emb.rows(), dim, emb.data.clone()),
            proj_weight,
            proj_bias: vector(PROJ_BIAS_TENSOR, out_dim)?,
            mlm_weight,
            cls_weight: vector(CLS_WEIGHT_TENSOR, 2 * dim)?,
            cls_bias: vector(CLS_BIAS_TENSOR, 1)?[0],
        };
        weights.check_shapes()?;

        let mut config = config;
        config.out_dim = Some(out_dim);
        if let Some(v) = ckpt.metadata().get(META_NORMALIZE) {
            config.normalize_output = v == "true";
        }
        if let Some(v) = ckpt.metadata().get(META_MAX_LEN).and_then(|v| v.parse().ok()) {
            config.max_len = v;
        }
        if config.max_len < 3 {
            return Err(Error::config("max_len must be at least 3"));
        }
        let embedding_name = emb_name.to_string();
        Ok(Self {
            tokenizer,
            weights,
            config,
            base: ckpt,
            embedding_name,
        })
    }

    pub fn load(ckpt_path: &std::path::Path, tok_path: &std::path::Path) -> Result<Self> {
        let ckpt = ModelCheckpoint::load(ckpt_path)?;
        let tok = BpeTokenizer::load(tok_path)?;
        Self::from_checkpoint(ckpt, tok, EncoderConfig::default(), 0)
    }

    pub fn save(&self, ckpt_path: &std::path::Path, tok_path: &std::path::Path) -> Result<()> {
        self.to_checkpoint().save(ckpt_path)?;
        self.tokenizer.save(tok_path)
    }

    pub fn to_checkpoint(&self) -> ModelCheckpoint {
        let w = &self.weights;
        let d = w.dim();
        let mut c = self.base.clone();
        let t = |shape: Vec<usize>, data: Vec<f32>, role| Tensor::new(shape, data, role).expect("consistent shape");
        c.insert(
            self.embedding_name.clone(),
            Tensor {
                shape: vec![w.vocab_size(), d],
                data: w.embedding.as_slice().to_vec(),
                ..self.base.get(&self.embedding_name).expect("embedding present").clone()
            },
        );
        c.insert(PROJ_WEIGHT_TENSOR, t(vec![w.out_dim(), d], w.proj_weight.as_slice().to_vec(), TensorRole::Head));
        c.insert(PROJ_BIAS_TENSOR, t(vec![w.out_dim()], w.proj_bias.clone(), TensorRole::Head));
        c.insert(MLM_WEIGHT_TENSOR, t(vec![d, d], w.mlm_weight.as_slice().to_vec(), TensorRole::Head));
        c.insert(CLS_WEIGHT_TENSOR, t(vec![2 * d], w.cls_weight.clone(), TensorRole::Head));
        c.insert(CLS_BIAS_TENSOR, t(vec![1], vec![w.cls_bias], TensorRole::Head));
        c.set_metadata(META_NORMALIZE, self.config.normalize_output.to_string());
        c.set_metadata(META_MAX_LEN, self.config.max_len.to_string());
        c
    }

    pub fn tokenizer(&self) -> &BpeTokenizer {
        &self.tokenizer
    }

    pub fn weights(&self) -> &EncoderWeights<f32> {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut EncoderWeights<f32> {
        &mut self.weights
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn dim(&self) -> usize {
        self.weights.dim()
    }

    pub fn token_batch(&self, texts: &[&str]) -> TokenBatch {
        TokenBatch::from_texts(&self.tokenizer, texts, self.config.max_len)
    }

    pub fn pair_batch(&self, pairs: &[(&str, &str)]) -> PairBatch {
        PairBatch::from_pairs(&self.tokenizer, pairs, self.config.max_len)
    }

    pub fn embed(&self, batch: &TokenBatch) -> Result<Matrix<f32>> {
        Ok(embed_forward(&self.weights, batch, self.config.normalize_output)?.0)
    }

    pub fn embed_grad(&self, batch: &TokenBatch, upstream: &Matrix<f32>) -> Result<EncoderGrads<f32>> {
        let (_, cache) = embed_forward(&self.weights, batch, self.config.normalize_output)?;
        embed_backward(&self.weights, batch, &cache, upstream)
    }

    pub fn mlm_logits(&self, batch: &TokenBatch, positions: &[(usize, usize)]) -> Result<Matrix<f32>> {
        Ok(mlm_forward(&self.weights, batch, positions)?.0)
    }

    pub fn cross_encode(&self, pairs: &PairBatch) -> Result<Vec<f32>> {
        Ok(cross_forward(&self.weights, pairs)?.0)
    }
}

impl SentenceEncoder for BiEncoder {
    fn encode(&self, texts: &[&str]) -> Result<Matrix<f32>> {
        self.embed(&self.token_batch(texts))
    }

    fn out_dim(&self) -> usize {
        self.weights.out_dim()
    }

    fn fingerprint(&self) -> String {
        self.to_checkpoint().fingerprint()
    }
}

impl PairScorer for BiEncoder {
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> Result<Vec<f32>> {
        if pairs.is_empty() {
            return Ok(Vec::new());
        }
        self.cross_encode(&self.pair_batch(pairs))
    }
}

#[cfg(test)]
mod tests;
