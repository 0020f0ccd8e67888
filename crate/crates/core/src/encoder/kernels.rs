//! Forward and backward passes of the pooled encoder, generic over the float
//! type so that gradients can be checked on a 64-bit copy of the weights.

use num_traits::Float;

use super::batch::{PairBatch, TokenBatch};
use crate::error::{Error, Result};
use crate::linalg::{dot, l2_norm, Matrix};

/// Trainable parameters of the reference encoder.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderWeights<T> {
    /// Token embedding `E`, `[V, d]`. Also the (tied) MLM output layer.
    pub embedding: Matrix<T>,
    /// Pooler projection `W`, `[d_out, d]`.
    pub proj_weight: Matrix<T>,
    pub proj_bias: Vec<T>,
    /// MLM context transform `W_m`, `[d, d]`.
    pub mlm_weight: Matrix<T>,
    /// Pair classifier over `[pool(pair), pool(a) ⊙ pool(b)]`, length `2d`.
    pub cls_weight: Vec<T>,
    pub cls_bias: T,
}

impl<T: Float> EncoderWeights<T> {
    pub fn vocab_size(&self) -> usize {
        self.embedding.rows()
    }

    pub fn dim(&self) -> usize {
        self.embedding.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.proj_weight.rows()
    }

    pub fn cast<U: Float>(&self) -> EncoderWeights<U> {
        let c = |x: T| U::from(x).expect("float cast");
        EncoderWeights {
            embedding: self.embedding.map(c),
            proj_weight: self.proj_weight.map(c),
            proj_bias: self.proj_bias.iter().map(|&x| c(x)).collect(),
            mlm_weight: self.mlm_weight.map(c),
            cls_weight: self.cls_weight.iter().map(|&x| c(x)).collect(),
            cls_bias: c(self.cls_bias),
        }
    }

    pub fn check_shapes(&self) -> Result<()> {
        let d = self.dim();
        let ok = self.proj_weight.cols() == d
            && self.out_dim() > 0
            && self.proj_bias.len() == self.out_dim()
            && self.mlm_weight.shape() == (d, d)
            && self.cls_weight.len() == 2 * d;
        if ok {
            Ok(())
        } else {
            Err(Error::Checkpoint(format!(
                "inconsistent encoder shapes: E {:?}, W {:?}, b {}, W_m {:?}, cls {}",
                self.embedding.shape(),
                self.proj_weight.shape(),
                self.proj_bias.len(),
                self.mlm_weight.shape(),
                self.cls_weight.len()
            )))
        }
    }
}

/// Gradients with the same layout as [`EncoderWeights`].
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderGrads<T> {
    pub embedding: Matrix<T>,
    pub proj_weight: Matrix<T>,
    pub proj_bias: Vec<T>,
    pub mlm_weight: Matrix<T>,
    pub cls_weight: Vec<T>,
    pub cls_bias: T,
}

impl<T: Float> EncoderGrads<T> {
    pub fn zeros_like(w: &EncoderWeights<T>) -> Self {
        Self {
            embedding: Matrix::zeros(w.vocab_size(), w.dim()),
            proj_weight: Matrix::zeros(w.out_dim(), w.dim()),
            proj_bias: vec![T::zero(); w.out_dim()],
            mlm_weight: Matrix::zeros(w.dim(), w.dim()),
            cls_weight: vec![T::zero(); 2 * w.dim()],
            cls_bias: T::zero(),
        }
    }

    pub fn add_assign(&mut self, other: &Self) {
        let add = |a: &mut [T], b: &[T]| a.iter_mut().zip(b).for_each(|(x, &y)| *x = *x + y);
        add(self.embedding.as_mut_slice(), other.embedding.as_slice());
        add(self.proj_weight.as_mut_slice(), other.proj_weight.as_slice());
        add(&mut self.proj_bias, &other.proj_bias);
        add(self.mlm_weight.as_mut_slice(), other.mlm_weight.as_slice());
        add(&mut self.cls_weight, &other.cls_weight);
        self.cls_bias = self.cls_bias + other.cls_bias;
    }

    pub fn is_zero(&self) -> bool {
        let z = |s: &[T]| s.iter().all(|x| x.is_zero());
        z(self.embedding.as_slice())
            && z(self.proj_weight.as_slice())
            && z(&self.proj_bias)
            && z(self.mlm_weight.as_slice())
            && z(&self.cls_weight)
            && self.cls_bias.is_zero()
    }
}

fn mean_pool<T: Float>(emb: &Matrix<T>, ids: impl Iterator<Item = u32>) -> (Vec<T>, usize) {
    let mut acc = vec![T::zero(); emb.cols()];
    let mut n = 0usize;
    for id in ids {
        for (a, &x) in acc.iter_mut().zip(emb.row(id as usize)) {
            *a = *a + x;
        }
        n += 1;
    }
    let inv = T::one() / T::from(n.max(1)).expect("count fits");
    acc.iter_mut().for_each(|a| *a = *a * inv);
    (acc, n)
}

fn scatter_mean<T: Float>(grad: &mut Matrix<T>, ids: impl Iterator<Item = u32>, g: &[T], n: usize) {
    let inv = T::one() / T::from(n).expect("count fits");
    for id in ids {
        for (x, &gi) in grad.row_mut(id as usize).iter_mut().zip(g) {
            *x = *x + gi * inv;
        }
    }
}

/// Intermediate values of [`embed_forward`] needed for the backward pass.
#[derive(Debug, Clone)]
pub struct EmbedCache<T> {
    pooled: Vec<Vec<T>>,
    counts: Vec<usize>,
    hidden: Vec<Vec<T>>,
    norms: Vec<T>,
    normalize: bool,
}

/// `normalize(tanh(W · meanpool(E[ids]) + b))` per row.
pub fn embed_forward<T: Float>(
    w: &EncoderWeights<T>,
    batch: &TokenBatch,
    normalize: bool,
) -> Result<(Matrix<T>, EmbedCache<T>)> {
    batch.validate(w.vocab_size())?;
    let bsz = batch.batch_size();
    let mut out = Matrix::zeros(bsz, w.out_dim());
    let mut cache = EmbedCache {
        pooled: Vec::with_capacity(bsz),
        counts: Vec::with_capacity(bsz),
        hidden: Vec::with_capacity(bsz),
        norms: Vec::with_capacity(bsz),
        normalize,
    };
    for b in 0..bsz {
        let (pooled, n) = mean_pool(&w.embedding, batch.real_ids(b));
        let mut h = w.proj_weight.matvec(&pooled);
        for (hi, &bi) in h.iter_mut().zip(&w.proj_bias) {
            *hi = (*hi + bi).tanh();
        }
        let norm = l2_norm(&h);
        let row = out.row_mut(b);
        if normalize {
            if norm <= T::zero() || !norm.is_finite() {
                return Err(Error::Numeric(format!(
                    "embedding of row {b} has zero norm and cannot be normalized"
                )));
            }
            for (o, &hi) in row.iter_mut().zip(&h) {
                *o = hi / norm;
            }
        } else {
            row.copy_from_slice(&h);
        }
        cache.pooled.push(pooled);
        cache.counts.push(n);
        cache.hidden.push(h);
        cache.norms.push(norm);
    }
    Ok((out, cache))
}

/// Backpropagates `upstream = ∂L/∂output` through [`embed_forward`].
pub fn embed_backward<T: Float>(
    w: &EncoderWeights<T>,
    batch: &TokenBatch,
    cache: &EmbedCache<T>,
    upstream: &Matrix<T>,
) -> Result<EncoderGrads<T>> {
    if upstream.shape() != (batch.batch_size(), w.out_dim()) {
        return Err(Error::input(format!(
            "upstream gradient has shape {:?}, expected [{}, {}]",
            upstream.shape(),
            batch.batch_size(),
            w.out_dim()
        )));
    }
    let mut g = EncoderGrads::zeros_like(w);
    for b in 0..batch.batch_size() {
        let up = upstream.row(b);
        let h = &cache.hidden[b];
        let dh: Vec<T> = if cache.normalize {
            // d(h/|h|) = (I - o oᵀ)/|h|
            let norm = cache.norms[b];
            let o: Vec<T> = h.iter().map(|&x| x / norm).collect();
            let proj = dot(&o, up);
            up.iter()
                .zip(&o)
                .map(|(&u, &oi)| (u - oi * proj) / norm)
                .collect()
        } else {
            up.to_vec()
        };
        let dz: Vec<T> = dh
            .iter()
            .zip(h)
            .map(|(&d, &hi)| d * (T::one() - hi * hi))
            .collect();
        g.proj_weight.add_outer(T::one(), &dz, &cache.pooled[b]);
        for (gb, &d) in g.proj_bias.iter_mut().zip(&dz) {
            *gb = *gb + d;
        }
        let dpooled = w.proj_weight.matvec_t(&dz);
        scatter_mean(&mut g.embedding, batch.real_ids(b), &dpooled, cache.counts[b]);
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct MlmCache<T> {
    context: Vec<Vec<T>>,
    transformed: Vec<Vec<T>>,
    counts: Vec<usize>,
}

fn check_positions(batch: &TokenBatch, positions: &[(usize, usize)]) -> Result<()> {
    if positions.is_empty() {
        return Err(Error::input("no masked positions to predict"));
    }
    for &(b, l) in positions {
        if b >= batch.batch_size() || l >= batch.seq_len() || !batch.is_real(b, l) {
            return Err(Error::input(format!(
                "masked position ({b}, {l}) is not a real token of the batch"
            )));
        }
    }
    Ok(())
}

/// Logits over the vocabulary for each masked position: `(W_m · c_b) · Eᵀ`
/// where `c_b` is the mean-pooled context of the position's row.
pub fn mlm_forward<T: Float>(
    w: &EncoderWeights<T>,
    batch: &TokenBatch,
    positions: &[(usize, usize)],
) -> Result<(Matrix<T>, MlmCache<T>)> {
    batch.validate(w.vocab_size())?;
    check_positions(batch, positions)?;
    let mut cache = MlmCache {
        context: Vec::new(),
        transformed: Vec::new(),
        counts: Vec::new(),
    };
    for b in 0..batch.batch_size() {
        let (c, n) = mean_pool(&w.embedding, batch.real_ids(b));
        cache.transformed.push(w.mlm_weight.matvec(&c));
        cache.context.push(c);
        cache.counts.push(n);
    }
    let mut logits = Matrix::zeros(positions.len(), w.vocab_size());
    for (p, &(b, _)) in positions.iter().enumerate() {
        let u = &cache.transformed[b];
        let row = logits.row_mut(p);
        for (v, x) in row.iter_mut().enumerate() {
            *x = dot(w.embedding.row(v), u);
        }
    }
    Ok((logits, cache))
}

pub fn mlm_backward<T: Float>(
    w: &EncoderWeights<T>,
    batch: &TokenBatch,
    positions: &[(usize, usize)],
    cache: &MlmCache<T>,
    dlogits: &Matrix<T>,
) -> Result<EncoderGrads<T>> {
    if dlogits.shape() != (positions.len(), w.vocab_size()) {
        return Err(Error::input("logit gradient shape does not match the masked positions"));
    }
    let mut g = EncoderGrads::zeros_like(w);
    let d = w.dim();
    let mut du: Vec<Vec<T>> = vec![vec![T::zero(); d]; batch.batch_size()];
    for (p, &(b, _)) in positions.iter().enumerate() {
        let gl = dlogits.row(p);
        // output side: logits = E u
        g.embedding.add_outer(T::one(), gl, &cache.transformed[b]);
        let eg = w.embedding.matvec_t(gl);
        for (x, y) in du[b].iter_mut().zip(eg) {
            *x = *x + y;
        }
    }
    for (b, dub) in du.iter().enumerate() {
        if dub.iter().all(|x| x.is_zero()) {
            continue;
        }
        g.mlm_weight.add_outer(T::one(), dub, &cache.context[b]);
        let dc = w.mlm_weight.matvec_t(dub);
        scatter_mean(&mut g.embedding, batch.real_ids(b), &dc, cache.counts[b]);
    }
    Ok(g)
}

#[derive(Debug, Clone)]
pub struct CrossCache<T> {
    features: Vec<Vec<T>>,
    pools: Vec<[(Vec<T>, usize); 3]>,
    scores: Vec<T>,
}

fn logistic<T: Float>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `logistic(w · [pool(pair), pool(a) ⊙ pool(b)] + bias)` per pair.
pub fn cross_forward<T: Float>(
    w: &EncoderWeights<T>,
    pairs: &PairBatch,
) -> Result<(Vec<T>, CrossCache<T>)> {
    let batch = &pairs.tokens;
    batch.validate(w.vocab_size())?;
    let mut cache = CrossCache {
        features: Vec::new(),
        pools: Vec::new(),
        scores: Vec::new(),
    };
    for b in 0..batch.batch_size() {
        let seg_ids = |s: u8| {
            (0..batch.seq_len())
                .filter(move |&l| batch.is_real(b, l) && pairs.segment(b, l) == s)
                .map(move |l| batch.id(b, l))
        };
        let all = mean_pool(&w.embedding, batch.real_ids(b));
        let pa = mean_pool(&w.embedding, seg_ids(0));
        let pb = mean_pool(&w.embedding, seg_ids(1));
        if pa.1 == 0 || pb.1 == 0 {
            return Err(Error::input(format!("pair row {b} lacks one of its two segments")));
        }
        let mut feat = all.0.clone();
        feat.extend(pa.0.iter().zip(&pb.0).map(|(&x, &y)| x * y));
        let s = logistic(dot(&w.cls_weight, &feat) + w.cls_bias);
        cache.features.push(feat);
        cache.pools.push([all, pa, pb]);
        cache.scores.push(s);
    }
    Ok((cache.scores.clone(), cache))
}

pub fn cross_backward<T: Float>(
    w: &EncoderWeights<T>,
    pairs: &PairBatch,
    cache: &CrossCache<T>,
    dscores: &[T],
) -> Result<EncoderGrads<T>> {
    let batch = &pairs.tokens;
    if dscores.len() != batch.batch_size() {
        return Err(Error::input("score gradient length does not match the batch"));
    }
    let d = w.dim();
    let mut g = EncoderGrads::zeros_like(w);
    for b in 0..batch.batch_size() {
        let s = cache.scores[b];
        let dlogit = dscores[b] * s * (T::one() - s);
        if dlogit.is_zero() {
            continue;
        }
        for (gw, &f) in g.cls_weight.iter_mut().zip(&cache.features[b]) {
            *gw = *gw + dlogit * f;
        }
        g.cls_bias = g.cls_bias + dlogit;
        let [(_, n_all), (pa, n_a), (pb, n_b)] = &cache.pools[b];
        let d_all: Vec<T> = w.cls_weight[..d].iter().map(|&x| x * dlogit).collect();
        let w2 = &w.cls_weight[d..];
        let d_a: Vec<T> = w2.iter().zip(pb).map(|(&x, &y)| x * y * dlogit).collect();
        let d_b: Vec<T> = w2.iter().zip(pa).map(|(&x, &y)| x * y * dlogit).collect();
        scatter_mean(&mut g.embedding, batch.real_ids(b), &d_all, *n_all);
        for (seg, grad, n) in [(0u8, &d_a, *n_a), (1u8, &d_b, *n_b)] {
            let ids = (0..batch.seq_len())
                .filter(|&l| batch.is_real(b, l) && pairs.segment(b, l) == seg)
                .map(|l| batch.id(b, l));
            scatter_mean(&mut g.embedding, ids, grad, n);
        }
    }
    Ok(g)
}
