//! Training loops: MLM continued pre-training, bi-encoder retrieval training
//! and pair-classifier (cross-encoder) training. All are single-threaded and
//! fully determined by `HyperParams::seed`.

use log::{debug, info};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::TrainingPair;
use super::loss::{contrastive_loss, mlm_loss, pair_classification_loss};
use super::optim::{adam_step_encoder, HyperParams, OptimizerState, ParamGroup};
use super::sampler::sample_batches;
use crate::encoder::{
    cross_backward, cross_forward, embed_backward, embed_forward, mlm_backward, mlm_forward, BiEncoder,
    PairBatch, TokenBatch,
};
use crate::error::{Error, Result};
use crate::vocab::{is_special, MASK_ID, NUM_SPECIALS};

/// Losses recorded during a training run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub step_losses: Vec<f64>,
    pub epoch_losses: Vec<f64>,
}

impl TrainReport {
    fn close_epoch(&mut self, from: usize) {
        let steps = &self.step_losses[from..];
        let mean = if steps.is_empty() {
            0.0
        } else {
            steps.iter().sum::<f64>() / steps.len() as f64
        };
        self.epoch_losses.push(mean);
    }
}

/// Masking scheme for MLM: each non-special token is selected with
/// `mask_prob`; a selected token becomes `<mask>` with `replace_mask`, a
/// random token with `replace_random`, and stays unchanged otherwise.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlmConfig {
    pub mask_prob: f64,
    pub replace_mask: f64,
    pub replace_random: f64,
}

impl Default for MlmConfig {
    fn default() -> Self {
        Self {
            mask_prob: 0.15,
            replace_mask: 0.8,
            replace_random: 0.1,
        }
    }
}

/// Applies the masking scheme to a batch in place. Returns the selected
/// `(row, position)` pairs and the original ids at those positions. Every row
/// with at least one maskable token gets at least one selection.
pub fn mask_tokens(
    batch: &mut TokenBatch,
    vocab_size: usize,
    cfg: &MlmConfig,
    rng: &mut ChaCha8Rng,
) -> (Vec<(usize, usize)>, Vec<u32>) {
    let mut positions = Vec::new();
    let mut targets = Vec::new();
    for b in 0..batch.batch_size() {
        let candidates: Vec<usize> = (0..batch.seq_len())
            .filter(|&l| batch.is_real(b, l) && !is_special(batch.id(b, l)))
            .collect();
        if candidates.is_empty() {
            continue;
        }
        let mut chosen: Vec<usize> = candidates
            .iter()
            .copied()
            .filter(|_| rng.gen::<f64>() < cfg.mask_prob)
            .collect();
        if chosen.is_empty() {
            chosen.push(*candidates.choose(rng).expect("non-empty"));
        }
        for l in chosen {
            let original = batch.id(b, l);
            let r: f64 = rng.gen();
            if r < cfg.replace_mask {
                batch.set_id(b, l, MASK_ID);
            } else if r < cfg.replace_mask + cfg.replace_random && vocab_size > NUM_SPECIALS {
                batch.set_id(b, l, rng.gen_range(NUM_SPECIALS as u32..vocab_size as u32));
            }
            positions.push((b, l));
            targets.push(original);
        }
    }
    (positions, targets)
}

/// Continued MLM pre-training of the embedding and MLM transform.
pub fn pretrain<S: AsRef<str>>(
    encoder: BiEncoder,
    corpus: &[S],
    hp: &HyperParams,
    mlm: &MlmConfig,
) -> Result<(BiEncoder, TrainReport)> {
    hp.validate()?;
    let mut encoder = encoder;
    let max_len = encoder.config().max_len;
    let seqs: Vec<Vec<u32>> = corpus
        .iter()
        .map(|line| encoder.tokenizer().encode(line.as_ref()))
        .filter(|ids| ids.iter().any(|&id| !is_special(id)))
        .collect();
    if seqs.is_empty() {
        return Err(Error::input("pre-training corpus has no tokens"));
    }
    let vocab = encoder.tokenizer().vocab_size();
    let steps_per_epoch = seqs.len().div_ceil(hp.batch_size);
    let total = (steps_per_epoch * hp.epochs) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut state = OptimizerState::new();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..seqs.len()).collect();

    for epoch in 0..hp.epochs {
        let start = report.step_losses.len();
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let rows: Vec<Vec<u32>> = chunk.iter().map(|&i| seqs[i].clone()).collect();
            let mut batch = TokenBatch::from_sequences(&rows, max_len);
            let (positions, targets) = mask_tokens(&mut batch, vocab, mlm, &mut rng);
            let w = encoder.weights();
            let (logits, cache) = mlm_forward(w, &batch, &positions)?;
            let (loss, dlogits) = mlm_loss(&logits, &targets)?;
            let grads = mlm_backward(w, &batch, &positions, &cache, &dlogits)?;
            adam_step_encoder(
                encoder.weights_mut(),
                &grads,
                &[ParamGroup::Embedding, ParamGroup::MlmTransform],
                &mut state,
                hp,
                total,
            )?;
            report.step_losses.push(f64::from(loss));
        }
        report.close_epoch(start);
        debug!("pretrain epoch {epoch}: mean loss {:.5}", report.epoch_losses[epoch]);
    }
    info!(
        "pre-training finished: {} steps, final epoch loss {:.5}",
        report.step_losses.len(),
        report.epoch_losses.last().copied().unwrap_or(f64::NAN)
    );
    Ok((encoder, report))
}

/// Loss and parameter gradients of one contrastive batch.
fn contrastive_step(
    encoder: &BiEncoder,
    anchors: &[&str],
    positives: &[&str],
    hp: &HyperParams,
) -> Result<(f64, crate::encoder::EncoderGrads<f32>)> {
    let w = encoder.weights();
    let normalize = encoder.config().normalize_output;
    let ab = encoder.token_batch(anchors);
    let pb = encoder.token_batch(positives);
    let (ea, ca) = embed_forward(w, &ab, normalize)?;
    let (ep, cp) = embed_forward(w, &pb, normalize)?;
    let widen = |m: &crate::linalg::Matrix<f32>| m.map(f64::from);
    let out = contrastive_loss(&widen(&ea), &widen(&ep), &hp.similarity())?;
    let narrow = |m: &crate::linalg::Matrix<f64>| m.map(|x| x as f32);
    let mut grads = embed_backward(w, &ab, &ca, &narrow(&out.grad_anchor))?;
    grads.add_assign(&embed_backward(w, &pb, &cp, &narrow(&out.grad_positive))?);
    Ok((out.loss, grads))
}

/// Trains the bi-encoder with in-batch negatives over batches drawn by
/// [`sample_batches`]. Epoch `e` samples with seed `hp.seed + e`.
pub fn train_retriever(
    encoder: BiEncoder,
    datasets: &[Vec<TrainingPair>],
    hp: &HyperParams,
) -> Result<(BiEncoder, TrainReport)> {
    hp.validate()?;
    for d in datasets {
        for p in d {
            p.validate()?;
        }
    }
    let mut encoder = encoder;
    let epochs: Vec<_> = (0..hp.epochs)
        .map(|e| sample_batches(datasets, hp.batch_size, hp.seed.wrapping_add(e as u64)))
        .collect::<Result<_>>()?;
    let total: u64 = epochs.iter().map(|b| b.len() as u64).sum();
    let mut state = OptimizerState::new();
    let mut report = TrainReport::default();
    for (epoch, batches) in epochs.iter().enumerate() {
        let start = report.step_losses.len();
        for batch in batches {
            let (loss, grads) = contrastive_step(&encoder, &batch.anchors(), &batch.positives(), hp)?;
            adam_step_encoder(
                encoder.weights_mut(),
                &grads,
                &[ParamGroup::Embedding, ParamGroup::Projection],
                &mut state,
                hp,
                total,
            )?;
            report.step_losses.push(loss);
        }
        report.close_epoch(start);
        debug!("retriever epoch {epoch}: mean loss {:.5}", report.epoch_losses[epoch]);
    }
    Ok((encoder, report))
}

/// A text pair with a relevance label for cross-encoder training.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledPair {
    pub first: String,
    pub second: String,
    pub relevant: bool,
}

/// Positives from `pairs`, each followed by `negatives` pairings of its
/// anchor with the positive of another, randomly chosen pair.
pub fn with_random_negatives(pairs: &[TrainingPair], negatives: usize, seed: u64) -> Vec<LabeledPair> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(pairs.len() * (1 + negatives));
    for (i, p) in pairs.iter().enumerate() {
        out.push(LabeledPair {
            first: p.anchor.clone(),
            second: p.positive.clone(),
            relevant: true,
        });
        if pairs.len() < 2 {
            continue;
        }
        for _ in 0..negatives {
            let mut j = rng.gen_range(0..pairs.len() - 1);
            if j >= i {
                j += 1;
            }
            if pairs[j].positive == p.positive {
                continue;
            }
            out.push(LabeledPair {
                first: p.anchor.clone(),
                second: pairs[j].positive.clone(),
                relevant: false,
            });
        }
    }
    out
}

/// Trains the pair classifier (and embeddings) with binary cross-entropy.
pub fn train_cross_encoder(
    encoder: BiEncoder,
    data: &[LabeledPair],
    hp: &HyperParams,
) -> Result<(BiEncoder, TrainReport)> {
    hp.validate()?;
    if data.is_empty() {
        return Err(Error::input("no labelled pairs for cross-encoder training"));
    }
    let mut encoder = encoder;
    let steps_per_epoch = data.len().div_ceil(hp.batch_size);
    let total = (steps_per_epoch * hp.epochs) as u64;
    let mut rng = ChaCha8Rng::seed_from_u64(hp.seed);
    let mut state = OptimizerState::new();
    let mut report = TrainReport::default();
    let mut order: Vec<usize> = (0..data.len()).collect();
    for _ in 0..hp.epochs {
        let start = report.step_losses.len();
        order.shuffle(&mut rng);
        for chunk in order.chunks(hp.batch_size) {
            let texts: Vec<(&str, &str)> = chunk
                .iter()
                .map(|&i| (data[i].first.as_str(), data[i].second.as_str()))
                .collect();
            let labels: Vec<bool> = chunk.iter().map(|&i| data[i].relevant).collect();
            let pairs: PairBatch = encoder.pair_batch(&texts);
            let w = encoder.weights();
            let (scores, cache) = cross_forward(w, &pairs)?;
            let (loss, dscores) = pair_classification_loss(&scores, &labels)?;
            let grads = cross_backward(w, &pairs, &cache, &dscores)?;
            adam_step_encoder(
                encoder.weights_mut(),
                &grads,
                &[ParamGroup::Embedding, ParamGroup::Classifier],
                &mut state,
                hp,
                total,
            )?;
            report.step_losses.push(f64::from(loss));
        }
        report.close_epoch(start);
    }
    Ok((encoder, report))
}
