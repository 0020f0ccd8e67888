//! Independent reference implementations and checks shared by the
//! integration tests and the acceptance report.
#![allow(dead_code, clippy::needless_range_loop)]

use std::collections::{BTreeMap, BTreeSet, HashMap};

use minaret::checkpoint::{ModelCheckpoint, Tensor, TensorRole};
use minaret::encoder::{
    cross_backward, cross_forward, embed_backward, embed_forward, mlm_backward, mlm_forward, EncoderGrads,
    EncoderWeights, PairBatch, SimilarityConfig, TokenBatch,
};
use minaret::linalg::Matrix;
use minaret::retrieval::{EmbeddingIndex, Qrels, Run};
use minaret::training::{contrastive_loss, mlm_loss, pair_classification_loss, Lang, TrainingPair};
use minaret::vocab::{BpeTokenizer, Vocabulary, DEFAULT_SPECIALS, DEFAULT_WORD_PREFIX};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub type Check = Result<String, String>;

// ---------------------------------------------------------------- gradients

pub const FD_STEP: f64 = 1e-5;
pub const FD_REL_TOL: f64 = 1e-4;
/// Denominator floor so gradients that are zero up to rounding compare by
/// absolute difference.
pub const FD_FLOOR: f64 = 1e-6;

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(FD_FLOOR)
}

/// Central difference of `f` in coordinate `i` of `x`.
pub fn central_diff(x: &mut [f64], i: usize, f: &dyn Fn(&[f64]) -> f64) -> f64 {
    let orig = x[i];
    x[i] = orig + FD_STEP;
    let up = f(x);
    x[i] = orig - FD_STEP;
    let down = f(x);
    x[i] = orig;
    (up - down) / (2.0 * FD_STEP)
}

fn compare(what: &str, analytic: &[f64], x: &[f64], f: &dyn Fn(&[f64]) -> f64, worst: &mut f64) -> Result<(), String> {
    let mut x = x.to_vec();
    for i in 0..x.len() {
        let n = central_diff(&mut x, i, f);
        let e = rel_err(analytic[i], n);
        *worst = worst.max(e);
        if e > FD_REL_TOL {
            return Err(format!("{what}[{i}]: analytic {} vs numeric {n} (rel {e:.2e})", analytic[i]));
        }
    }
    Ok(())
}

fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix<f64> {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.gen_range(-1.0..1.0)).collect())
}

/// Brute-force in-batch softmax loss with explicit cosines.
pub fn contrastive_reference(a: &Matrix<f64>, p: &Matrix<f64>, scale: f64) -> f64 {
    let m = a.rows();
    let cos = |x: &[f64], y: &[f64]| {
        let d: f64 = x.iter().zip(y).map(|(u, v)| u * v).sum();
        let nx: f64 = x.iter().map(|u| u * u).sum::<f64>().sqrt();
        let ny: f64 = y.iter().map(|u| u * u).sum::<f64>().sqrt();
        d / (nx * ny)
    };
    let mut total = 0.0;
    for i in 0..m {
        let logits: Vec<f64> = (0..m).map(|j| scale * cos(a.row(i), p.row(j))).collect();
        let z: f64 = logits.iter().map(|l| l.exp()).sum();
        total -= (logits[i].exp() / z).ln();
    }
    total / m as f64
}

pub fn check_contrastive_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut count = 0;
    let mut worst = 0.0f64;
    for &m in &[2usize, 4, 8] {
        for &d in &[4usize, 8] {
            for &scale in &[1.0, 20.0] {
                let cfg = SimilarityConfig { scale, ..Default::default() };
                for _ in 0..9 {
                    let a = random_matrix(m, d, &mut rng);
                    let p = random_matrix(m, d, &mut rng);
                    let out = contrastive_loss(&a, &p, &cfg).map_err(|e| e.to_string())?;
                    let reference = contrastive_reference(&a, &p, scale);
                    if (out.loss - reference).abs() > 1e-9 * reference.abs().max(1.0) {
                        return Err(format!("loss {} vs reference {reference}", out.loss));
                    }
                    let pa = p.clone();
                    let fa = move |x: &[f64]| contrastive_reference(&Matrix::from_vec(m, d, x.to_vec()), &pa, scale);
                    compare("anchor", out.grad_anchor.as_slice(), a.as_slice(), &fa, &mut worst)?;
                    let aa = a.clone();
                    let fp = move |x: &[f64]| contrastive_reference(&aa, &Matrix::from_vec(m, d, x.to_vec()), scale);
                    compare("positive", out.grad_positive.as_slice(), p.as_slice(), &fp, &mut worst)?;
                    count += 1;
                }
            }
        }
    }
    Ok(format!("{count} instances, worst rel err {worst:.1e}"))
}

fn cross_entropy_reference(logits: &Matrix<f64>, targets: &[u32]) -> f64 {
    let mut total = 0.0;
    for (r, &t) in targets.iter().enumerate() {
        let row = logits.row(r);
        let z: f64 = row.iter().map(|l| l.exp()).sum();
        total -= (row[t as usize].exp() / z).ln();
    }
    total / targets.len() as f64
}

pub fn check_mlm_loss_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n = 100;
    for _ in 0..n {
        let p = rng.gen_range(1..5);
        let v = rng.gen_range(2..9);
        let logits = Matrix::from_vec(p, v, (0..p * v).map(|_| rng.gen_range(-3.0..3.0)).collect());
        let targets: Vec<u32> = (0..p).map(|_| rng.gen_range(0..v as u32)).collect();
        let (loss, grad) = mlm_loss(&logits, &targets).map_err(|e| e.to_string())?;
        let reference = cross_entropy_reference(&logits, &targets);
        if (loss - reference).abs() > 1e-12 * reference.max(1.0) {
            return Err(format!("loss {loss} vs reference {reference}"));
        }
        let t = targets.clone();
        let f = move |x: &[f64]| cross_entropy_reference(&Matrix::from_vec(p, v, x.to_vec()), &t);
        compare("logits", grad.as_slice(), logits.as_slice(), &f, &mut worst)?;
    }
    Ok(format!("{n} instances, worst rel err {worst:.1e}"))
}

fn bce_reference(scores: &[f64], labels: &[bool]) -> f64 {
    let total: f64 = scores
        .iter()
        .zip(labels)
        .map(|(&s, &y)| if y { -s.ln() } else { -(1.0 - s).ln() })
        .sum();
    total / scores.len() as f64
}

pub fn check_pair_loss_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n = 100;
    for _ in 0..n {
        let b = rng.gen_range(1..9);
        let scores: Vec<f64> = (0..b).map(|_| rng.gen_range(0.02..0.98)).collect();
        let labels: Vec<bool> = (0..b).map(|_| rng.gen_bool(0.5)).collect();
        let (loss, grad) = pair_classification_loss(&scores, &labels).map_err(|e| e.to_string())?;
        let reference = bce_reference(&scores, &labels);
        if (loss - reference).abs() > 1e-12 * reference.max(1.0) {
            return Err(format!("loss {loss} vs reference {reference}"));
        }
        let l = labels.clone();
        let f = move |x: &[f64]| bce_reference(x, &l);
        compare("scores", &grad, &scores, &f, &mut worst)?;
    }
    Ok(format!("{n} instances, worst rel err {worst:.1e}"))
}

pub fn random_weights(v: usize, d: usize, out: usize, rng: &mut ChaCha8Rng) -> EncoderWeights<f64> {
    EncoderWeights {
        embedding: random_matrix(v, d, rng),
        proj_weight: Matrix::from_vec(out, d, (0..out * d).map(|_| rng.gen_range(-0.8..0.8)).collect()),
        proj_bias: (0..out).map(|_| rng.gen_range(-0.3..0.3)).collect(),
        mlm_weight: Matrix::from_vec(d, d, (0..d * d).map(|_| rng.gen_range(-0.8..0.8)).collect()),
        cls_weight: (0..2 * d).map(|_| rng.gen_range(-0.8..0.8)).collect(),
        cls_bias: rng.gen_range(-0.3..0.3),
    }
}

fn flatten(w: &EncoderWeights<f64>) -> Vec<f64> {
    let mut x = w.embedding.as_slice().to_vec();
    x.extend_from_slice(w.proj_weight.as_slice());
    x.extend_from_slice(&w.proj_bias);
    x.extend_from_slice(w.mlm_weight.as_slice());
    x.extend_from_slice(&w.cls_weight);
    x.push(w.cls_bias);
    x
}

fn flatten_grads(g: &EncoderGrads<f64>) -> Vec<f64> {
    let mut x = g.embedding.as_slice().to_vec();
    x.extend_from_slice(g.proj_weight.as_slice());
    x.extend_from_slice(&g.proj_bias);
    x.extend_from_slice(g.mlm_weight.as_slice());
    x.extend_from_slice(&g.cls_weight);
    x.push(g.cls_bias);
    x
}

fn unflatten(template: &EncoderWeights<f64>, x: &[f64]) -> EncoderWeights<f64> {
    let mut w = template.clone();
    let mut it = x.iter().copied();
    w.embedding.as_mut_slice().iter_mut().for_each(|v| *v = it.next().unwrap());
    w.proj_weight.as_mut_slice().iter_mut().for_each(|v| *v = it.next().unwrap());
    w.proj_bias.iter_mut().for_each(|v| *v = it.next().unwrap());
    w.mlm_weight.as_mut_slice().iter_mut().for_each(|v| *v = it.next().unwrap());
    w.cls_weight.iter_mut().for_each(|v| *v = it.next().unwrap());
    w.cls_bias = it.next().unwrap();
    w
}

fn random_batch(v: usize, rng: &mut ChaCha8Rng) -> TokenBatch {
    let b = rng.gen_range(1..4);
    let seqs: Vec<Vec<u32>> = (0..b)
        .map(|_| (0..rng.gen_range(1..6)).map(|_| rng.gen_range(0..v as u32)).collect())
        .collect();
    TokenBatch::from_sequences(&seqs, 8)
}

/// Gradient of `<upstream, embed(w)>` for random weights, batches and both
/// normalisation settings.
pub fn check_embed_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n = 100;
    for i in 0..n {
        let (v, d, out) = (rng.gen_range(3..8), rng.gen_range(2..6), rng.gen_range(2..6));
        let w = random_weights(v, d, out, &mut rng);
        let batch = random_batch(v, &mut rng);
        let normalize = i % 2 == 0;
        let up = random_matrix(batch.batch_size(), out, &mut rng);
        let (_, cache) = embed_forward(&w, &batch, normalize).map_err(|e| e.to_string())?;
        let g = embed_backward(&w, &batch, &cache, &up).map_err(|e| e.to_string())?;
        let f = |x: &[f64]| {
            let (e, _) = embed_forward(&unflatten(&w, x), &batch, normalize).unwrap();
            e.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        compare("embed", &flatten_grads(&g), &flatten(&w), &f, &mut worst)?;
    }
    Ok(format!("{n} instances, worst rel err {worst:.1e}"))
}

/// Gradient of `<upstream, mlm_logits(w)>`.
pub fn check_mlm_kernel_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n = 100;
    for _ in 0..n {
        let (v, d) = (rng.gen_range(3..8), rng.gen_range(2..5));
        let w = random_weights(v, d, d, &mut rng);
        let batch = random_batch(v, &mut rng);
        let mut positions: Vec<(usize, usize)> = Vec::new();
        for b in 0..batch.batch_size() {
            positions.push((b, rng.gen_range(0..batch.real_count(b))));
        }
        let (logits, cache) = mlm_forward(&w, &batch, &positions).map_err(|e| e.to_string())?;
        let up = random_matrix(logits.rows(), logits.cols(), &mut rng);
        let g = mlm_backward(&w, &batch, &positions, &cache, &up).map_err(|e| e.to_string())?;
        let f = |x: &[f64]| {
            let (l, _) = mlm_forward(&unflatten(&w, x), &batch, &positions).unwrap();
            l.as_slice().iter().zip(up.as_slice()).map(|(a, b)| a * b).sum()
        };
        compare("mlm", &flatten_grads(&g), &flatten(&w), &f, &mut worst)?;
    }
    Ok(format!("{n} instances, worst rel err {worst:.1e}"))
}

/// Gradient of `<upstream, pair_scores(w)>`.
pub fn check_cross_kernel_gradients(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    let n = 100;
    for _ in 0..n {
        let (v, d) = (rng.gen_range(3..8), rng.gen_range(2..5));
        let w = random_weights(v, d, d, &mut rng);
        let b = rng.gen_range(1..4);
        let len = 7;
        let mut ids = Vec::new();
        let mut mask = Vec::new();
        let mut segs = Vec::new();
        for _ in 0..b {
            let a_len = rng.gen_range(1..3);
            let b_len = rng.gen_range(1..3);
            for l in 0..len {
                let real = l < a_len + b_len;
                ids.push(if real { rng.gen_range(0..v as u32) } else { 2 });
                mask.push(u8::from(real));
                segs.push(u8::from(l >= a_len));
            }
        }
        let pairs = PairBatch::new(TokenBatch::new(ids, mask, b, len).map_err(|e| e.to_string())?, segs)
            .map_err(|e| e.to_string())?;
        let (scores, cache) = cross_forward(&w, &pairs).map_err(|e| e.to_string())?;
        let up: Vec<f64> = (0..scores.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let g = cross_backward(&w, &pairs, &cache, &up).map_err(|e| e.to_string())?;
        let f = |x: &[f64]| {
            let (s, _) = cross_forward(&unflatten(&w, x), &pairs).unwrap();
            s.iter().zip(&up).map(|(a, b)| a * b).sum()
        };
        compare("cross", &flatten_grads(&g), &flatten(&w), &f, &mut worst)?;
    }
    Ok(format!("{n} instances, worst rel err {worst:.1e}"))
}

// ---------------------------------------------------------------- BPE

fn oracle_symbols(word: &str) -> Vec<String> {
    word.chars()
        .enumerate()
        .map(|(i, c)| if i == 0 { format!("{DEFAULT_WORD_PREFIX}{c}") } else { c.to_string() })
        .collect()
}

/// Recomputes every pair count from scratch each round and merges the most
/// frequent pair, ties going to the lexicographically smallest pair.
pub fn greedy_bpe_oracle(corpus: &[String], vocab_size: usize) -> Vec<(String, String)> {
    let mut words: BTreeMap<Vec<String>, u64> = BTreeMap::new();
    for line in corpus {
        for w in line.split_whitespace() {
            *words.entry(oracle_symbols(w)).or_default() += 1;
        }
    }
    let mut vocab: BTreeSet<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
    for syms in words.keys() {
        vocab.extend(syms.iter().cloned());
    }
    let mut merges = Vec::new();
    while vocab.len() < vocab_size {
        let mut counts: BTreeMap<(String, String), u64> = BTreeMap::new();
        for (syms, f) in &words {
            for p in syms.windows(2) {
                *counts.entry((p[0].clone(), p[1].clone())).or_default() += f;
            }
        }
        let Some(best) = counts
            .iter()
            .max_by(|a, b| a.1.cmp(b.1).then_with(|| b.0.cmp(a.0)))
            .map(|(p, _)| p.clone())
        else {
            break;
        };
        let merged = format!("{}{}", best.0, best.1);
        vocab.insert(merged.clone());
        let mut next = BTreeMap::new();
        for (syms, f) in words {
            let mut out = Vec::with_capacity(syms.len());
            let mut i = 0;
            while i < syms.len() {
                if i + 1 < syms.len() && syms[i] == best.0 && syms[i + 1] == best.1 {
                    out.push(merged.clone());
                    i += 2;
                } else {
                    out.push(syms[i].clone());
                    i += 1;
                }
            }
            *next.entry(out).or_default() += f;
        }
        words = next;
        merges.push(best);
    }
    merges
}

/// A random corpus of at most `max_bytes` bytes over a small alphabet, with
/// repeated words so merges have something to find.
pub fn random_corpus(rng: &mut ChaCha8Rng, max_bytes: usize) -> Vec<String> {
    let alphabet: Vec<char> = "abcdeلمن".chars().collect();
    let stems: Vec<String> = (0..rng.gen_range(3..12))
        .map(|_| (0..rng.gen_range(1..7)).map(|_| *alphabet.choose(rng).unwrap()).collect())
        .collect();
    let mut lines = Vec::new();
    let mut bytes = 0;
    loop {
        let line: Vec<&str> = (0..rng.gen_range(1..8)).map(|_| stems.choose(rng).unwrap().as_str()).collect();
        let line = line.join(" ");
        if bytes + line.len() + 1 > max_bytes {
            break;
        }
        bytes += line.len() + 1;
        lines.push(line);
    }
    if lines.is_empty() {
        lines.push(stems[0].clone());
    }
    lines
}

// ---------------------------------------------------------------- surgery

/// Tokenizer with exactly `size` tokens, built from random merges over a
/// lowercase alphabet.
pub fn tokenizer_of_size(size: usize, seed: u64) -> BpeTokenizer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tokens: Vec<String> = DEFAULT_SPECIALS.iter().map(|s| s.to_string()).collect();
    for c in 'a'..='z' {
        tokens.push(format!("{DEFAULT_WORD_PREFIX}{c}"));
        tokens.push(c.to_string());
    }
    let mut known: BTreeSet<String> = tokens.iter().cloned().collect();
    let mut merges = Vec::new();
    while tokens.len() < size {
        let l = tokens[rng.gen_range(5..tokens.len())].clone();
        let r = tokens[rng.gen_range(5..tokens.len())].clone();
        if r.starts_with(DEFAULT_WORD_PREFIX) || l.chars().count() + r.chars().count() > 8 {
            continue;
        }
        let m = format!("{l}{r}");
        if known.insert(m.clone()) {
            tokens.push(m);
            merges.push((l, r));
        }
    }
    let vocab = Vocabulary::new(tokens).unwrap();
    BpeTokenizer::from_parts(vocab, merges, DEFAULT_WORD_PREFIX.to_string(), Vec::new()).unwrap()
}

/// Checkpoint with an embedding, two encoder tensors and a vocabulary-sized
/// output head, all filled with random values.
pub fn synthetic_checkpoint(tok: &BpeTokenizer, d: usize, seed: u64) -> ModelCheckpoint {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let v = tok.vocab_size();
    let mut rand = |n: usize| (0..n).map(|_| rng.gen_range(-1.0f32..1.0)).collect::<Vec<f32>>();
    let mut c = ModelCheckpoint::new(d, tok.fingerprint());
    c.insert("embeddings.word", Tensor::new(vec![v, d], rand(v * d), TensorRole::Embedding).unwrap());
    c.insert("encoder.layer0.weight", Tensor::new(vec![d, d], rand(d * d), TensorRole::Encoder).unwrap());
    c.insert("encoder.layer0.bias", Tensor::new(vec![d], rand(d), TensorRole::Encoder).unwrap());
    c.insert("lm_head.bias", Tensor::vocab_head(vec![v], rand(v)).unwrap());
    c
}

// ---------------------------------------------------------------- metrics

pub fn random_run_qrels(rng: &mut ChaCha8Rng) -> (Run, Qrels) {
    let docs: Vec<String> = (0..rng.gen_range(2..40)).map(|i| format!("d{i}")).collect();
    let mut run = Run::new();
    let mut qrels = Qrels::new();
    for q in 0..rng.gen_range(1..12) {
        let qid = format!("q{q}");
        let mut ranked = docs.clone();
        ranked.shuffle(rng);
        ranked.truncate(rng.gen_range(0..=docs.len()));
        let n_rel = rng.gen_range(1..=docs.len().min(6));
        let rel: BTreeSet<String> = docs
            .choose_multiple(rng, n_rel)
            .cloned()
            .collect();
        run.insert(qid.clone(), ranked);
        qrels.insert(qid, rel);
    }
    (run, qrels)
}

/// Reciprocal rank from a full scan for the first relevant position.
pub fn mrr_reference(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    let mut sum = 0.0;
    for (q, ranked) in run {
        let mut rr = 0.0;
        for (i, d) in ranked.iter().enumerate() {
            if i >= k {
                break;
            }
            if qrels[q].contains(d) {
                rr = 1.0 / (i as f64 + 1.0);
                break;
            }
        }
        sum += rr;
    }
    sum / run.len() as f64
}

pub fn recall_reference(run: &Run, qrels: &Qrels, k: usize) -> f64 {
    let mut sum = 0.0;
    for (q, ranked) in run {
        let top: BTreeSet<&String> = ranked.iter().take(k).collect();
        let hit = qrels[q].iter().filter(|d| top.contains(d)).count();
        sum += hit as f64 / qrels[q].len() as f64;
    }
    sum / run.len() as f64
}

/// Scores every row, sorts the whole corpus by (score desc, position asc)
/// and keeps the first `k`.
pub fn search_reference(index: &EmbeddingIndex, query: &[f32], k: usize) -> Vec<(usize, f32)> {
    let mut all: Vec<(usize, f32)> = (0..index.len())
        .map(|i| {
            let mut s = 0.0f32;
            for (a, b) in index.vectors().row(i).iter().zip(query) {
                s += a * b;
            }
            (i, s)
        })
        .collect();
    all.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Vectors with coarse components so that exact ties are common.
pub fn tie_heavy_vectors(n: usize, d: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f32>> {
    let mut rows: Vec<Vec<f32>> = Vec::with_capacity(n);
    while rows.len() < n {
        if !rows.is_empty() && rng.gen_bool(0.3) {
            let dup = rows.choose(rng).unwrap().clone();
            rows.push(dup);
            continue;
        }
        let row: Vec<f32> = (0..d).map(|_| rng.gen_range(-2i32..=2) as f32 * 0.5).collect();
        if row.iter().any(|&x| x != 0.0) {
            rows.push(row);
        }
    }
    rows
}

// ---------------------------------------------------------------- data

pub fn numbered_pairs(n: usize, prefix: &str) -> Vec<TrainingPair> {
    (0..n)
        .map(|i| TrainingPair::new(format!("{prefix} anchor {i}"), format!("{prefix} positive {i}"), Lang::En, prefix))
        .collect()
}

pub fn count_by<T: std::hash::Hash + Eq, I: IntoIterator<Item = T>>(it: I) -> HashMap<T, usize> {
    let mut m = HashMap::new();
    for x in it {
        *m.entry(x).or_default() += 1;
    }
    m
}

/// Reduction keeps donor rows bit-for-bit; extension appends subtoken means
/// within 1e-7 of an f64 reference and leaves every other value untouched.
pub fn check_surgery(seed: u64) -> Check {
    use minaret::surgery::{extend_model, reduce_model};
    use minaret::vocab::{intersect_tokenizers, is_special};

    let started = std::time::Instant::now();
    let d = 16;
    let donor = tokenizer_of_size(1000, seed);
    let other = tokenizer_of_size(700, seed + 1);
    let src = synthetic_checkpoint(&donor, d, seed);
    let mapping = intersect_tokenizers(&donor, &other).map_err(|e| e.to_string())?;
    let reduced = reduce_model(&src, &mapping).map_err(|e| e.to_string())?;

    let emb = src.require("embeddings.word").unwrap();
    let red = reduced.require("embeddings.word").map_err(|e| e.to_string())?;
    if red.rows() != mapping.new_size() {
        return Err(format!("{} reduced rows for {} shared tokens", red.rows(), mapping.new_size()));
    }
    for p in &mapping.pairs {
        if red.row(p.new_id as usize) != emb.row(p.old_id as usize) {
            return Err(format!("reduced row for {:?} differs from donor row", p.token));
        }
        let head = reduced.require("lm_head.bias").unwrap();
        if head.data[p.new_id as usize] != src.require("lm_head.bias").unwrap().data[p.old_id as usize] {
            return Err(format!("head entry for {:?} was not carried over", p.token));
        }
    }
    for name in ["encoder.layer0.weight", "encoder.layer0.bias"] {
        if reduced.require(name).unwrap() != src.require(name).unwrap() {
            return Err(format!("{name} changed during reduction"));
        }
    }
    let restricted = donor.restrict(&mapping).map_err(|e| e.to_string())?;
    if reduced.vocab_hash() != Some(restricted.fingerprint().as_str()) {
        return Err("reduced checkpoint does not carry the restricted vocabulary hash".into());
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut new_tokens: Vec<String> = Vec::new();
    while new_tokens.len() < 200 {
        let len = rng.gen_range(4..12);
        let body: String = (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect();
        let t = format!("{DEFAULT_WORD_PREFIX}{body}");
        if !donor.vocab().contains(&t) && !new_tokens.contains(&t) {
            new_tokens.push(t);
        }
    }
    let ext = extend_model(&src, &new_tokens, &donor, seed).map_err(|e| e.to_string())?;
    let grown = ext.checkpoint.require("embeddings.word").unwrap();
    let v = donor.vocab_size();
    if grown.rows() != v + new_tokens.len() {
        return Err(format!("extended embedding has {} rows", grown.rows()));
    }
    if grown.data[..v * d] != emb.data[..] {
        return Err("existing rows changed during extension".into());
    }
    let mut worst = 0.0f64;
    for (k, t) in new_tokens.iter().enumerate() {
        let ids: Vec<usize> = donor
            .segment_piece(t)
            .into_iter()
            .filter(|&i| !is_special(i))
            .map(|i| i as usize)
            .collect();
        if ids.is_empty() {
            return Err(format!("{t:?} has no subtokens"));
        }
        for c in 0..d {
            let mean = ids.iter().map(|&i| emb.row(i)[c] as f64).sum::<f64>() / ids.len() as f64;
            let err = (grown.row(v + k)[c] as f64 - mean).abs();
            worst = worst.max(err);
            if err > 1e-7 {
                return Err(format!("{t:?} column {c}: {} vs mean {mean}", grown.row(v + k)[c]));
            }
        }
    }
    if ext.tokenizer.vocab_size() != v + new_tokens.len() {
        return Err("extended tokenizer size mismatch".into());
    }
    let elapsed = started.elapsed();
    if elapsed.as_secs_f64() > 1.0 {
        return Err(format!("surgery took {elapsed:?}"));
    }
    Ok(format!(
        "{} shared rows exact, {} new rows within {worst:.1e}, {:.0} ms",
        mapping.new_size(),
        new_tokens.len(),
        elapsed.as_secs_f64() * 1e3
    ))
}

pub fn check_metrics(seed: u64, instances: usize) -> Check {
    use minaret::retrieval::{mrr_at_k, recall_at_k};
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst = 0.0f64;
    for n in 0..instances {
        let (run, qrels) = random_run_qrels(&mut rng);
        for k in [1, 3, 10, 100] {
            let m = mrr_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
            let r = recall_at_k(&run, &qrels, k).map_err(|e| e.to_string())?;
            let (em, er) = (mrr_reference(&run, &qrels, k), recall_reference(&run, &qrels, k));
            let e = (m - em).abs().max((r - er).abs());
            worst = worst.max(e);
            if e > 1e-12 {
                return Err(format!("instance {n} k={k}: MRR {m} vs {em}, recall {r} vs {er}"));
            }
        }
    }
    Ok(format!("{instances} instances x 4 cutoffs, max abs diff {worst:.1e}"))
}

pub fn check_search(seed: u64, corpora: usize) -> Check {
    use minaret::retrieval::Corpus;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queries = 0;
    for c in 0..corpora {
        let n = 50;
        let d = rng.gen_range(2..8);
        let rows = tie_heavy_vectors(n, d, &mut rng);
        let corpus = Corpus::new((0..n).map(|i| (format!("doc{i}"), format!("text {i}"))).collect())
            .map_err(|e| e.to_string())?;
        let flat: Vec<f32> = rows.concat();
        let index = EmbeddingIndex::from_vectors(corpus, Matrix::from_vec(n, d, flat), "fp")
            .map_err(|e| e.to_string())?;
        for _ in 0..5 {
            let q = if rng.gen_bool(0.5) {
                let r = index.vectors().row(rng.gen_range(0..n)).to_vec();
                r
            } else {
                (0..d).map(|_| rng.gen_range(-1.0f32..1.0)).collect()
            };
            let k = rng.gen_range(1..=n + 3);
            let hits = index.search(&q, k).map_err(|e| e.to_string())?;
            let expected = search_reference(&index, &q, k);
            let got: Vec<(usize, f32)> = hits.iter().map(|h| (h.position, h.score)).collect();
            if got != expected {
                return Err(format!("corpus {c}: ranking differs from full sort\n got {got:?}\n want {expected:?}"));
            }
            if hits.iter().any(|h| h.doc_id != format!("doc{}", h.position)) {
                return Err(format!("corpus {c}: doc id does not match position"));
            }
            queries += 1;
        }
    }
    Ok(format!("{corpora} corpora, {queries} queries identical to full sort"))
}

/// One epoch over 3252 + 2133 pairs with batch size 32.
pub fn check_sampler_composition(seed: u64) -> Check {
    use minaret::training::sample_batches;
    let (na, nb, m) = (3252, 2133, 32);
    let sets = [numbered_pairs(na, "qa"), numbered_pairs(nb, "rel")];
    let expected = na as f64 / (na + nb) as f64;
    let batches = sample_batches(&sets, m, seed).map_err(|e| e.to_string())?;
    let mut seen = [vec![false; na], vec![false; nb]];
    for b in &batches {
        for &(d, i) in &b.origin {
            if std::mem::replace(&mut seen[d][i], true) {
                return Err(format!("pair ({d}, {i}) emitted twice"));
            }
        }
        let mut texts = BTreeSet::new();
        for p in &b.pairs {
            if !texts.insert(p.anchor.as_str()) || !texts.insert(p.positive.as_str()) {
                return Err("a text repeats inside a batch".into());
            }
        }
    }
    if seen.iter().flatten().any(|&s| !s) {
        return Err("a pair was never emitted".into());
    }
    let shares: Vec<f64> = batches
        .iter()
        .map(|b| b.origin.iter().filter(|o| o.0 == 0).count() as f64 / b.len() as f64)
        .collect();
    let mean = shares.iter().sum::<f64>() / shares.len() as f64;
    if (mean - expected).abs() > 0.03 {
        return Err(format!("mean per-batch share {mean:.4} vs expected {expected:.4}"));
    }
    Ok(format!(
        "{} batches, every pair once, mean share {:.1}%/{:.1}% (target {:.1}%/{:.1}% +-3pp)",
        batches.len(),
        100.0 * mean,
        100.0 * (1.0 - mean),
        100.0 * expected,
        100.0 * (1.0 - expected)
    ))
}

/// Deterministic scores in [0, 1] derived from the pair texts.
pub struct HashScorer;

impl minaret::encoder::PairScorer for HashScorer {
    fn score_pairs(&self, pairs: &[(&str, &str)]) -> minaret::Result<Vec<f32>> {
        use sha2::{Digest, Sha256};
        Ok(pairs
            .iter()
            .map(|(a, b)| {
                let h = Sha256::new().chain_update(a).chain_update([0]).chain_update(b).finalize();
                u16::from_le_bytes([h[0], h[1]]) as f32 / u16::MAX as f32
            })
            .collect())
    }
}

pub fn check_augmentation(seed: u64) -> Check {
    use minaret::augment::{build_candidates, expand_qa, filter_scored, merge_datasets, score_and_filter, QaRecord, RelationRecord};
    use minaret::retrieval::Corpus;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let passages = Corpus::new((0..6000).map(|i| (format!("p{i}"), format!("passage text {i}"))).collect())
        .map_err(|e| e.to_string())?;

    // 3382 questions, 1166 held out; 1036 of the rest cite two passages.
    let mut records = Vec::new();
    let mut reserved = BTreeSet::new();
    for i in 0..3382 {
        let two = (1166..1166 + 1036).contains(&i);
        let n = if i < 1166 { rng.gen_range(1..4) } else if two { 2 } else { 1 };
        let ids = (0..n).map(|j| format!("p{}", (i * 3 + j) % 6000)).collect();
        records.push(QaRecord { qid: format!("q{i}"), question: format!("question {i}"), passage_ids: ids });
        if i < 1166 {
            reserved.insert(format!("q{i}"));
        }
    }
    records.shuffle(&mut rng);
    let qa = expand_qa(&records, &passages, &reserved, Lang::Ar, "qa").map_err(|e| e.to_string())?;
    if qa.len() != 3252 {
        return Err(format!("expanded {} question pairs, expected 3252", qa.len()));
    }
    if qa.iter().any(|p| reserved.contains(&p.anchor.replace("question ", "q"))) {
        return Err("a held-out question leaked into training pairs".into());
    }

    // 5000 relations, 10% repeats (half of them reversed)
    let mut relations: Vec<RelationRecord> = Vec::new();
    let mut distinct: BTreeSet<(usize, usize)> = BTreeSet::new();
    while relations.len() < 5000 {
        if !relations.is_empty() && rng.gen_bool(0.1) {
            let r = relations.choose(&mut rng).unwrap().clone();
            let r = if rng.gen_bool(0.5) {
                RelationRecord { left_id: r.right_id, right_id: r.left_id, source: r.source }
            } else {
                r
            };
            relations.push(r);
            continue;
        }
        let (a, b) = (rng.gen_range(0..6000), rng.gen_range(0..6000));
        if a == b {
            continue;
        }
        relations.push(RelationRecord { left_id: format!("p{a}"), right_id: format!("p{b}"), source: "rel".into() });
    }
    let mut oracle = Vec::new();
    for r in &relations {
        let a: usize = r.left_id[1..].parse().unwrap();
        let b: usize = r.right_id[1..].parse().unwrap();
        if distinct.insert((a.min(b), a.max(b))) {
            oracle.push((passages.text(&r.left_id).unwrap().to_string(), passages.text(&r.right_id).unwrap().to_string()));
        }
    }
    let candidates = build_candidates(&relations, &passages, Lang::Ar).map_err(|e| e.to_string())?;
    let got: Vec<(String, String)> = candidates.iter().map(|p| (p.anchor.clone(), p.positive.clone())).collect();
    if got != oracle {
        return Err(format!("{} candidates vs {} distinct relations", got.len(), oracle.len()));
    }

    let (_, report) = score_and_filter(&candidates, &HashScorer, 0.0).map_err(|e| e.to_string())?;
    let mut previous: Option<Vec<TrainingPair>> = None;
    for t in 0..=10 {
        let threshold = t as f32 / 10.0;
        let (kept, _) = score_and_filter(&candidates, &HashScorer, threshold).map_err(|e| e.to_string())?;
        if kept != filter_scored(&report, threshold) {
            return Err(format!("threshold {threshold}: refiltering the report disagrees"));
        }
        let pool: BTreeSet<(&str, &str)> = candidates.iter().map(|p| (p.anchor.as_str(), p.positive.as_str())).collect();
        if kept.iter().any(|p| !pool.contains(&(p.anchor.as_str(), p.positive.as_str()))) {
            return Err(format!("threshold {threshold}: kept a pair that is not a candidate"));
        }
        let (again, _) = score_and_filter(&kept, &HashScorer, threshold).map_err(|e| e.to_string())?;
        if again != kept {
            return Err(format!("threshold {threshold}: filtering is not idempotent"));
        }
        if let Some(prev) = &previous {
            let prev: BTreeSet<(&str, &str)> = prev.iter().map(|p| (p.anchor.as_str(), p.positive.as_str())).collect();
            if kept.iter().any(|p| !prev.contains(&(p.anchor.as_str(), p.positive.as_str()))) {
                return Err(format!("threshold {threshold} keeps a pair a lower threshold dropped"));
            }
        }
        previous = Some(kept);
    }

    let rel_pairs = numbered_pairs(2133, "rel");
    let merged = merge_datasets(&[qa.clone(), rel_pairs.clone()]);
    if merged.pairs.len() != 5385 || !merged.duplicates.is_empty() {
        return Err(format!("merged {} pairs with {} duplicates", merged.pairs.len(), merged.duplicates.len()));
    }
    let again = merge_datasets(&[merged.pairs.clone(), qa]);
    if again.pairs != merged.pairs || again.duplicates.len() != 3252 {
        return Err("merging is not idempotent".into());
    }
    Ok(format!(
        "3252 question pairs, {} distinct relations, 11 thresholds nested, 5385 merged",
        oracle.len()
    ))
}

pub fn check_loss_anchors() -> Check {
    let cfg = SimilarityConfig { scale: 20.0, ..Default::default() };
    let one = contrastive_loss(&Matrix::from_rows(&[vec![0.2, -0.7, 0.1]]), &Matrix::from_rows(&[vec![0.9, 0.3, -0.5]]), &cfg)
        .map_err(|e| e.to_string())?;
    if one.loss != 0.0 {
        return Err(format!("single pair loss {}", one.loss));
    }
    let row = vec![0.3, -0.4, 0.5, 0.1];
    let two = Matrix::from_rows(&[row.clone(), row]);
    let tied = contrastive_loss(&two, &two.clone(), &cfg).map_err(|e| e.to_string())?;
    if (tied.loss - std::f64::consts::LN_2).abs() > 1e-9 {
        return Err(format!("identical pair loss {} vs ln 2", tied.loss));
    }
    for v in [2usize, 7, 50, 1000] {
        let (loss, _) = mlm_loss(&Matrix::<f64>::zeros(3, v), &[0, (v / 2) as u32, (v - 1) as u32])
            .map_err(|e| e.to_string())?;
        if (loss - (v as f64).ln()).abs() > 1e-9 {
            return Err(format!("uniform MLM loss {loss} vs ln {v}"));
        }
    }
    Ok(format!("M=1 -> 0, M=2 tied -> {:.12}, uniform MLM -> ln V", tied.loss))
}

pub fn check_convergence(seed: u64) -> Check {
    use minaret::encoder::{BiEncoder, EncoderConfig};
    use minaret::retrieval::evaluate;
    use minaret::synthetic::{self_retrieval_set, topic_pairs, word_level_tokenizer};
    use minaret::training::{train_retriever, HyperParams};

    let started = std::time::Instant::now();
    let pairs = topic_pairs(8, 8, seed);
    let texts: Vec<&str> = pairs.iter().flat_map(|p| [p.anchor.as_str(), p.positive.as_str()]).collect();
    let tokenizer = word_level_tokenizer(&texts).map_err(|e| e.to_string())?;
    let (corpus, evalset) = self_retrieval_set(&pairs).map_err(|e| e.to_string())?;
    let encoder = BiEncoder::init(tokenizer, 32, EncoderConfig::default(), seed).map_err(|e| e.to_string())?;
    let epochs = 60;
    let hp = HyperParams {
        epochs,
        batch_size: 16,
        learning_rate: 0.05,
        seed,
        ..HyperParams::retrieval()
    };
    let (encoder, _) = train_retriever(encoder, &[pairs], &hp).map_err(|e| e.to_string())?;
    let report = evaluate(&encoder, &corpus, &evalset, &[10]).map_err(|e| e.to_string())?;
    let (mrr, recall) = (report.metric("MRR@10").unwrap(), report.metric("Recall@10").unwrap());
    let elapsed = started.elapsed();
    let summary = format!("MRR@10 {mrr:.3}, Recall@10 {recall:.3} after {epochs} epochs in {elapsed:.2?}");
    if mrr == 1.0 && recall == 1.0 && elapsed.as_secs_f64() < 60.0 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

pub struct TrendOutcome {
    pub multistage: f64,
    pub general_only: f64,
    pub domain_only: f64,
}

pub fn multistage_trial(seed: u64) -> Result<TrendOutcome, String> {
    use minaret::encoder::{BiEncoder, EncoderConfig};
    use minaret::retrieval::evaluate;
    use minaret::synthetic::{DomainShift, DomainShiftConfig};
    use minaret::training::{run_multistage, HyperParams, Stage};

    let ds = DomainShift::generate(&DomainShiftConfig::default(), seed).map_err(|e| e.to_string())?;
    let init = BiEncoder::init(ds.tokenizer.clone(), 32, EncoderConfig::default(), seed).map_err(|e| e.to_string())?;
    let general = Stage {
        name: "general".into(),
        datasets: vec![ds.general.clone()],
        hyperparams: HyperParams { epochs: 8, batch_size: 32, learning_rate: 0.05, seed, ..HyperParams::retrieval() },
    };
    let domain = Stage {
        name: "domain".into(),
        datasets: vec![ds.domain.clone()],
        hyperparams: HyperParams { epochs: 20, batch_size: 16, learning_rate: 0.02, seed, ..HyperParams::retrieval() },
    };
    let score = |plan: &[Stage]| -> Result<f64, String> {
        let out = run_multistage(init.clone(), plan).map_err(|e| e.to_string())?;
        let r = evaluate(out.final_encoder(), &ds.corpus, &ds.evalset, &[10]).map_err(|e| e.to_string())?;
        Ok(r.metric("MRR@10").unwrap())
    };
    Ok(TrendOutcome {
        general_only: score(std::slice::from_ref(&general))?,
        domain_only: score(std::slice::from_ref(&domain))?,
        multistage: score(&[general, domain])?,
    })
}

pub fn check_multistage_trend(seeds: std::ops::Range<u64>) -> Check {
    let mut wins = 0;
    let mut lines = Vec::new();
    let n = seeds.end - seeds.start;
    for seed in seeds {
        let t = multistage_trial(seed)?;
        if t.multistage >= t.general_only && t.multistage >= t.domain_only {
            wins += 1;
        }
        lines.push(format!("{:.2}/{:.2}/{:.2}", t.multistage, t.general_only, t.domain_only));
    }
    let summary = format!("{wins}/{n} seeds (multi/general/domain MRR@10: {})", lines.join(" "));
    if wins * 10 >= n * 8 {
        Ok(summary)
    } else {
        Err(summary)
    }
}

/// Index vectors, stage checkpoints, stage records and report of one run.
type RunBytes = (Vec<u8>, Vec<Vec<u8>>, String, String);

/// Trains, indexes and evaluates twice from the same seed and compares bytes.
pub fn check_determinism(seed: u64) -> Check {
    use minaret::encoder::{BiEncoder, EncoderConfig};
    use minaret::retrieval::{build_index, evaluate};
    use minaret::synthetic::{DomainShift, DomainShiftConfig};
    use minaret::training::{run_multistage, HyperParams, Stage};

    let once = || -> Result<RunBytes, String> {
        let ds = DomainShift::generate(&DomainShiftConfig::default(), seed).map_err(|e| e.to_string())?;
        let init = BiEncoder::init(ds.tokenizer.clone(), 16, EncoderConfig::default(), seed).map_err(|e| e.to_string())?;
        let hp = HyperParams { epochs: 2, batch_size: 16, learning_rate: 0.05, seed, ..HyperParams::retrieval() };
        let stages = [
            Stage { name: "general".into(), datasets: vec![ds.general.clone()], hyperparams: hp.clone() },
            Stage { name: "domain".into(), datasets: vec![ds.domain.clone()], hyperparams: hp },
        ];
        let out = run_multistage(init, &stages).map_err(|e| e.to_string())?;
        let ckpts = out.stages.iter().map(|(_, e)| e.to_checkpoint().to_bytes()).collect();
        let records = serde_json::to_string(&out.records()).map_err(|e| e.to_string())?;
        let enc = out.final_encoder();
        let index = build_index(enc, &ds.corpus).map_err(|e| e.to_string())?;
        let mut index_bytes = Vec::new();
        for r in index.vectors().iter_rows() {
            r.iter().for_each(|x| index_bytes.extend_from_slice(&x.to_le_bytes()));
        }
        let report = evaluate(enc, &ds.corpus, &ds.evalset, &[10, 100]).map_err(|e| e.to_string())?;
        Ok((index_bytes, ckpts, records, format!("{}{}", report.to_text(), report.to_trec("det"))))
    };
    let a = once()?;
    let b = once()?;
    if a.1 != b.1 {
        return Err("stage checkpoints differ between runs".into());
    }
    if a.2 != b.2 {
        return Err("stage records differ between runs".into());
    }
    if a.0 != b.0 {
        return Err("index vectors differ between runs".into());
    }
    if a.3 != b.3 {
        return Err("metric reports differ between runs".into());
    }
    Ok(format!("{} checkpoints, stage records, index and report byte-identical", a.1.len()))
}
