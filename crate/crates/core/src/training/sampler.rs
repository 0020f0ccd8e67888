use std::collections::{HashSet, VecDeque};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::data::TrainingPair;
use crate::error::{Error, Result};

/// Pairs drawn for one optimisation step, with the dataset each came from.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch {
    pub pairs: Vec<TrainingPair>,
    /// `(dataset index, index within dataset)` per pair.
    pub origin: Vec<(usize, usize)>,
}

impl TrainingBatch {
    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn anchors(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.anchor.as_str()).collect()
    }

    pub fn positives(&self) -> Vec<&str> {
        self.pairs.iter().map(|p| p.positive.as_str()).collect()
    }
}

/// One epoch of batches over several datasets.
///
/// Every pair is emitted exactly once. Each slot of a batch is filled from a
/// dataset chosen with probability proportional to its remaining pair count,
/// so batch composition tracks dataset sizes. No text appears twice in a
/// batch (as anchor or positive); a pair that would collide is deferred to a
/// later batch, which may leave some batches shorter than `batch_size`.
pub fn sample_batches(datasets: &[Vec<TrainingPair>], batch_size: usize, seed: u64) -> Result<Vec<TrainingBatch>> {
    if batch_size == 0 {
        return Err(Error::config("batch size must be at least 1"));
    }
    if datasets.is_empty() {
        return Err(Error::Dataset("no datasets to sample from".into()));
    }
    if let Some(i) = datasets.iter().position(Vec::is_empty) {
        return Err(Error::Dataset(format!("dataset {i} is empty")));
    }
    let total: usize = datasets.iter().map(Vec::len).sum();
    if batch_size > total {
        return Err(Error::Dataset(format!(
            "batch size {batch_size} exceeds the {total} available pairs"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut queues: Vec<VecDeque<usize>> = datasets
        .iter()
        .map(|d| {
            let mut idx: Vec<usize> = (0..d.len()).collect();
            idx.shuffle(&mut rng);
            idx.into()
        })
        .collect();

    let mut batches = Vec::with_capacity(total.div_ceil(batch_size));
    let mut left = total;
    while left > 0 {
        let mut texts: HashSet<&str> = HashSet::new();
        let mut origin = Vec::with_capacity(batch_size);
        let mut blocked: Vec<bool> = queues.iter().map(VecDeque::is_empty).collect();
        while origin.len() < batch_size {
            let weights: Vec<usize> = queues
                .iter()
                .zip(&blocked)
                .map(|(q, &b)| if b { 0 } else { q.len() })
                .collect();
            let open: usize = weights.iter().sum();
            if open == 0 {
                break;
            }
            let mut pick = rng.gen_range(0..open);
            let d = weights
                .iter()
                .position(|&w| {
                    if pick < w {
                        true
                    } else {
                        pick -= w;
                        false
                    }
                })
                .expect("pick within total weight");
            let data = &datasets[d];
            let slot = queues[d].iter().position(|&i| {
                let p = &data[i];
                !texts.contains(p.anchor.as_str()) && !texts.contains(p.positive.as_str())
            });
            match slot {
                Some(s) => {
                    let i = queues[d].remove(s).expect("slot in range");
                    texts.insert(&data[i].anchor);
                    texts.insert(&data[i].positive);
                    origin.push((d, i));
                }
                None => blocked[d] = true,
            }
        }
        if origin.is_empty() {
            return Err(Error::Dataset("a pair could not be placed in any batch".into()));
        }
        left -= origin.len();
        let pairs = origin.iter().map(|&(d, i)| datasets[d][i].clone()).collect();
        batches.push(TrainingBatch { pairs, origin });
    }
    Ok(batches)
}
