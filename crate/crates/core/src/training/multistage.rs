//! Sequential fine-tuning over an ordered list of stages, each resuming from
//! the previous stage's weights with a fresh optimizer.

use log::info;
use serde::{Deserialize, Serialize};

use super::data::{format_pairs, TrainingPair};
use super::loops::{train_retriever, TrainReport};
use super::optim::HyperParams;
use crate::encoder::BiEncoder;
use crate::error::{Error, Result};
use crate::io::sha256_hex;

/// One training stage.
#[derive(Debug, Clone)]
pub struct Stage {
    pub name: String,
    pub datasets: Vec<Vec<TrainingPair>>,
    pub hyperparams: HyperParams,
}

/// What a stage consumed and produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub name: String,
    pub dataset_hashes: Vec<String>,
    pub pair_counts: Vec<usize>,
    pub hyperparams: HyperParams,
    pub epoch_losses: Vec<f64>,
    pub checkpoint_sha256: String,
}

/// Result of a multistage run: the encoder after every stage, in order.
#[derive(Debug, Clone)]
pub struct MultistageOutcome {
    pub stages: Vec<(StageRecord, BiEncoder)>,
    pub reports: Vec<TrainReport>,
}

impl MultistageOutcome {
    pub fn final_encoder(&self) -> &BiEncoder {
        &self.stages.last().expect("at least one stage").1
    }

    pub fn records(&self) -> Vec<StageRecord> {
        self.stages.iter().map(|(r, _)| r.clone()).collect()
    }
}

pub fn run_multistage(initial: BiEncoder, stages: &[Stage]) -> Result<MultistageOutcome> {
    if stages.is_empty() {
        return Err(Error::config("multistage run needs at least one stage"));
    }
    for s in stages {
        if s.datasets.is_empty() || s.datasets.iter().all(|d| d.is_empty()) {
            return Err(Error::config(format!("stage '{}' has no training data", s.name)));
        }
        s.hyperparams.validate()?;
    }
    let mut current = initial;
    let mut out = MultistageOutcome {
        stages: Vec::with_capacity(stages.len()),
        reports: Vec::with_capacity(stages.len()),
    };
    for s in stages {
        let (trained, report) = train_retriever(current, &s.datasets, &s.hyperparams)?;
        let record = StageRecord {
            name: s.name.clone(),
            dataset_hashes: s.datasets.iter().map(|d| sha256_hex(format_pairs(d).as_bytes())).collect(),
            pair_counts: s.datasets.iter().map(Vec::len).collect(),
            hyperparams: s.hyperparams.clone(),
            epoch_losses: report.epoch_losses.clone(),
            checkpoint_sha256: trained.to_checkpoint().fingerprint(),
        };
        info!("stage '{}' done, final loss {:?}", s.name, report.epoch_losses.last());
        current = trained.clone();
        out.stages.push((record, trained));
        out.reports.push(report);
    }
    Ok(out)
}
