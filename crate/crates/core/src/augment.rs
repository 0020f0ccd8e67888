//! In-domain training-set construction: question/passage expansion,
//! passage-relation candidates, pair-score filtering and dataset merging.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::PairScorer;
use crate::error::{Error, Result};
use crate::io;
use crate::retrieval::Corpus;
use crate::training::{Lang, TrainingPair};

const SCORE_CHUNK: usize = 64;

/// A question with the ids of the passages that answer it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub qid: String,
    pub question: String,
    pub passage_ids: Vec<String>,
}

/// Parses `qid \t question \t pid[,pid...]` lines.
pub fn parse_qa_records(text: &str) -> Result<Vec<QaRecord>> {
    io::parse_tsv(text, 3)?
        .into_iter()
        .map(|(line, f)| {
            let passage_ids: Vec<String> = f[2]
                .split(',')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(String::from)
                .collect();
            if passage_ids.is_empty() {
                return Err(Error::input(format!("line {line}: question `{}` lists no passages", f[0])));
            }
            Ok(QaRecord {
                qid: f[0].clone(),
                question: f[1].clone(),
                passage_ids,
            })
        })
        .collect()
}

pub fn load_qa_records(path: &Path) -> Result<Vec<QaRecord>> {
    parse_qa_records(&io::read_to_string(path)?)
}

/// One anchor/positive pair per (question, passage) link, in input order.
/// Questions whose id is in `reserved` (held out for evaluation) are skipped.
pub fn expand_qa(
    records: &[QaRecord],
    passages: &Corpus,
    reserved: &BTreeSet<String>,
    lang: Lang,
    source: &str,
) -> Result<Vec<TrainingPair>> {
    let mut out = Vec::new();
    for r in records.iter().filter(|r| !reserved.contains(&r.qid)) {
        for pid in &r.passage_ids {
            let text = passages
                .text(pid)
                .ok_or_else(|| Error::input(format!("question `{}` references unknown passage `{pid}`", r.qid)))?;
            out.push(TrainingPair::new(r.question.clone(), text, lang, source));
        }
    }
    Ok(out)
}

/// A stated relation between two passages.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RelationRecord {
    pub left_id: String,
    pub right_id: String,
    pub source: String,
}

/// Parses `left_id \t right_id \t source` lines.
pub fn parse_relations(text: &str) -> Result<Vec<RelationRecord>> {
    io::parse_tsv(text, 3)?
        .into_iter()
        .map(|(line, f)| {
            if f[0] == f[1] {
                return Err(Error::input(format!("line {line}: passage `{}` related to itself", f[0])));
            }
            Ok(RelationRecord {
                left_id: f[0].clone(),
                right_id: f[1].clone(),
                source: f[2].clone(),
            })
        })
        .collect()
}

pub fn load_relations(path: &Path) -> Result<Vec<RelationRecord>> {
    parse_relations(&io::read_to_string(path)?)
}

/// One pair per relation, the left passage as anchor, dropping relations
/// whose unordered id pair was already seen.
pub fn build_candidates(relations: &[RelationRecord], passages: &Corpus, lang: Lang) -> Result<Vec<TrainingPair>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for r in relations {
        if r.left_id == r.right_id {
            return Err(Error::input(format!("passage `{}` related to itself", r.left_id)));
        }
        let left = passages.require(&r.left_id)?;
        let right = passages.require(&r.right_id)?;
        let key = if r.left_id < r.right_id {
            (r.left_id.as_str(), r.right_id.as_str())
        } else {
            (r.right_id.as_str(), r.left_id.as_str())
        };
        if seen.insert(key) {
            out.push(TrainingPair::new(left, right, lang, r.source.clone()));
        }
    }
    Ok(out)
}

/// A candidate pair and its relevance score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoredPair {
    pub pair: TrainingPair,
    pub score: f32,
}

/// Scores every candidate (in parallel, order preserved) and keeps those with
/// `score >= threshold`. The full scored list is returned as well.
pub fn score_and_filter<S: PairScorer + ?Sized>(
    candidates: &[TrainingPair],
    scorer: &S,
    threshold: f32,
) -> Result<(Vec<TrainingPair>, Vec<ScoredPair>)> {
    if !(0.0..=1.0).contains(&threshold) {
        return Err(Error::config(format!("filter threshold {threshold} is outside [0, 1]")));
    }
    let scores: Vec<Vec<f32>> = candidates
        .par_chunks(SCORE_CHUNK)
        .map(|chunk| {
            let texts: Vec<(&str, &str)> = chunk.iter().map(|p| (p.anchor.as_str(), p.positive.as_str())).collect();
            scorer.score_pairs(&texts)
        })
        .collect::<Result<_>>()?;
    let report: Vec<ScoredPair> = candidates
        .iter()
        .zip(scores.into_iter().flatten())
        .map(|(p, s)| ScoredPair {
            pair: p.clone(),
            score: s.clamp(0.0, 1.0),
        })
        .collect();
    Ok((filter_scored(&report, threshold), report))
}

/// Re-applies a threshold to an existing report.
pub fn filter_scored(report: &[ScoredPair], threshold: f32) -> Vec<TrainingPair> {
    report
        .iter()
        .filter(|s| s.score >= threshold)
        .map(|s| s.pair.clone())
        .collect()
}

/// `anchor \t positive \t score` lines in input order.
pub fn format_score_report(report: &[ScoredPair]) -> String {
    let mut s = String::new();
    for r in report {
        writeln!(
            s,
            "{}\t{}\t{:.6}",
            io::tsv_clean(&r.pair.anchor),
            io::tsv_clean(&r.pair.positive),
            r.score
        )
        .unwrap();
    }
    s
}

/// Result of [`merge_datasets`].
#[derive(Debug, Clone, PartialEq)]
pub struct Merged {
    pub pairs: Vec<TrainingPair>,
    /// `(set index, position in set)` of every dropped duplicate.
    pub duplicates: Vec<(usize, usize)>,
}

/// Concatenates the sets in order, dropping any pair whose exact
/// `(anchor, positive)` already appeared, and warning about each one.
pub fn merge_datasets(sets: &[Vec<TrainingPair>]) -> Merged {
    let mut seen: HashSet<(&str, &str)> = HashSet::new();
    let mut out = Merged {
        pairs: Vec::with_capacity(sets.iter().map(Vec::len).sum()),
        duplicates: Vec::new(),
    };
    for (si, set) in sets.iter().enumerate() {
        for (pi, p) in set.iter().enumerate() {
            if seen.insert((p.anchor.as_str(), p.positive.as_str())) {
                out.pairs.push(p.clone());
            } else {
                out.duplicates.push((si, pi));
            }
        }
    }
    if !out.duplicates.is_empty() {
        warn!("dropped {} duplicate pairs while merging", out.duplicates.len());
        for (si, pi) in &out.duplicates {
            log::debug!("duplicate pair: set {si}, row {}", pi + 1);
        }
    }
    out
}
