use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::corpus::{Corpus, EvalSet, Run};
use super::index::{build_index, encode_normalized};
use super::metrics::{mrr_at_k, recall_at_k};
use crate::encoder::SentenceEncoder;
use crate::error::{Error, Result};

/// Cutoffs reported when none are given.
pub const DEFAULT_CUTOFFS: [usize; 2] = [10, 100];

/// One line of a TREC run file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEntry {
    pub qid: String,
    pub doc_id: String,
    pub rank: usize,
    pub score: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub queries: usize,
    pub documents: usize,
    pub encoder: String,
    /// `(name, value)` pairs such as `("MRR@10", 0.5)`, in cutoff order.
    pub metrics: Vec<(String, f64)>,
    pub run: Vec<RunEntry>,
}

impl EvalReport {
    pub fn metric(&self, name: &str) -> Option<f64> {
        self.metrics.iter().find(|(n, _)| n == name).map(|(_, v)| *v)
    }

    /// Human-readable summary, one `name\tvalue` line each.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "queries\t{}", self.queries).unwrap();
        writeln!(s, "documents\t{}", self.documents).unwrap();
        for (name, v) in &self.metrics {
            writeln!(s, "{name}\t{v:.6}").unwrap();
        }
        s
    }

    /// Six-column TREC run: `qid Q0 doc_id rank score tag`.
    pub fn to_trec(&self, tag: &str) -> String {
        let mut s = String::new();
        for e in &self.run {
            writeln!(s, "{} Q0 {} {} {:.6} {}", e.qid, e.doc_id, e.rank, e.score, tag).unwrap();
        }
        s
    }

    pub fn to_run(&self) -> Run {
        let mut run = Run::new();
        for e in &self.run {
            run.entry(e.qid.clone()).or_default().push(e.doc_id.clone());
        }
        run
    }
}

/// Encodes the corpus, retrieves the deepest cutoff for every query and
/// reports MRR@k and Recall@k for each cutoff.
pub fn evaluate<E: SentenceEncoder + ?Sized>(
    enc: &E,
    corpus: &Corpus,
    evalset: &EvalSet,
    cutoffs: &[usize],
) -> Result<EvalReport> {
    if cutoffs.is_empty() || cutoffs.contains(&0) {
        return Err(Error::config("metric cutoffs must be non-empty and positive"));
    }
    if evalset.queries().is_empty() {
        return Err(Error::input("evaluation set has no queries"));
    }
    let index = build_index(enc, corpus)?;
    let depth = cutoffs.iter().copied().max().unwrap_or(1).min(index.len());
    let texts: Vec<&str> = evalset.queries().iter().map(|(_, t)| t.as_str()).collect();
    let qvecs = encode_normalized(enc, &texts)?;
    let hits: Vec<_> = (0..qvecs.rows())
        .into_par_iter()
        .map(|i| index.search(qvecs.row(i), depth))
        .collect::<Result<_>>()?;

    let mut run_entries = Vec::new();
    for ((qid, _), hits) in evalset.queries().iter().zip(hits) {
        for (r, h) in hits.into_iter().enumerate() {
            run_entries.push(RunEntry {
                qid: qid.clone(),
                doc_id: h.doc_id,
                rank: r + 1,
                score: h.score,
            });
        }
    }
    let mut report = EvalReport {
        queries: evalset.queries().len(),
        documents: corpus.len(),
        encoder: index.fingerprint().to_string(),
        metrics: Vec::new(),
        run: run_entries,
    };
    let run = report.to_run();
    for &k in cutoffs {
        report.metrics.push((format!("MRR@{k}"), mrr_at_k(&run, evalset.qrels(), k)?));
    }
    for &k in cutoffs {
        report.metrics.push((format!("Recall@{k}"), recall_at_k(&run, evalset.qrels(), k)?));
    }
    Ok(report)
}
