use super::corpus::{Qrels, Run};
use crate::error::{Error, Result};

fn check(run: &Run, qrels: &Qrels, k: usize) -> Result<()> {
    if k == 0 {
        return Err(Error::input("metric cutoff must be at least 1"));
    }
    if run.is_empty() {
        return Err(Error::input("run contains no queries"));
    }
    if let Some(q) = run.keys().find(|q| !qrels.contains_key(*q)) {
        return Err(Error::input(format!("query `{q}` has no relevance judgements")));
    }
    Ok(())
}

/// Mean reciprocal rank of the first relevant document within the top `k`.
pub fn mrr_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    check(run, qrels, k)?;
    let total: f64 = run
        .iter()
        .map(|(q, docs)| {
            let rel = &qrels[q];
            docs.iter()
                .take(k)
                .position(|d| rel.contains(d))
                .map_or(0.0, |r| 1.0 / (r + 1) as f64)
        })
        .sum();
    Ok(total / run.len() as f64)
}

/// Mean fraction of relevant documents found in the top `k`.
pub fn recall_at_k(run: &Run, qrels: &Qrels, k: usize) -> Result<f64> {
    check(run, qrels, k)?;
    let total: f64 = run
        .iter()
        .map(|(q, docs)| {
            let rel = &qrels[q];
            if rel.is_empty() {
                return 0.0;
            }
            let found = docs.iter().take(k).filter(|d| rel.contains(*d)).count();
            found as f64 / rel.len() as f64
        })
        .sum();
    Ok(total / run.len() as f64)
}
