use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::Path;

use crate::error::{Error, Result};
use crate::io;

/// Ordered `(doc_id, text)` collection with unique ids.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Corpus {
    entries: Vec<(String, String)>,
    positions: HashMap<String, usize>,
}

impl Corpus {
    pub fn new(entries: Vec<(String, String)>) -> Result<Self> {
        let mut positions = HashMap::with_capacity(entries.len());
        for (i, (id, _)) in entries.iter().enumerate() {
            if id.is_empty() {
                return Err(Error::input(format!("document {} has an empty id", i + 1)));
            }
            if positions.insert(id.clone(), i).is_some() {
                return Err(Error::input(format!("duplicate document id `{id}`")));
            }
        }
        Ok(Self { entries, positions })
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[(String, String)] {
        &self.entries
    }

    pub fn position(&self, doc_id: &str) -> Option<usize> {
        self.positions.get(doc_id).copied()
    }

    pub fn text(&self, doc_id: &str) -> Option<&str> {
        self.position(doc_id).map(|i| self.entries[i].1.as_str())
    }

    /// Like [`Corpus::text`], but a missing id is an input error.
    pub fn require(&self, doc_id: &str) -> Result<&str> {
        self.text(doc_id)
            .ok_or_else(|| Error::input(format!("unknown passage id `{doc_id}`")))
    }

    /// Parses `doc_id \t text` lines.
    pub fn parse_tsv(text: &str) -> Result<Self> {
        let rows = io::parse_tsv(text, 2)?;
        Self::new(rows.into_iter().map(|(_, mut f)| (f.swap_remove(0), f.swap_remove(0))).collect())
    }

    pub fn to_tsv(&self) -> String {
        self.entries
            .iter()
            .map(|(id, t)| format!("{}\t{}\n", io::tsv_clean(id), io::tsv_clean(t)))
            .collect()
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse_tsv(&io::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        io::write_bytes(path, self.to_tsv().as_bytes())
    }
}

/// Binary relevance judgements: qid → relevant doc ids.
pub type Qrels = BTreeMap<String, BTreeSet<String>>;

/// Ranked doc ids per query.
pub type Run = BTreeMap<String, Vec<String>>;

/// Parses `qid \t text` lines.
pub fn parse_queries(text: &str) -> Result<Vec<(String, String)>> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::new();
    for (line, mut f) in io::parse_tsv(text, 2)? {
        let qid = f.swap_remove(0);
        if !seen.insert(qid.clone()) {
            return Err(Error::input(format!("line {line}: duplicate query id `{qid}`")));
        }
        out.push((qid, f.swap_remove(0)));
    }
    Ok(out)
}

/// Parses `qid \t doc_id` lines.
pub fn parse_qrels(text: &str) -> Result<Qrels> {
    let mut qrels = Qrels::new();
    for (_, f) in io::parse_tsv(text, 2)? {
        qrels.entry(f[0].clone()).or_default().insert(f[1].clone());
    }
    Ok(qrels)
}

pub fn format_qrels(qrels: &Qrels) -> String {
    qrels
        .iter()
        .flat_map(|(q, docs)| docs.iter().map(move |d| format!("{q}\t{d}\n")))
        .collect()
}

/// Queries plus their relevance judgements.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalSet {
    queries: Vec<(String, String)>,
    qrels: Qrels,
}

impl EvalSet {
    /// Every query needs at least one judged document and every judged
    /// document must exist in `corpus`.
    pub fn new(queries: Vec<(String, String)>, qrels: Qrels, corpus: &Corpus) -> Result<Self> {
        for (qid, _) in &queries {
            match qrels.get(qid) {
                Some(docs) if !docs.is_empty() => {}
                _ => return Err(Error::input(format!("query `{qid}` has no relevance judgements"))),
            }
        }
        for (qid, docs) in &qrels {
            if let Some(d) = docs.iter().find(|d| corpus.position(d).is_none()) {
                return Err(Error::input(format!("qrels for `{qid}` reference unknown document `{d}`")));
            }
        }
        Ok(Self { queries, qrels })
    }

    pub fn load(queries: &Path, qrels: &Path, corpus: &Corpus) -> Result<Self> {
        Self::new(
            parse_queries(&io::read_to_string(queries)?)?,
            parse_qrels(&io::read_to_string(qrels)?)?,
            corpus,
        )
    }

    pub fn queries(&self) -> &[(String, String)] {
        &self.queries
    }

    pub fn qrels(&self) -> &Qrels {
        &self.qrels
    }
}
