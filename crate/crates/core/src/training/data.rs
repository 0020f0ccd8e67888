use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::io;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Lang {
    En,
    Ar,
}

impl fmt::Display for Lang {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Lang::En => "en",
            Lang::Ar => "ar",
        })
    }
}

impl FromStr for Lang {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "en" => Ok(Lang::En),
            "ar" => Ok(Lang::Ar),
            other => Err(Error::input(format!("unknown language tag {other:?} (expected en or ar)"))),
        }
    }
}

/// An anchor (query) and a passage relevant to it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TrainingPair {
    pub anchor: String,
    pub positive: String,
    pub lang: Lang,
    pub source: String,
}

impl TrainingPair {
    pub fn new(anchor: impl Into<String>, positive: impl Into<String>, lang: Lang, source: impl Into<String>) -> Self {
        Self {
            anchor: anchor.into(),
            positive: positive.into(),
            lang,
            source: source.into(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.anchor.trim().is_empty() || self.positive.trim().is_empty() {
            return Err(Error::input("training pair with an empty anchor or positive"));
        }
        Ok(())
    }
}

/// Parses `anchor \t positive \t lang \t source` lines.
pub fn parse_pairs(text: &str) -> Result<Vec<TrainingPair>> {
    let rows = io::parse_tsv(text, 4)?;
    rows.into_iter()
        .map(|(line, f)| {
            let pair = TrainingPair {
                anchor: f[0].clone(),
                positive: f[1].clone(),
                lang: f[2].parse().map_err(|e: Error| Error::input(format!("line {line}: {e}")))?,
                source: f[3].clone(),
            };
            pair.validate().map_err(|e| Error::input(format!("line {line}: {e}")))?;
            Ok(pair)
        })
        .collect()
}

pub fn load_pairs(path: &Path) -> Result<Vec<TrainingPair>> {
    parse_pairs(&io::read_to_string(path)?).map_err(|e| match e {
        Error::Input(m) => Error::Input(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn format_pairs(pairs: &[TrainingPair]) -> String {
    let mut out = String::new();
    for p in pairs {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\n",
            io::tsv_clean(&p.anchor),
            io::tsv_clean(&p.positive),
            p.lang,
            io::tsv_clean(&p.source)
        ));
    }
    out
}

pub fn save_pairs(path: &Path, pairs: &[TrainingPair]) -> Result<()> {
    io::write_bytes(path, format_pairs(pairs).as_bytes())
}
