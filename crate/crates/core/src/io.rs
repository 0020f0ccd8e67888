//! Small file helpers shared by every module: hashing and TSV access.

use std::fs;
use std::io::Write;
use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn hash_file(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::file(path, e))?;
    Ok(sha256_hex(&bytes))
}

pub fn read_to_string(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::file(path, e))
}

pub fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::file(parent, e))?;
        }
    }
    let mut f = fs::File::create(path).map_err(|e| Error::file(path, e))?;
    f.write_all(bytes).map_err(|e| Error::file(path, e))
}

/// Reads a headerless TSV file, requiring at least `min_cols` columns per
/// non-empty line. Returns `(line_number, fields)`.
pub fn read_tsv(path: &Path, min_cols: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let text = read_to_string(path)?;
    parse_tsv(&text, min_cols).map_err(|e| match e {
        Error::Input(msg) => Error::Input(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn parse_tsv(text: &str, min_cols: usize) -> Result<Vec<(usize, Vec<String>)>> {
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.strip_suffix('\r').unwrap_or(line);
        if line.is_empty() {
            continue;
        }
        let fields: Vec<String> = line.split('\t').map(str::to_owned).collect();
        if fields.len() < min_cols {
            return Err(Error::input(format!(
                "line {}: expected at least {min_cols} tab-separated columns, found {}",
                i + 1,
                fields.len()
            )));
        }
        rows.push((i + 1, fields));
    }
    Ok(rows)
}

/// Replaces characters that would break a TSV row.
pub fn tsv_clean(field: &str) -> String {
    field.replace(['\t', '\n', '\r'], " ")
}
