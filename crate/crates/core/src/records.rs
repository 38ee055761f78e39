//! Line-structured files: an optional JSON header line followed by one JSON
//! record per line. Every line, including the last, ends in `\n`; a missing
//! final newline marks a truncated file.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Common header fields every versioned file starts with.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FormatTag {
    pub format: String,
    pub version: u32,
}

pub fn write_lines<H: Serialize, R: Serialize>(
    path: &Path,
    header: Option<&H>,
    records: impl IntoIterator<Item = R>,
) -> Result<()> {
    let mut buf = Vec::new();
    if let Some(h) = header {
        serde_json::to_writer(&mut buf, h).expect("header serializes");
        buf.push(b'\n');
    }
    for r in records {
        serde_json::to_writer(&mut buf, &r).expect("record serializes");
        buf.push(b'\n');
    }
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}

/// Reads all lines, numbered from 1. Fails on a truncated last line.
fn read_numbered(path: &Path) -> Result<Vec<(usize, String)>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    if text.is_empty() {
        return Ok(vec![]);
    }
    let lines: Vec<&str> = text.split_terminator('\n').collect();
    if !text.ends_with('\n') {
        return Err(Error::MalformedRecord {
            path: path.to_path_buf(),
            line: lines.len(),
            reason: "truncated line (no terminating newline)".into(),
        });
    }
    Ok(lines
        .into_iter()
        .enumerate()
        .map(|(i, l)| (i + 1, l.to_string()))
        .collect())
}

fn parse<T: DeserializeOwned>(path: &Path, line: usize, text: &str) -> Result<T> {
    serde_json::from_str(text).map_err(|e| Error::MalformedRecord {
        path: path.to_path_buf(),
        line,
        reason: e.to_string(),
    })
}

/// Reads a headed file, checking its format tag before decoding the rest.
pub fn read_with_header<H: DeserializeOwned, R: DeserializeOwned>(
    path: &Path,
    format: &str,
    version: u32,
) -> Result<(H, Vec<R>)> {
    let lines = read_numbered(path)?;
    let (first, rest) = lines.split_first().ok_or_else(|| Error::MalformedRecord {
        path: path.to_path_buf(),
        line: 1,
        reason: "missing header line".into(),
    })?;
    let tag: FormatTag = parse(path, first.0, &first.1)?;
    if tag.format != format || tag.version != version {
        return Err(Error::VersionMismatch {
            path: path.to_path_buf(),
            found: format!("{}/{}", tag.format, tag.version),
            expected: format!("{format}/{version}"),
        });
    }
    let header = parse(path, first.0, &first.1)?;
    let records = rest
        .iter()
        .map(|(n, l)| parse(path, *n, l))
        .collect::<Result<Vec<R>>>()?;
    Ok((header, records))
}

/// Reads a header-less file.
pub fn read_plain<R: DeserializeOwned>(path: &Path) -> Result<Vec<R>> {
    read_numbered(path)?
        .iter()
        .map(|(n, l)| parse(path, *n, l))
        .collect()
}
