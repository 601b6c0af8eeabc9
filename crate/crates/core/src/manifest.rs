//! Labelled, subject-attributed dataset lists.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const HEADER: [&str; 4] = ["path", "label", "subject_id", "split"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestRow {
    /// Path as written in the file.
    pub raw_path: String,
    /// `raw_path` resolved against the manifest's directory.
    pub path: PathBuf,
    pub label: u8,
    pub subject_id: String,
    pub split: Split,
    /// 1-based line in the source file.
    pub line: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub rows: Vec<ManifestRow>,
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> impl Iterator<Item = &ManifestRow> {
        self.rows.iter().filter(move |r| r.split == split)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}

fn manifest_err(line: usize, message: impl Into<String>) -> Error {
    Error::Manifest { line, message: message.into() }
}

pub fn parse_manifest(path: &Path) -> Result<DatasetManifest> {
    let text = std::fs::read_to_string(path)?;
    let base = path.parent().unwrap_or(Path::new(""));
    parse_manifest_str(&text, base)
}

/// Parses CSV text; relative paths are joined onto `base_dir`.
pub fn parse_manifest_str(text: &str, base_dir: &Path) -> Result<DatasetManifest> {
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
    let header = reader.headers()?.clone();
    if header.iter().collect::<Vec<_>>() != HEADER {
        return Err(manifest_err(1, format!("header must be `{}`, found `{}`", HEADER.join(","), header.iter().collect::<Vec<_>>().join(","))));
    }
    let mut rows = Vec::new();
    let mut seen_paths: HashMap<PathBuf, usize> = HashMap::new();
    let mut subjects: HashMap<String, (Split, u8, usize)> = HashMap::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line() as usize);
        let [raw_path, label, subject_id, split] = [0, 1, 2, 3].map(|i| record.get(i).unwrap_or(""));
        if raw_path.is_empty() || subject_id.is_empty() {
            return Err(manifest_err(line, "path and subject_id must be non-empty"));
        }
        let label = match label {
            "0" => 0,
            "1" => 1,
            other => return Err(manifest_err(line, format!("label must be 0 or 1, got {other:?}"))),
        };
        let split = match split {
            "train" => Split::Train,
            "test" => Split::Test,
            other => return Err(manifest_err(line, format!("split must be train or test, got {other:?}"))),
        };
        let path = base_dir.join(raw_path);
        if let Some(first) = seen_paths.insert(path.clone(), line) {
            return Err(manifest_err(line, format!("duplicate path {raw_path:?} (first on line {first})")));
        }
        match subjects.get(subject_id) {
            Some(&(s, _, first)) if s != split => {
                return Err(manifest_err(
                    line,
                    format!("subject {subject_id:?} appears in both {s} (line {first}) and {split}"),
                ));
            }
            Some(&(_, l, first)) if l != label => {
                return Err(manifest_err(
                    line,
                    format!("subject {subject_id:?} has label {label} but label {l} on line {first}"),
                ));
            }
            Some(_) => {}
            None => {
                subjects.insert(subject_id.to_string(), (split, label, line));
            }
        }
        rows.push(ManifestRow { raw_path: raw_path.to_string(), path, label, subject_id: subject_id.to_string(), split, line });
    }
    Ok(DatasetManifest { rows })
}

/// Writes rows with the given path strings, in order.
pub fn write_manifest<'a>(path: &Path, rows: impl IntoIterator<Item = (&'a str, u8, &'a str, Split)>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(HEADER)?;
    for (p, label, subject, split) in rows {
        w.write_record([p, &label.to_string(), subject, &split.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
