//! Ingestion adapters converting raw corpus files to pair datasets, plus the
//! provenance manifest written next to every converted file.
//!
//! * `canonical`: already `text0 TAB text1 TAB gold`.
//! * `columns`: a delimited file with chosen text/label columns and an
//!   optional annotator-agreement column with a minimum threshold (rated
//!   paraphrase lists).
//! * `parallel`: two line-aligned files, the first holding the text that
//!   shows the feature more strongly (e.g. formal / informal sentence files).

use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use log::warn;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{load_pair_dataset, PairDataset, PairExample};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnSpec {
    pub delimiter: char,
    pub text0: usize,
    pub text1: usize,
    /// Column holding the gold label (`0`/`1`); when absent every row gets
    /// `fixed_gold`.
    pub label: Option<usize>,
    pub fixed_gold: u8,
    /// Column holding the annotator agreement as a fraction in `[0, 1]`.
    pub agreement: Option<usize>,
    pub min_agreement: f64,
    pub skip_header: bool,
}

impl Default for ColumnSpec {
    fn default() -> Self {
        ColumnSpec {
            delimiter: '\t',
            text0: 0,
            text1: 1,
            label: Some(2),
            fixed_gold: 0,
            agreement: None,
            min_agreement: 0.8,
            skip_header: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "adapter", rename_all = "snake_case")]
pub enum Adapter {
    Canonical { path: PathBuf },
    Columns { path: PathBuf, spec: ColumnSpec },
    /// `high` line i is paired with `low` line i; gold is 0.
    Parallel { high: PathBuf, low: PathBuf },
}

impl Adapter {
    pub fn inputs(&self) -> Vec<&Path> {
        match self {
            Adapter::Canonical { path } | Adapter::Columns { path, .. } => vec![path.as_path()],
            Adapter::Parallel { high, low } => vec![high.as_path(), low.as_path()],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFile {
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct IngestCounts {
    pub rows: usize,
    pub malformed: usize,
    pub below_agreement: usize,
    pub kept: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IngestManifest {
    pub adapter: Adapter,
    pub inputs: Vec<InputFile>,
    pub counts: IngestCounts,
}

pub fn sha256_file(path: &Path) -> Result<String> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut hasher = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = file.read(&mut buf).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            break;
        }
        hasher.update(&buf[..n]);
    }
    Ok(hex::encode(hasher.finalize()))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    BufReader::new(file)
        .lines()
        .collect::<std::io::Result<_>>()
        .map_err(|e| Error::io(path, e))
}

fn empty_error(path: &Path) -> Error {
    Error::Format {
        path: Some(path.to_path_buf()),
        line: None,
        message: "no usable pairs".into(),
    }
}

fn ingest_columns(path: &Path, spec: &ColumnSpec, feature: &str) -> Result<(PairDataset, IngestCounts)> {
    if spec.fixed_gold > 1 {
        return Err(Error::Usage(format!("fixed gold must be 0 or 1, got {}", spec.fixed_gold)));
    }
    let mut counts = IngestCounts::default();
    let mut examples = Vec::new();
    for (i, line) in read_lines(path)?.iter().enumerate() {
        if (i == 0 && spec.skip_header) || line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        counts.rows += 1;
        let fields: Vec<&str> = line.split(spec.delimiter).map(str::trim).collect();
        let field = |c: usize| fields.get(c).copied();
        let parsed = (|| {
            let gold = match spec.label {
                Some(c) => match field(c)? {
                    "0" => 0,
                    "1" => 1,
                    _ => return None,
                },
                None => spec.fixed_gold,
            };
            let agreement = match spec.agreement {
                Some(c) => Some(field(c)?.parse::<f64>().ok().filter(|a| a.is_finite())?),
                None => None,
            };
            let ex = PairExample::new(field(spec.text0)?, field(spec.text1)?, gold).ok()?;
            Some((ex, agreement))
        })();
        match parsed {
            None => {
                counts.malformed += 1;
                warn!("{}:{}: malformed row skipped", path.display(), i + 1);
            }
            Some((_, Some(a))) if a < spec.min_agreement => counts.below_agreement += 1,
            Some((ex, _)) => examples.push(ex),
        }
    }
    if examples.is_empty() {
        return Err(empty_error(path));
    }
    counts.kept = examples.len();
    Ok((PairDataset::new(feature, examples), counts))
}

fn ingest_parallel(high: &Path, low: &Path, feature: &str) -> Result<(PairDataset, IngestCounts)> {
    let hi = read_lines(high)?;
    let lo = read_lines(low)?;
    if hi.len() != lo.len() {
        return Err(Error::Format {
            path: Some(low.to_path_buf()),
            line: None,
            message: format!("{} lines, but {} has {}", lo.len(), high.display(), hi.len()),
        });
    }
    let mut counts = IngestCounts::default();
    let mut examples = Vec::new();
    for (i, (h, l)) in hi.iter().zip(&lo).enumerate() {
        counts.rows += 1;
        match PairExample::new(h.trim(), l.trim(), 0) {
            Ok(ex) => examples.push(ex),
            Err(e) => {
                counts.malformed += 1;
                warn!("line {}: pair skipped ({e})", i + 1);
            }
        }
    }
    if examples.is_empty() {
        return Err(empty_error(high));
    }
    counts.kept = examples.len();
    Ok((PairDataset::new(feature, examples), counts))
}

/// Run an adapter, returning the dataset and its manifest.
pub fn ingest(adapter: &Adapter, feature: &str) -> Result<(PairDataset, IngestManifest)> {
    let (mut ds, counts) = match adapter {
        Adapter::Canonical { path } => {
            let ds = load_pair_dataset(path, feature)?;
            let counts = IngestCounts {
                rows: ds.len() + ds.provenance.skipped_lines,
                malformed: ds.provenance.skipped_lines,
                below_agreement: 0,
                kept: ds.len(),
            };
            (ds, counts)
        }
        Adapter::Columns { path, spec } => ingest_columns(path, spec, feature)?,
        Adapter::Parallel { high, low } => ingest_parallel(high, low, feature)?,
    };
    let inputs = adapter
        .inputs()
        .into_iter()
        .map(|p| {
            Ok(InputFile {
                path: p.display().to_string(),
                sha256: sha256_file(p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    ds.provenance.source = inputs.iter().map(|i| i.path.as_str()).collect::<Vec<_>>().join("+");
    ds.provenance.skipped_lines = counts.malformed;
    Ok((
        ds,
        IngestManifest {
            adapter: adapter.clone(),
            inputs,
            counts,
        },
    ))
}
