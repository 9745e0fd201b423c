//! Pair datasets: canonical TSV loading, overlap filtering, label balancing
//! and seeded splits.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{SeededRng, Stream};
use crate::text_pipeline::tokenize;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct PairExample {
    pub text0: String,
    pub text1: String,
    /// Index of the text showing the feature more strongly.
    pub gold: u8,
}

impl PairExample {
    pub fn new(text0: impl Into<String>, text1: impl Into<String>, gold: u8) -> Result<Self> {
        let (text0, text1) = (text0.into(), text1.into());
        if gold > 1 {
            return Err(Error::Invalid(format!("gold label must be 0 or 1, got {gold}")));
        }
        if text0 == text1 {
            return Err(Error::Invalid("pair texts are identical".into()));
        }
        if text0.trim().is_empty() || text1.trim().is_empty() {
            return Err(Error::Invalid("pair texts must be non-empty".into()));
        }
        Ok(PairExample { text0, text1, gold })
    }

    pub fn swapped(&self) -> PairExample {
        PairExample {
            text0: self.text1.clone(),
            text1: self.text0.clone(),
            gold: 1 - self.gold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DatasetProvenance {
    pub source: String,
    pub seed: Option<u64>,
    /// Processing steps applied, in order.
    pub steps: Vec<String>,
    pub skipped_lines: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PairDataset {
    pub feature: String,
    pub split: Option<String>,
    pub examples: Vec<PairExample>,
    pub provenance: DatasetProvenance,
}

impl PairDataset {
    pub fn new(feature: impl Into<String>, examples: Vec<PairExample>) -> Self {
        PairDataset {
            feature: feature.into(),
            split: None,
            examples,
            provenance: DatasetProvenance::default(),
        }
    }

    pub fn len(&self) -> usize {
        self.examples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.examples.is_empty()
    }

    pub fn gold0_fraction(&self) -> f64 {
        if self.examples.is_empty() {
            return 0.0;
        }
        self.examples.iter().filter(|e| e.gold == 0).count() as f64 / self.len() as f64
    }

    fn derived(&self, examples: Vec<PairExample>, step: String) -> PairDataset {
        let mut provenance = self.provenance.clone();
        provenance.steps.push(step);
        PairDataset {
            feature: self.feature.clone(),
            split: self.split.clone(),
            examples,
            provenance,
        }
    }

    pub fn write_tsv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let mut w = BufWriter::new(w);
        for e in &self.examples {
            writeln!(w, "{}\t{}\t{}", clean_field(&e.text0), clean_field(&e.text1), e.gold)?;
        }
        w.flush()
    }
}

fn clean_field(s: &str) -> String {
    s.replace(['\t', '\n', '\r'], " ")
}

pub fn load_pair_dataset(path: &Path, feature: &str) -> Result<PairDataset> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ds = parse_pair_dataset(BufReader::new(file), feature, Some(path))?;
    ds.provenance.source = path.display().to_string();
    Ok(ds)
}

/// Parse `text0 TAB text1 TAB gold` lines. Malformed lines are skipped and
/// counted; a file without any valid example is an error.
pub fn parse_pair_dataset<R: BufRead>(reader: R, feature: &str, path: Option<&Path>) -> Result<PairDataset> {
    let mut examples = Vec::new();
    let mut skipped = 0;
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| match path {
            Some(p) => Error::io(p, e),
            None => Error::format(e.to_string()),
        })?;
        let line = line.trim_end_matches(['\r', '\n']);
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        let parsed = match fields.as_slice() {
            [t0, t1, g] => match g.trim() {
                "0" => PairExample::new(t0.trim(), t1.trim(), 0),
                "1" => PairExample::new(t0.trim(), t1.trim(), 1),
                other => Err(Error::Invalid(format!("bad gold label {other:?}"))),
            },
            _ => Err(Error::Invalid(format!("expected 3 fields, found {}", fields.len()))),
        };
        match parsed {
            Ok(ex) => examples.push(ex),
            Err(e) => {
                skipped += 1;
                warn!("line {}: skipped ({e})", idx + 1);
            }
        }
    }
    if examples.is_empty() {
        return Err(Error::Format {
            path: path.map(Path::to_path_buf),
            line: None,
            message: "dataset contains no valid examples".into(),
        });
    }
    let mut ds = PairDataset::new(feature, examples);
    ds.provenance.skipped_lines = skipped;
    Ok(ds)
}

/// Drop pairs whose token sets are equal or where one contains the other.
pub fn filter_token_overlap(ds: &PairDataset) -> PairDataset {
    let keep: Vec<PairExample> = ds
        .examples
        .iter()
        .filter(|e| {
            let a: HashSet<String> = tokenize(&e.text0).surfaces().map(str::to_string).collect();
            let b: HashSet<String> = tokenize(&e.text1).surfaces().map(str::to_string).collect();
            !(a.is_subset(&b) || b.is_subset(&a))
        })
        .cloned()
        .collect();
    let dropped = ds.len() - keep.len();
    ds.derived(keep, format!("filter_token_overlap(dropped={dropped})"))
}

/// Independently for each pair, swap the texts and flip the label with
/// probability 1/2.
pub fn balance_labels(ds: &PairDataset, seed: u64) -> PairDataset {
    let mut rng = SeededRng::new(seed, Stream::LabelBalance);
    let examples = ds
        .examples
        .iter()
        .map(|e| if rng.coin() { e.swapped() } else { e.clone() })
        .collect();
    let mut out = ds.derived(examples, format!("balance_labels(seed={seed})"));
    out.provenance.seed = Some(seed);
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitRatios(pub [f64; 3]);

impl SplitRatios {
    /// Parse `a:b:c`; values are normalized by their sum.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<f64> = s
            .split(':')
            .map(|p| p.trim().parse::<f64>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|_| Error::Usage(format!("bad split ratios `{s}` (expected e.g. 8:1:1)")))?;
        if parts.len() != 3 || parts.iter().any(|p| *p < 0.0 || !p.is_finite()) {
            return Err(Error::Usage(format!("bad split ratios `{s}` (expected e.g. 8:1:1)")));
        }
        let total: f64 = parts.iter().sum();
        if total <= 0.0 {
            return Err(Error::Usage(format!("split ratios `{s}` sum to zero")));
        }
        Ok(SplitRatios([parts[0] / total, parts[1] / total, parts[2] / total]))
    }
}

/// Seeded shuffle followed by a contiguous train/val/test cut.
pub fn split(
    ds: &PairDataset,
    ratios: SplitRatios,
    seed: u64,
    allow_empty: bool,
) -> Result<(PairDataset, PairDataset, PairDataset)> {
    let r = ratios.0;
    let sum: f64 = r.iter().sum();
    if (sum - 1.0).abs() > 1e-9 || r.iter().any(|x| *x < 0.0) {
        return Err(Error::Usage(format!("split ratios {r:?} must be non-negative and sum to 1")));
    }
    let n = ds.len();
    let n_train = (((n as f64) * r[0]).round() as usize).min(n);
    let n_val = (((n as f64) * r[1]).round() as usize).min(n - n_train);
    let n_test = n - n_train - n_val;
    if !allow_empty && (n_train == 0 || n_val == 0 || n_test == 0) {
        return Err(Error::Invalid(format!(
            "split of {n} examples with ratios {r:?} gives an empty part ({n_train}/{n_val}/{n_test})"
        )));
    }

    let mut order: Vec<usize> = (0..n).collect();
    SeededRng::new(seed, Stream::Split).shuffle(&mut order);
    let pick = |range: std::ops::Range<usize>, name: &str| {
        let mut part = ds.derived(
            order[range].iter().map(|&i| ds.examples[i].clone()).collect(),
            format!("split(seed={seed}, ratios={:?}, part={name})", r),
        );
        part.split = Some(name.to_string());
        part.provenance.seed = Some(seed);
        part
    };
    Ok((
        pick(0..n_train, "train"),
        pick(n_train..n_train + n_val, "val"),
        pick(n_train + n_val..n, "test"),
    ))
}
