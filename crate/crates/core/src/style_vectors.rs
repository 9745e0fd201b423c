//! Seed pairs and feature (style direction) vectors.
//!
//! A feature vector is the mean over seed pairs of `embed(high) - embed(low)`,
//! where a seed text is embedded as the unweighted mean of its token vectors.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::anisotropy::{fit_correction, Correction, CorrectionStats, FitGranularity};
use crate::embedding_store::LayerSetting;
use crate::error::{Error, Result};
use crate::scoring::ScoreConfig;
use crate::source::EmbeddingSource;
use crate::text_pipeline::TokenGroups;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedPair {
    /// Simple / casual / literal side.
    pub low: String,
    /// Complex / formal / figurative side.
    pub high: String,
}

impl SeedPair {
    pub fn new(low: impl Into<String>, high: impl Into<String>) -> Result<Self> {
        let (low, high) = (low.into(), high.into());
        if low.trim().is_empty() || high.trim().is_empty() {
            return Err(Error::Invalid("seed pair sides must be non-empty".into()));
        }
        if low == high {
            return Err(Error::Invalid(format!("seed pair sides are identical: {low:?}")));
        }
        Ok(SeedPair { low, high })
    }

    pub fn swapped(&self) -> SeedPair {
        SeedPair {
            low: self.high.clone(),
            high: self.low.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SeedSet {
    pub feature: String,
    pub pairs: Vec<SeedPair>,
}

impl SeedSet {
    pub fn new(feature: impl Into<String>, pairs: Vec<SeedPair>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Invalid("seed set has no pairs".into()));
        }
        Ok(SeedSet {
            feature: feature.into(),
            pairs,
        })
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    /// SHA-256 over the ordered `low TAB high` lines.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        for p in &self.pairs {
            h.update(p.low.as_bytes());
            h.update(b"\t");
            h.update(p.high.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }

    /// The set without pair `index` (for leave-one-out checks).
    pub fn without(&self, index: usize) -> Result<SeedSet> {
        let pairs = self
            .pairs
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != index)
            .map(|(_, p)| p.clone())
            .collect();
        SeedSet::new(self.feature.clone(), pairs)
    }
}

pub fn load_seed_set(path: &Path, feature: &str) -> Result<SeedSet> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_seed_set(BufReader::new(file), feature, Some(path))
}

/// Parse `low TAB high` lines; `#` starts a comment line.
pub fn parse_seed_set<R: BufRead>(reader: R, feature: &str, path: Option<&Path>) -> Result<SeedSet> {
    let err = |line: usize, message: String| Error::Format {
        path: path.map(Path::to_path_buf),
        line: Some(line),
        message,
    };
    let mut pairs = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in reader.lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| err(lineno, e.to_string()))?;
        let trimmed = line.trim_end_matches(['\r', '\n']);
        if trimmed.trim().is_empty() || trimmed.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = trimmed.split('\t').collect();
        if fields.len() != 2 {
            return Err(err(
                lineno,
                format!("expected `low<TAB>high`, found {} field(s)", fields.len()),
            ));
        }
        let pair = SeedPair::new(fields[0].trim(), fields[1].trim())
            .map_err(|e| err(lineno, e.to_string()))?;
        if !seen.insert(pair.clone()) {
            return Err(err(lineno, format!("duplicate seed pair {:?}", pair)));
        }
        pairs.push(pair);
    }
    if pairs.is_empty() {
        return Err(Error::Format {
            path: path.map(Path::to_path_buf),
            line: None,
            message: "seed file contains no pairs".into(),
        });
    }
    SeedSet::new(feature, pairs)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub source_id: String,
    pub layers: Option<LayerSetting>,
    pub correction: Correction,
    pub fit_granularity: FitGranularity,
    pub seed_hash: String,
    pub seed_pairs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector {
    pub feature: String,
    pub dim: usize,
    pub values: Vec<f64>,
    pub provenance: Provenance,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_stats: Option<CorrectionStats>,
}

impl FeatureVector {
    pub fn load_json(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let fv: FeatureVector = serde_json::from_reader(BufReader::new(file))?;
        if fv.values.len() != fv.dim {
            return Err(Error::DimensionMismatch {
                expected: fv.dim,
                actual: fv.values.len(),
            });
        }
        if fv.provenance.correction.needs_fit() && fv.correction_stats.is_none() {
            return Err(Error::Invalid(format!(
                "{}: correction {} requires stored statistics",
                path.display(),
                fv.provenance.correction.as_str()
            )));
        }
        Ok(fv)
    }

    pub fn negated(&self) -> FeatureVector {
        let mut out = self.clone();
        out.values.iter_mut().for_each(|v| *v = -*v);
        out
    }
}

fn seed_groups(text: &str, source: &EmbeddingSource<'_>, cfg: &ScoreConfig) -> Result<TokenGroups> {
    let groups = source.groups(text, cfg.layers)?;
    if groups.token_vectors().next().is_none() {
        return Err(Error::Invalid(format!("seed text {text:?} has no tokens")));
    }
    Ok(groups)
}

fn mean_vector<'v>(vectors: impl Iterator<Item = &'v Vec<f64>>, dim: usize) -> Result<Vec<f64>> {
    let mut acc = vec![0.0; dim];
    let mut n = 0usize;
    for v in vectors {
        if v.len() != dim {
            return Err(Error::DimensionMismatch {
                expected: dim,
                actual: v.len(),
            });
        }
        acc.iter_mut().zip(v).for_each(|(a, x)| *a += x);
        n += 1;
    }
    if n == 0 {
        return Err(Error::Invalid("cannot average zero token vectors".into()));
    }
    acc.iter_mut().for_each(|a| *a /= n as f64);
    Ok(acc)
}

/// Mean of the (corrected) token vectors of `text`, zero vectors included.
pub fn embed_seed_text(
    text: &str,
    source: &EmbeddingSource<'_>,
    cfg: &ScoreConfig,
    stats: Option<&CorrectionStats>,
) -> Result<Vec<f64>> {
    let groups = seed_groups(text, source, cfg)?;
    embed_groups(&groups, source.dim(), stats)
}

fn embed_groups(groups: &TokenGroups, dim: usize, stats: Option<&CorrectionStats>) -> Result<Vec<f64>> {
    match stats {
        Some(s) => {
            let corrected = groups.map_vectors(|v| s.apply(v))?;
            mean_vector(corrected.token_vectors(), dim)
        }
        None => mean_vector(groups.token_vectors(), dim),
    }
}

/// Fit the configured correction on the seed texts' token vectors.
pub fn fit_seed_correction(
    seeds: &SeedSet,
    source: &EmbeddingSource<'_>,
    cfg: &ScoreConfig,
) -> Result<Option<CorrectionStats>> {
    if !cfg.correction.needs_fit() {
        return Ok(None);
    }
    let dim = source.dim();
    let mut samples = Vec::new();
    for pair in &seeds.pairs {
        for text in [&pair.low, &pair.high] {
            let g = seed_groups(text, source, cfg)?;
            match cfg.fit_granularity {
                FitGranularity::Token => samples.extend(g.token_vectors().cloned()),
                FitGranularity::Text => samples.push(mean_vector(g.token_vectors(), dim)?),
            }
        }
    }
    fit_correction(&samples, cfg.correction, cfg.fit).map(Some)
}

/// `(1/n) * sum_i (embed(high_i) - embed(low_i))`, summed in file order.
pub fn build_feature_vector(
    seeds: &SeedSet,
    source: &EmbeddingSource<'_>,
    cfg: &ScoreConfig,
) -> Result<FeatureVector> {
    cfg.validate()?;
    source.check_layers(cfg.layers)?;
    if seeds.is_empty() {
        return Err(Error::Invalid("seed set has no pairs".into()));
    }
    let dim = source.dim();
    let stats = fit_seed_correction(seeds, source, cfg)?;

    let mut acc = vec![0.0f64; dim];
    for pair in &seeds.pairs {
        let low = embed_groups(&seed_groups(&pair.low, source, cfg)?, dim, stats.as_ref())?;
        let high = embed_groups(&seed_groups(&pair.high, source, cfg)?, dim, stats.as_ref())?;
        for ((a, h), l) in acc.iter_mut().zip(&high).zip(&low) {
            *a += h - l;
        }
    }
    let n = seeds.len() as f64;
    acc.iter_mut().for_each(|a| *a /= n);
    if acc.iter().all(|&v| v == 0.0) {
        return Err(Error::Numeric(format!(
            "feature vector for `{}` is all zeros (are all seed tokens out of vocabulary?)",
            seeds.feature
        )));
    }
    if acc.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("feature vector has non-finite components".into()));
    }

    Ok(FeatureVector {
        feature: seeds.feature.clone(),
        dim,
        values: acc,
        provenance: Provenance {
            source_id: source.id(),
            layers: cfg.layers,
            correction: cfg.correction,
            fit_granularity: cfg.fit_granularity,
            seed_hash: seeds.hash(),
            seed_pairs: seeds.len(),
        },
        correction_stats: stats,
    })
}
