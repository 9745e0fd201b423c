//! Feature scores: token similarities to a feature vector, pooled
//! subtoken -> word -> text with one pooling strategy at both levels.

use serde::{Deserialize, Serialize};

use crate::anisotropy::{rank_transform, Correction, FitGranularity, FitOptions};
use crate::embedding_store::LayerSetting;
use crate::error::{Error, Result};
use crate::source::EmbeddingSource;
use crate::style_vectors::FeatureVector;
use crate::text_pipeline::TokenGroups;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Metric {
    #[default]
    Cosine,
    Spearman,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    #[default]
    Mean,
    Max,
}

impl Pooling {
    pub fn as_str(&self) -> &'static str {
        match self {
            Pooling::Mean => "mean",
            Pooling::Max => "max",
        }
    }
}

impl std::str::FromStr for Pooling {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mean" => Ok(Pooling::Mean),
            "max" => Ok(Pooling::Max),
            other => Err(Error::Usage(format!("unknown pooling `{other}` (expected mean or max)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScoreConfig {
    pub metric: Metric,
    pub pooling: Pooling,
    /// Required for contextual sources, absent for static ones.
    pub layers: Option<LayerSetting>,
    pub correction: Correction,
    /// Exclude out-of-vocabulary words from pooling.
    pub skip_oov: bool,
    pub fit: FitOptions,
    pub fit_granularity: FitGranularity,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        ScoreConfig {
            metric: Metric::Cosine,
            pooling: Pooling::Mean,
            layers: None,
            correction: Correction::None,
            skip_oov: false,
            fit: FitOptions::default(),
            fit_granularity: FitGranularity::Token,
        }
    }
}

impl ScoreConfig {
    /// Config for `correction` with the metric it implies.
    pub fn with_correction(mut self, correction: Correction) -> Self {
        self.correction = correction;
        self.metric = if correction == Correction::Rank {
            Metric::Spearman
        } else {
            Metric::Cosine
        };
        self
    }

    pub fn validate(&self) -> Result<()> {
        let spearman = self.metric == Metric::Spearman;
        let rank = self.correction == Correction::Rank;
        if spearman != rank {
            return Err(Error::Usage(
                "the spearman metric is used exactly when the correction is `rank`".into(),
            ));
        }
        Ok(())
    }

    /// Short human-readable label, e.g. `agg(4)/mean/standardization`.
    pub fn label(&self) -> String {
        let layers = self
            .layers
            .map(|l| l.to_string())
            .unwrap_or_else(|| "static".to_string());
        format!("{}/{}/{}", layers, self.pooling.as_str(), self.correction.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FeatureScore {
    pub value: f64,
    pub token_scores: Vec<f64>,
    pub word_scores: Vec<f64>,
    pub oov_count: usize,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn cosine(x: &[f64], y: &[f64]) -> f64 {
    cosine_with(x, y, dot(y, y))
}

/// Cosine given the precomputed squared norm of `y`.
fn cosine_with(x: &[f64], y: &[f64], yy: f64) -> f64 {
    let xx = dot(x, x);
    if xx == 0.0 || yy == 0.0 {
        return 0.0;
    }
    (dot(x, y) / (xx * yy).sqrt()).clamp(-1.0, 1.0)
}

fn centered_ranks(x: &[f64]) -> Vec<f64> {
    let mid = (x.len() as f64 + 1.0) / 2.0;
    rank_transform(x).into_iter().map(|r| r - mid).collect()
}

/// Cosine similarity, or Spearman's rho (Pearson correlation of average-tie
/// ranks). Zero-norm / constant-rank inputs give 0.
pub fn similarity(x: &[f64], dvec: &[f64], metric: Metric) -> Result<f64> {
    if x.len() != dvec.len() {
        return Err(Error::DimensionMismatch {
            expected: dvec.len(),
            actual: x.len(),
        });
    }
    match metric {
        Metric::Cosine => Ok(cosine(x, dvec)),
        Metric::Spearman => {
            if x.len() < 2 {
                return Err(Error::Invalid("spearman similarity needs dimension >= 2".into()));
            }
            Ok(cosine(&centered_ranks(x), &centered_ranks(dvec)))
        }
    }
}

pub fn pool(scores: &[f64], strategy: Pooling) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::Invalid("cannot pool an empty score list".into()));
    }
    Ok(match strategy {
        Pooling::Mean => scores.iter().sum::<f64>() / scores.len() as f64,
        Pooling::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
    })
}

/// A feature vector prepared for repeated similarity queries.
struct Target<'a> {
    metric: Metric,
    /// Raw values for cosine, centered ranks for spearman.
    values: std::borrow::Cow<'a, [f64]>,
    sq_norm: f64,
}

impl<'a> Target<'a> {
    fn new(dvec: &'a [f64], metric: Metric) -> Result<Self> {
        let values = match metric {
            Metric::Cosine => std::borrow::Cow::Borrowed(dvec),
            Metric::Spearman => {
                if dvec.len() < 2 {
                    return Err(Error::Invalid("spearman similarity needs dimension >= 2".into()));
                }
                std::borrow::Cow::Owned(centered_ranks(dvec))
            }
        };
        let sq_norm = dot(&values, &values);
        Ok(Target {
            metric,
            values,
            sq_norm,
        })
    }

    fn score(&self, x: &[f64]) -> Result<f64> {
        if x.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                actual: x.len(),
            });
        }
        let ranked;
        let x = match self.metric {
            Metric::Cosine => x,
            Metric::Spearman => {
                ranked = centered_ranks(x);
                &ranked[..]
            }
        };
        Ok(cosine_with(x, &self.values, self.sq_norm))
    }
}

/// Check that `fvec` was built for this source and configuration.
pub fn check_compatible(fvec: &FeatureVector, source: &EmbeddingSource<'_>, cfg: &ScoreConfig) -> Result<()> {
    cfg.validate()?;
    source.check_layers(cfg.layers)?;
    if fvec.dim != source.dim() || fvec.values.len() != fvec.dim {
        return Err(Error::DimensionMismatch {
            expected: source.dim(),
            actual: fvec.values.len(),
        });
    }
    let p = &fvec.provenance;
    if p.correction != cfg.correction {
        return Err(Error::Invalid(format!(
            "feature vector built with correction `{}`, scoring with `{}`",
            p.correction.as_str(),
            cfg.correction.as_str()
        )));
    }
    if p.layers != cfg.layers {
        return Err(Error::Invalid(format!(
            "feature vector built with layer setting {:?}, scoring with {:?}",
            p.layers, cfg.layers
        )));
    }
    if cfg.correction.needs_fit() {
        match &fvec.correction_stats {
            Some(s) if s.dim == fvec.dim => {}
            Some(s) => {
                return Err(Error::DimensionMismatch {
                    expected: fvec.dim,
                    actual: s.dim,
                })
            }
            None => {
                return Err(Error::Invalid(
                    "feature vector carries no correction statistics".into(),
                ))
            }
        }
    }
    Ok(())
}

/// Score already-grouped token vectors. Assumes compatibility was checked.
pub fn score_groups(groups: &TokenGroups, fvec: &FeatureVector, cfg: &ScoreConfig) -> Result<FeatureScore> {
    if groups.token_vectors().next().is_none() {
        return Err(Error::Invalid("text has no tokens".into()));
    }
    let target = Target::new(&fvec.values, cfg.metric)?;
    let stats = fvec.correction_stats.as_ref().filter(|_| cfg.correction.needs_fit());

    let mut token_scores = Vec::new();
    let mut word_scores = Vec::with_capacity(groups.len());
    let mut pooled_words = Vec::with_capacity(groups.len());
    for unit in &groups.units {
        let start = token_scores.len();
        for v in &unit.vectors {
            let s = match stats {
                Some(st) => target.score(&st.apply(v)?)?,
                None => target.score(v)?,
            };
            token_scores.push(s);
        }
        let w = pool(&token_scores[start..], cfg.pooling)?;
        word_scores.push(w);
        if !(cfg.skip_oov && unit.oov) {
            pooled_words.push(w);
        }
    }
    // Every word skipped as OOV: neutral score.
    let value = if pooled_words.is_empty() {
        0.0
    } else {
        pool(&pooled_words, cfg.pooling)?
    };
    Ok(FeatureScore {
        value,
        token_scores,
        word_scores,
        oov_count: groups.oov_count(),
    })
}

pub fn score_text(
    text: &str,
    fvec: &FeatureVector,
    source: &EmbeddingSource<'_>,
    cfg: &ScoreConfig,
) -> Result<FeatureScore> {
    check_compatible(fvec, source, cfg)?;
    let groups = source.groups(text, cfg.layers)?;
    score_groups(&groups, fvec, cfg)
}
