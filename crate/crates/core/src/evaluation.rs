//! Pairwise classification: which of two texts shows the feature more
//! strongly. Accuracy, baselines and validation grid search.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use log::warn;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{PairDataset, PairExample};
use crate::error::{Error, Result};
use crate::scoring::{check_compatible, pool, score_text, Pooling, ScoreConfig};
use crate::source::EmbeddingSource;
use crate::style_vectors::{build_feature_vector, FeatureVector, SeedSet};
use crate::text_pipeline::tokenize;

/// A feature vector with the source and configuration it is scored against.
#[derive(Debug, Clone, Copy)]
pub struct Scorer<'a> {
    pub fvec: &'a FeatureVector,
    pub source: EmbeddingSource<'a>,
    pub cfg: ScoreConfig,
}

impl<'a> Scorer<'a> {
    pub fn new(fvec: &'a FeatureVector, source: EmbeddingSource<'a>, cfg: ScoreConfig) -> Result<Self> {
        check_compatible(fvec, &source, &cfg)?;
        Ok(Scorer { fvec, source, cfg })
    }

    pub fn score(&self, text: &str) -> Result<f64> {
        score_text(text, self.fvec, &self.source, &self.cfg).map(|s| s.value)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub predicted: u8,
    pub gold: u8,
    pub score0: f64,
    pub score1: f64,
    pub tie: bool,
    pub tokens0: usize,
    pub tokens1: usize,
}

impl Prediction {
    pub fn correct(&self) -> bool {
        self.predicted == self.gold
    }

    /// Mean token count of the two texts.
    pub fn mean_length(&self) -> f64 {
        (self.tokens0 + self.tokens1) as f64 / 2.0
    }

    fn from_scores(ex: &PairExample, score0: f64, score1: f64, higher_wins: bool) -> Prediction {
        let tie = score0 == score1;
        let one_wins = if higher_wins { score1 > score0 } else { score1 < score0 };
        Prediction {
            predicted: u8::from(!tie && one_wins),
            gold: ex.gold,
            score0,
            score1,
            tie,
            tokens0: tokenize(&ex.text0).len(),
            tokens1: tokenize(&ex.text1).len(),
        }
    }
}

/// Higher score wins; an exact tie predicts 0 and is flagged.
pub fn classify_pair(ex: &PairExample, scorer: &Scorer<'_>) -> Result<Prediction> {
    let s0 = scorer.score(&ex.text0)?;
    let s1 = scorer.score(&ex.text1)?;
    Ok(Prediction::from_scores(ex, s0, s1, true))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    /// `"style_vector"`, `"majority"` or `"frequency"`.
    pub method: String,
    pub feature: String,
    pub dataset: String,
    pub split: Option<String>,
    pub source_id: Option<String>,
    pub config: Option<ScoreConfig>,
    pub accuracy: f64,
    pub n: usize,
    pub correct: usize,
    pub tie_count: usize,
    pub predictions: Vec<Prediction>,
}

impl EvalReport {
    fn from_predictions(method: &str, ds: &PairDataset, predictions: Vec<Prediction>) -> EvalReport {
        let n = predictions.len();
        let correct = predictions.iter().filter(|p| p.correct()).count();
        EvalReport {
            method: method.to_string(),
            feature: ds.feature.clone(),
            dataset: ds.provenance.source.clone(),
            split: ds.split.clone(),
            source_id: None,
            config: None,
            accuracy: if n == 0 { 0.0 } else { correct as f64 / n as f64 },
            n,
            correct,
            tie_count: predictions.iter().filter(|p| p.tie).count(),
            predictions,
        }
    }
}

/// Classify every example (in parallel) and report accuracy. Predictions
/// keep dataset order.
pub fn evaluate(ds: &PairDataset, scorer: &Scorer<'_>) -> Result<EvalReport> {
    let predictions = ds
        .examples
        .par_iter()
        .enumerate()
        .map(|(i, ex)| {
            classify_pair(ex, scorer).map_err(|e| Error::Example {
                index: i,
                source: Box::new(e),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut report = EvalReport::from_predictions("style_vector", ds, predictions);
    report.source_id = Some(scorer.source.id());
    report.config = Some(scorer.cfg);
    Ok(report)
}

/// Always predict the most frequent gold label (0 on a tie).
pub fn majority_baseline(ds: &PairDataset) -> EvalReport {
    let ones = ds.examples.iter().filter(|e| e.gold == 1).count();
    let label = u8::from(ones * 2 > ds.len());
    let predictions = ds
        .examples
        .iter()
        .map(|e| Prediction {
            predicted: label,
            gold: e.gold,
            score0: 0.0,
            score1: 0.0,
            tie: false,
            tokens0: tokenize(&e.text0).len(),
            tokens1: tokenize(&e.text1).len(),
        })
        .collect();
    EvalReport::from_predictions("majority", ds, predictions)
}

/// Token counts from a `token TAB count` file.
#[derive(Debug, Clone, Default)]
pub struct FrequencyTable {
    counts: HashMap<String, u64>,
}

impl FrequencyTable {
    pub fn from_counts<I, S>(counts: I) -> Self
    where
        I: IntoIterator<Item = (S, u64)>,
        S: Into<String>,
    {
        FrequencyTable {
            counts: counts.into_iter().map(|(k, v)| (k.into(), v)).collect(),
        }
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        Self::parse(BufReader::new(file), Some(path))
    }

    /// Repeated tokens accumulate; malformed lines are skipped.
    pub fn parse<R: BufRead>(reader: R, path: Option<&Path>) -> Result<Self> {
        let mut counts: HashMap<String, u64> = HashMap::new();
        let mut skipped = 0usize;
        for line in reader.lines() {
            let line = line.map_err(|e| match path {
                Some(p) => Error::io(p, e),
                None => Error::format(e.to_string()),
            })?;
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let mut parts = line.split('\t');
            match (parts.next(), parts.next().map(|c| c.trim().parse::<u64>()), parts.next()) {
                (Some(tok), Some(Ok(c)), None) if !tok.is_empty() => {
                    *counts.entry(tok.to_string()).or_insert(0) += c;
                }
                _ => skipped += 1,
            }
        }
        if skipped > 0 {
            warn!("frequency table: {skipped} malformed lines skipped");
        }
        if counts.is_empty() {
            return Err(Error::Format {
                path: path.map(Path::to_path_buf),
                line: None,
                message: "frequency table is empty".into(),
            });
        }
        Ok(FrequencyTable { counts })
    }

    /// Exact match, then lowercase; 0 when absent.
    pub fn count(&self, token: &str) -> u64 {
        self.counts
            .get(token)
            .or_else(|| self.counts.get(&token.to_lowercase()))
            .copied()
            .unwrap_or(0)
    }

    /// Pooled `log10(count + 1)` over the tokens of `text`.
    pub fn text_score(&self, text: &str, pooling: Pooling) -> f64 {
        let scores: Vec<f64> = tokenize(text)
            .surfaces()
            .map(|t| (self.count(t) as f64 + 1.0).log10())
            .collect();
        pool(&scores, pooling).unwrap_or(0.0)
    }
}

/// More frequent means simpler: the text with the lower pooled log-frequency
/// is predicted to show the feature more strongly.
pub fn frequency_baseline(ds: &PairDataset, freq: &FrequencyTable, pooling: Pooling) -> EvalReport {
    let predictions = ds
        .examples
        .par_iter()
        .map(|e| {
            Prediction::from_scores(e, freq.text_score(&e.text0, pooling), freq.text_score(&e.text1, pooling), false)
        })
        .collect();
    EvalReport::from_predictions("frequency", ds, predictions)
}

/// One point of a configuration grid.
#[derive(Debug, Clone, Copy)]
pub struct GridCandidate<'a> {
    pub source: EmbeddingSource<'a>,
    pub cfg: ScoreConfig,
}

impl GridCandidate<'_> {
    pub fn label(&self) -> String {
        format!("{}/{}", self.source.id(), self.cfg.label())
    }

    /// `(layer, single-before-aggregate)` used to break validation ties;
    /// static sources count as layer 0, single.
    fn tie_key(&self) -> (usize, u8) {
        match self.cfg.layers {
            None => (0, 0),
            Some(crate::embedding_store::LayerSetting::Single(l)) => (l, 0),
            Some(crate::embedding_store::LayerSetting::Aggregate(l)) => (l, 1),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridEntry {
    pub label: String,
    pub source_id: String,
    pub config: ScoreConfig,
    pub val_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub test_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct GridResult {
    pub winner: usize,
    pub entries: Vec<GridEntry>,
    pub val_report: EvalReport,
    pub test_report: EvalReport,
    pub feature_vector: FeatureVector,
}

/// Index of the best validation accuracy; ties go to the smaller layer,
/// then single before aggregate, then grid order.
pub fn select_winner(candidates: &[GridCandidate<'_>], val_acc: &[f64]) -> Option<usize> {
    (0..candidates.len()).min_by(|&a, &b| {
        val_acc[b]
            .total_cmp(&val_acc[a])
            .then(candidates[a].tie_key().cmp(&candidates[b].tie_key()))
            .then(a.cmp(&b))
    })
}

/// Build a feature vector per candidate, pick the best on `val`, and
/// evaluate only the winner on `test` (unless `test_all` is set, in which
/// case every candidate's test accuracy is recorded as well, e.g. for layer
/// curves).
pub fn grid_search(
    candidates: &[GridCandidate<'_>],
    seeds: &SeedSet,
    val: &PairDataset,
    test: &PairDataset,
    test_all: bool,
) -> Result<GridResult> {
    if candidates.is_empty() {
        return Err(Error::Usage("empty configuration grid".into()));
    }
    let evaluated: Vec<(FeatureVector, EvalReport, Option<f64>)> = candidates
        .par_iter()
        .map(|c| {
            let fvec = build_feature_vector(seeds, &c.source, &c.cfg)?;
            let scorer = Scorer::new(&fvec, c.source, c.cfg)?;
            let val_report = evaluate(val, &scorer)?;
            let test_acc = if test_all {
                Some(evaluate(test, &scorer)?.accuracy)
            } else {
                None
            };
            Ok((fvec, val_report, test_acc))
        })
        .collect::<Result<_>>()?;

    let val_acc: Vec<f64> = evaluated.iter().map(|(_, r, _)| r.accuracy).collect();
    let winner = select_winner(candidates, &val_acc).expect("non-empty grid");
    let entries = candidates
        .iter()
        .zip(&evaluated)
        .map(|(c, (_, r, t))| GridEntry {
            label: c.label(),
            source_id: c.source.id(),
            config: c.cfg,
            val_accuracy: r.accuracy,
            test_accuracy: *t,
        })
        .collect();

    let (fvec, val_report, _) = evaluated.into_iter().nth(winner).expect("winner in range");
    let c = candidates[winner];
    let scorer = Scorer::new(&fvec, c.source, c.cfg)?;
    let test_report = evaluate(test, &scorer)?;
    Ok(GridResult {
        winner,
        entries,
        val_report,
        test_report,
        feature_vector: fvec,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SeedFold {
    pub held_out: usize,
    pub low: String,
    pub high: String,
    pub score_low: f64,
    pub score_high: f64,
    pub correct: bool,
}

/// Build from all seed pairs but one and check the held-out pair: scored as
/// `(low, high)`, the high side must win.
pub fn leave_one_out(seeds: &SeedSet, source: &EmbeddingSource<'_>, cfg: &ScoreConfig) -> Result<Vec<SeedFold>> {
    if seeds.len() < 2 {
        return Err(Error::Invalid("leave-one-out needs at least two seed pairs".into()));
    }
    (0..seeds.len())
        .map(|i| {
            let fv = build_feature_vector(&seeds.without(i)?, source, cfg)?;
            let scorer = Scorer::new(&fv, *source, *cfg)?;
            let pair = &seeds.pairs[i];
            let ex = PairExample::new(pair.low.as_str(), pair.high.as_str(), 1)?;
            let p = classify_pair(&ex, &scorer)?;
            Ok(SeedFold {
                held_out: i,
                low: pair.low.clone(),
                high: pair.high.clone(),
                score_low: p.score0,
                score_high: p.score1,
                correct: p.correct(),
            })
        })
        .collect()
}
