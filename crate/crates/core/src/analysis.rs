//! Report analyses: accuracy by text length, single-layer vs. aggregated
//! comparisons, layer curves and CSV accuracy matrices.

use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use crate::embedding_store::LayerSetting;
use crate::error::{Error, Result};
use crate::evaluation::{EvalReport, GridEntry};

pub const LENGTH_BINS: [&str; 7] = ["unigram", "bigram", "3-4", "5-9", "10-14", "15-19", ">20"];

/// Length bin of a mean token count. Lower bounds are inclusive, so a mean
/// of 1.5 is still `unigram` and 4.5 is `3-4`.
pub fn length_bin(mean_tokens: f64) -> &'static str {
    match mean_tokens {
        m if m < 2.0 => "unigram",
        m if m < 3.0 => "bigram",
        m if m < 5.0 => "3-4",
        m if m < 10.0 => "5-9",
        m if m < 15.0 => "10-14",
        m if m < 20.0 => "15-19",
        _ => ">20",
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinStats {
    pub bin: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BinReport {
    pub method: String,
    pub feature: String,
    pub dataset: String,
    pub total: usize,
    pub bins: Vec<BinStats>,
}

/// Accuracy per length bin. All seven bins are listed; empty ones have no
/// accuracy.
pub fn length_bin_analysis(report: &EvalReport) -> BinReport {
    let mut counts = [(0usize, 0usize); LENGTH_BINS.len()];
    for p in &report.predictions {
        let bin = length_bin(p.mean_length());
        let i = LENGTH_BINS.iter().position(|b| *b == bin).expect("known bin");
        counts[i].0 += 1;
        counts[i].1 += usize::from(p.correct());
    }
    BinReport {
        method: report.method.clone(),
        feature: report.feature.clone(),
        dataset: report.dataset.clone(),
        total: report.predictions.len(),
        bins: LENGTH_BINS
            .iter()
            .zip(counts)
            .map(|(bin, (n, correct))| BinStats {
                bin: bin.to_string(),
                n,
                correct,
                accuracy: (n > 0).then(|| correct as f64 / n as f64),
            })
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigDelta {
    pub config: String,
    pub single: f64,
    pub aggregated: f64,
    /// `aggregated - single` in accuracy points.
    pub delta_points: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SettingComparison {
    /// Share of configs (percent) where aggregation is at least as accurate.
    pub pct_2_beats_1: f64,
    /// Mean of `aggregated - single` in accuracy points.
    pub mean_acc_gain: f64,
    pub deltas: Vec<ConfigDelta>,
}

/// Compare accuracies (in `[0, 1]`) of two settings over the same configs.
pub fn compare_settings(
    single: &BTreeMap<String, f64>,
    aggregated: &BTreeMap<String, f64>,
) -> Result<SettingComparison> {
    if single.is_empty() {
        return Err(Error::Invalid("no configurations to compare".into()));
    }
    if !single.keys().eq(aggregated.keys()) {
        let only_single: Vec<&String> = single.keys().filter(|k| !aggregated.contains_key(*k)).collect();
        let only_agg: Vec<&String> = aggregated.keys().filter(|k| !single.contains_key(*k)).collect();
        return Err(Error::Invalid(format!(
            "config sets differ: only in first {only_single:?}, only in second {only_agg:?}"
        )));
    }
    let n = single.len() as f64;
    let deltas: Vec<ConfigDelta> = single
        .iter()
        .map(|(k, &s)| {
            let a = aggregated[k];
            ConfigDelta {
                config: k.clone(),
                single: s,
                aggregated: a,
                delta_points: (a - s) * 100.0,
            }
        })
        .collect();
    let wins = deltas.iter().filter(|d| d.aggregated >= d.single).count();
    let total: f64 = deltas.iter().map(|d| d.aggregated - d.single).sum();
    Ok(SettingComparison {
        pct_2_beats_1: wins as f64 * 100.0 / n,
        mean_acc_gain: total * 100.0 / n,
        deltas,
    })
}

/// Split grid entries by layer setting into single/aggregated maps keyed by
/// `source/layer/pooling/correction`, for [`compare_settings`].
pub fn settings_from_grid(
    entries: &[GridEntry],
    use_test: bool,
) -> (BTreeMap<String, f64>, BTreeMap<String, f64>) {
    let mut single = BTreeMap::new();
    let mut agg = BTreeMap::new();
    for e in entries {
        let acc = if use_test { e.test_accuracy } else { Some(e.val_accuracy) };
        let Some(acc) = acc else { continue };
        let Some(layers) = e.config.layers else { continue };
        let key = format!(
            "{}/{}/{}/{}",
            e.source_id,
            layers.layer(),
            e.config.pooling.as_str(),
            e.config.correction.as_str()
        );
        match layers {
            LayerSetting::Single(_) => single.insert(key, acc),
            LayerSetting::Aggregate(_) => agg.insert(key, acc),
        };
    }
    (single, agg)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CurvePoint {
    pub layer: usize,
    pub accuracy: f64,
}

/// Accuracy by layer, one series per `source/setting/pooling/correction`.
pub fn layer_curves(entries: &[GridEntry], use_test: bool) -> BTreeMap<String, Vec<CurvePoint>> {
    let mut curves: BTreeMap<String, Vec<CurvePoint>> = BTreeMap::new();
    for e in entries {
        let acc = if use_test { e.test_accuracy } else { Some(e.val_accuracy) };
        let (Some(acc), Some(layers)) = (acc, e.config.layers) else { continue };
        let setting = match layers {
            LayerSetting::Single(_) => "single",
            LayerSetting::Aggregate(_) => "agg",
        };
        let key = format!(
            "{}/{}/{}/{}",
            e.source_id,
            setting,
            e.config.pooling.as_str(),
            e.config.correction.as_str()
        );
        curves.entry(key).or_default().push(CurvePoint {
            layer: layers.layer(),
            accuracy: acc,
        });
    }
    for points in curves.values_mut() {
        points.sort_by_key(|p| p.layer);
    }
    curves
}

/// Write a config x dataset accuracy matrix (accuracy in percent, blank
/// when missing).
pub fn write_accuracy_matrix<W: Write>(
    w: W,
    cells: &BTreeMap<(String, String), f64>,
) -> Result<()> {
    let configs: Vec<&String> = {
        let mut v: Vec<&String> = cells.keys().map(|(c, _)| c).collect();
        v.dedup();
        v
    };
    let mut datasets: Vec<&String> = cells.keys().map(|(_, d)| d).collect();
    datasets.sort();
    datasets.dedup();

    let mut out = csv::Writer::from_writer(w);
    let mut header = vec!["config".to_string()];
    header.extend(datasets.iter().map(|d| d.to_string()));
    out.write_record(&header).map_err(csv_err)?;
    for c in configs {
        let mut row = vec![c.clone()];
        for d in &datasets {
            row.push(match cells.get(&(c.clone(), (*d).clone())) {
                Some(acc) => format!("{:.1}", acc * 100.0),
                None => String::new(),
            });
        }
        out.write_record(&row).map_err(csv_err)?;
    }
    out.flush().map_err(|e| Error::Invalid(format!("writing CSV: {e}")))?;
    Ok(())
}

fn csv_err(e: csv::Error) -> Error {
    Error::Invalid(format!("writing CSV: {e}"))
}
