//! Larger checks shared by the integration tests and the acceptance report.

use std::collections::BTreeMap;

use styleprobe::analysis::compare_settings;
use styleprobe::anisotropy::{Correction, FitGranularity, FitOptions};
use styleprobe::embedding_store::{LayerSetting, StaticEmbeddings};
use styleprobe::evaluation::{classify_pair, evaluate, leave_one_out, Scorer, SeedFold};
use styleprobe::scoring::{Pooling, ScoreConfig};
use styleprobe::source::EmbeddingSource;
use styleprobe::style_vectors::{build_feature_vector, SeedSet};

use super::naive::{NaiveModel, NaiveSource};
use super::synth::{store_from_rows, synth_dataset, synth_dump, synth_rows, synth_seeds};

pub struct Equivalence {
    pub configs: usize,
    pub scores: usize,
    pub max_abs_diff: f64,
}

pub const SCORE_TOL: f64 = 1e-6;

pub fn static_configs() -> Vec<ScoreConfig> {
    let mut out = Vec::new();
    for correction in [Correction::None, Correction::Abtt, Correction::Standardization, Correction::Rank] {
        for pooling in [Pooling::Mean, Pooling::Max] {
            for skip_oov in [false, true] {
                for (fit_granularity, centered) in [(FitGranularity::Token, false), (FitGranularity::Text, true)] {
                    if !correction.needs_fit() && fit_granularity == FitGranularity::Text {
                        continue;
                    }
                    out.push(
                        ScoreConfig {
                            pooling,
                            skip_oov,
                            fit_granularity,
                            fit: FitOptions { k_override: None, centered_projection: centered },
                            ..ScoreConfig::default()
                        }
                        .with_correction(correction),
                    );
                }
            }
        }
    }
    out
}

fn seed_pairs(seeds: &SeedSet) -> Vec<(String, String)> {
    seeds.pairs.iter().map(|p| (p.low.clone(), p.high.clone())).collect()
}

fn compare(
    source: EmbeddingSource<'_>,
    naive_source: &NaiveSource<'_>,
    configs: &[ScoreConfig],
    seeds: &SeedSet,
    ds: &styleprobe::dataset::PairDataset,
    acc: &mut Equivalence,
) -> Result<(), String> {
    for cfg in configs {
        let fvec = build_feature_vector(seeds, &source, cfg).map_err(|e| e.to_string())?;
        let scorer = Scorer::new(&fvec, source, *cfg).map_err(|e| e.to_string())?;
        let naive = NaiveModel::build(naive_source, &seed_pairs(seeds), *cfg);
        for (j, (a, b)) in fvec.values.iter().zip(&naive.dvec).enumerate() {
            if (a - b).abs() > 1e-12 {
                return Err(format!("{}: dvec[{j}] {a} vs {b}", cfg.label()));
            }
        }
        for (i, ex) in ds.examples.iter().enumerate() {
            let p = classify_pair(ex, &scorer).map_err(|e| e.to_string())?;
            let (s0, s1, pred) = naive.classify(&ex.text0, &ex.text1);
            for (lib, reference) in [(p.score0, s0), (p.score1, s1)] {
                let diff = (lib - reference).abs();
                acc.max_abs_diff = acc.max_abs_diff.max(diff);
                if diff > SCORE_TOL {
                    return Err(format!("{} example {i}: score {lib} vs reference {reference}", cfg.label()));
                }
            }
            acc.scores += 2;
            if p.predicted != pred {
                return Err(format!(
                    "{} example {i}: prediction {} vs reference {pred} (scores {} / {})",
                    cfg.label(),
                    p.predicted,
                    p.score0,
                    p.score1
                ));
            }
        }
        acc.configs += 1;
    }
    Ok(())
}

/// Full chain on a 10-d, 50-word static space against the naive reference.
pub fn static_equivalence() -> Result<Equivalence, String> {
    let rows = synth_rows(11, 10);
    let store = store_from_rows(&rows);
    let naive = NaiveSource::from_rows(&rows, true);
    let seeds = synth_seeds();
    let ds = synth_dataset(12, 60);
    let mut acc = Equivalence { configs: 0, scores: 0, max_abs_diff: 0.0 };
    compare(EmbeddingSource::Static(&store), &naive, &static_configs(), &seeds, &ds, &mut acc)?;

    let no_fallback = store_from_rows(&rows).with_case_fallback(false);
    let naive = NaiveSource::from_rows(&rows, false);
    compare(EmbeddingSource::Static(&no_fallback), &naive, &static_configs()[..2], &seeds, &ds, &mut acc)?;
    Ok(acc)
}

/// The same comparison on a synthetic contextual dump with split subtokens.
pub fn contextual_equivalence() -> Result<Equivalence, String> {
    let seeds = synth_seeds();
    let ds = synth_dataset(13, 40);
    let mut texts: Vec<String> = seeds.pairs.iter().flat_map(|p| [p.low.clone(), p.high.clone()]).collect();
    texts.extend(ds.examples.iter().flat_map(|e| [e.text0.clone(), e.text1.clone()]));
    let dump = synth_dump(14, &texts, 3, 8);
    let naive = NaiveSource::Dump(&dump);
    let mut configs = Vec::new();
    for layers in [LayerSetting::Single(0), LayerSetting::Single(2), LayerSetting::Aggregate(3)] {
        for cfg in static_configs() {
            if cfg.skip_oov {
                continue;
            }
            configs.push(ScoreConfig { layers: Some(layers), ..cfg });
        }
    }
    let mut acc = Equivalence { configs: 0, scores: 0, max_abs_diff: 0.0 };
    compare(EmbeddingSource::Contextual(&dump), &naive, &configs, &seeds, &ds, &mut acc)?;
    Ok(acc)
}

/// 20 synthetic configs with hand-computed percentage and gain.
pub fn compare_settings_synthetic() -> Result<(), String> {
    // Deltas (agg - single) in tenths of a point: ten configs where
    // aggregation wins or ties, ten where it loses.
    let deltas_tenths: [i32; 20] = [10, 20, 0, 5, 0, 30, 15, 25, 0, 40, -10, -20, -5, -15, -30, -5, -10, -25, -35, -20];
    let mut single = BTreeMap::new();
    let mut agg = BTreeMap::new();
    for (i, d) in deltas_tenths.iter().enumerate() {
        let s = 0.5 + i as f64 / 100.0;
        single.insert(format!("model{}/layer{}", i / 5, i % 5), s);
        agg.insert(format!("model{}/layer{}", i / 5, i % 5), s + *d as f64 / 1000.0);
    }
    let c = compare_settings(&single, &agg).map_err(|e| e.to_string())?;
    // 10 of 20 configs have delta >= 0 -> 50%. Sum of deltas = 145 - 175 =
    // -30 tenths of a point, i.e. -3.0 points over 20 configs = -0.15.
    if c.pct_2_beats_1 != 50.0 {
        return Err(format!("pct {} != 50", c.pct_2_beats_1));
    }
    if (c.mean_acc_gain - (-0.15)).abs() > 1e-9 {
        return Err(format!("gain {} != -0.15", c.mean_acc_gain));
    }
    if c.deltas.len() != 20 {
        return Err("missing deltas".into());
    }
    Ok(())
}

/// Evaluate one static configuration twice and compare the two settings.
pub fn static_vs_static(store: &StaticEmbeddings, seeds: &SeedSet, ds: &styleprobe::dataset::PairDataset) -> Result<(f64, f64), String> {
    let src = EmbeddingSource::Static(store);
    let mut single = BTreeMap::new();
    let mut agg = BTreeMap::new();
    for pooling in [Pooling::Mean, Pooling::Max] {
        for correction in [Correction::None, Correction::Standardization, Correction::Rank] {
            let cfg = ScoreConfig { pooling, ..ScoreConfig::default() }.with_correction(correction);
            let fv = build_feature_vector(seeds, &src, &cfg).map_err(|e| e.to_string())?;
            let scorer = Scorer::new(&fv, src, cfg).map_err(|e| e.to_string())?;
            single.insert(cfg.label(), evaluate(ds, &scorer).map_err(|e| e.to_string())?.accuracy);
            agg.insert(cfg.label(), evaluate(ds, &scorer).map_err(|e| e.to_string())?.accuracy);
        }
    }
    let c = compare_settings(&single, &agg).map_err(|e| e.to_string())?;
    Ok((c.pct_2_beats_1, c.mean_acc_gain))
}

pub fn seeds_path(feature: &str) -> std::path::PathBuf {
    std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join(format!("../../data/seeds/{feature}.tsv"))
}

/// Library leave-one-out vs. the naive reference on the shipped complexity
/// seeds over a synthetic space. Returns the number of correct folds.
pub fn synthetic_loo() -> Result<usize, String> {
    let rows = synth_rows(11, 10);
    let store = store_from_rows(&rows);
    let naive = NaiveSource::from_rows(&rows, true);
    let seeds = styleprobe::style_vectors::load_seed_set(&seeds_path("complexity"), "complexity").map_err(|e| e.to_string())?;
    let mut correct = 0;
    for pooling in [Pooling::Mean, Pooling::Max] {
        let cfg = ScoreConfig { pooling, ..ScoreConfig::default() };
        let folds = leave_one_out(&seeds, &EmbeddingSource::Static(&store), &cfg).map_err(|e| e.to_string())?;
        if folds.len() != seeds.len() {
            return Err(format!("{} folds for {} pairs", folds.len(), seeds.len()));
        }
        for f in &folds {
            let rest: Vec<(String, String)> = seeds
                .pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| *i != f.held_out)
                .map(|(_, p)| (p.low.clone(), p.high.clone()))
                .collect();
            let model = NaiveModel::build(&naive, &rest, cfg);
            let (sl, sh, pred) = model.classify(&f.low, &f.high);
            if (sl - f.score_low).abs() > SCORE_TOL || (sh - f.score_high).abs() > SCORE_TOL || (pred == 1) != f.correct {
                return Err(format!("fold {} ({}) differs from the naive reference", f.held_out, pooling.as_str()));
            }
            if pooling == Pooling::Mean {
                correct += usize::from(f.correct);
            }
        }
    }
    Ok(correct)
}

/// Fold-for-fold comparison against a record written by
/// `scripts/loo_oracle.py`. Decisions must agree exactly.
pub fn loo_matches_record(folds: &[SeedFold], record: &serde_json::Value, tol: f64) -> Result<(), String> {
    let rec = record["folds"].as_array().ok_or("record has no folds")?;
    if rec.len() != folds.len() {
        return Err(format!("record has {} folds, library {}", rec.len(), folds.len()));
    }
    for (f, r) in folds.iter().zip(rec) {
        let (Some(sl), Some(sh), Some(ok)) = (r["score_low"].as_f64(), r["score_high"].as_f64(), r["correct"].as_bool()) else {
            return Err(format!("malformed fold {}", f.held_out));
        };
        if r["low"] != f.low.as_str() || r["high"] != f.high.as_str() {
            return Err(format!("fold {} holds out a different pair", f.held_out));
        }
        if ok != f.correct {
            return Err(format!("fold {} ({} / {}): record {ok}, library {}", f.held_out, f.low, f.high, f.correct));
        }
        if (sl - f.score_low).abs() > tol || (sh - f.score_high).abs() > tol {
            return Err(format!("fold {} scores differ beyond {tol}", f.held_out));
        }
    }
    Ok(())
}

/// Run the Python oracle script; `None` when no interpreter is available.
pub fn python_loo(embeddings: &std::path::Path, seeds: &std::path::Path, pooling: Pooling) -> Option<Result<serde_json::Value, String>> {
    let script = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../scripts/loo_oracle.py");
    let out = std::process::Command::new("python3")
        .arg(script)
        .arg("--embeddings")
        .arg(embeddings)
        .arg("--seeds")
        .arg(seeds)
        .args(["--pooling", pooling.as_str()])
        .output()
        .ok()?;
    if !out.status.success() {
        return Some(Err(String::from_utf8_lossy(&out.stderr).into_owned()));
    }
    Some(serde_json::from_slice(&out.stdout).map_err(|e| e.to_string()))
}
