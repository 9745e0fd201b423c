//! Property checks, runnable from `#[test]`s and from the acceptance
//! report. Each returns the first counterexample as a string.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use styleprobe::anisotropy::{fit_correction, rank_transform, Correction, FitOptions};
use styleprobe::dataset::{balance_labels, split, PairDataset, PairExample, SplitRatios};
use styleprobe::embedding_store::{read_layer_dump, StaticEmbeddings};
use styleprobe::evaluation::{evaluate, Scorer};
use styleprobe::scoring::{pool, score_text, similarity, Metric, Pooling, ScoreConfig};
use styleprobe::source::EmbeddingSource;
use styleprobe::style_vectors::{build_feature_vector, SeedPair, SeedSet};

use super::synth::{synth_dataset, synth_dump, VOCAB};

pub type Check = fn(u32) -> Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn report<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> Result<(), String> {
    r.map_err(|e| e.to_string())
}

const DIM: usize = 6;
const WORDS: usize = 12;

/// A random store over the first `WORDS` vocabulary entries.
fn store_strategy() -> impl Strategy<Value = StaticEmbeddings> {
    prop::collection::vec(prop::collection::vec(-1.0f32..1.0, DIM), WORDS).prop_map(|rows| {
        StaticEmbeddings::from_rows(VOCAB.iter().take(WORDS).map(|w| w.to_string()).zip(rows)).unwrap()
    })
}

fn phrase() -> impl Strategy<Value = String> {
    prop::collection::vec(0..WORDS, 1..4).prop_map(|ix| ix.iter().map(|&i| VOCAB[i]).collect::<Vec<_>>().join(" "))
}

fn seeds_strategy() -> impl Strategy<Value = SeedSet> {
    prop::collection::vec((phrase(), phrase()), 1..6).prop_filter_map("valid seed set", |pairs| {
        let mut seen = std::collections::HashSet::new();
        let pairs: Vec<SeedPair> = pairs
            .into_iter()
            .filter(|(l, h)| l != h && seen.insert((l.clone(), h.clone())))
            .map(|(l, h)| SeedPair::new(l, h).unwrap())
            .collect();
        SeedSet::new("f", pairs).ok()
    })
}

fn vector(len: std::ops::Range<usize>) -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-10.0f64..10.0, len)
}

fn close(a: &[f64], b: &[f64], tol: f64) -> Result<(), TestCaseError> {
    for (x, y) in a.iter().zip(b) {
        prop_assert!((x - y).abs() <= tol, "{x} vs {y}");
    }
    prop_assert_eq!(a.len(), b.len());
    Ok(())
}

/// Swapping every seed pair negates the feature vector.
pub fn antisymmetry(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(store_strategy(), seeds_strategy()), |(store, seeds)| {
        let src = EmbeddingSource::Static(&store);
        let cfg = ScoreConfig::default();
        let swapped = SeedSet::new("f", seeds.pairs.iter().map(SeedPair::swapped).collect()).unwrap();
        match (build_feature_vector(&seeds, &src, &cfg), build_feature_vector(&swapped, &src, &cfg)) {
            (Ok(a), Ok(b)) => close(&a.values, &b.negated().values, 1e-12),
            (Err(_), Err(_)) => Ok(()),
            _ => Err(TestCaseError::fail("only one direction failed")),
        }
    }))
}

/// Cosine lies in [-1, 1]; a zero vector gives 0.
pub fn cosine_bounds(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(1usize..20).prop_flat_map(|n| (vector(n..n + 1), vector(n..n + 1))), |(x, y)| {
        let s = similarity(&x, &y, Metric::Cosine).unwrap();
        prop_assert!((-1.0..=1.0).contains(&s));
        prop_assert_eq!(similarity(&vec![0.0; x.len()], &y, Metric::Cosine).unwrap(), 0.0);
        prop_assert_eq!(similarity(&x, &vec![0.0; x.len()], Metric::Cosine).unwrap(), 0.0);
        Ok(())
    }))
}

/// Max pooling never scores a text below mean pooling.
pub fn max_at_least_mean(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(store_strategy(), seeds_strategy(), phrase(), any::<bool>()), |(store, seeds, text, skip)| {
        let src = EmbeddingSource::Static(&store);
        let mean_cfg = ScoreConfig { skip_oov: skip, ..ScoreConfig::default() };
        let max_cfg = ScoreConfig { pooling: Pooling::Max, ..mean_cfg };
        let Ok(fv) = build_feature_vector(&seeds, &src, &mean_cfg) else { return Ok(()) };
        let mean = score_text(&text, &fv, &src, &mean_cfg).unwrap().value;
        let max = score_text(&text, &fv, &src, &max_cfg).unwrap().value;
        prop_assert!(max >= mean - 1e-12, "max {max} < mean {mean}");
        Ok(())
    }))?;
    report(runner(cases).run(&vector(1..30), |v| {
        prop_assert!(pool(&v, Pooling::Max).unwrap() >= pool(&v, Pooling::Mean).unwrap() - 1e-12);
        Ok(())
    }))
}

/// Scaling every embedding by c > 0 leaves scores and decisions unchanged.
pub fn positive_scale_invariance(cases: u32) -> Result<(), String> {
    let ds = synth_dataset(3, 30);
    let ds = PairDataset::new(
        "f",
        ds.examples
            .into_iter()
            .filter_map(|e| {
                let keep = |t: &str| t.split_whitespace().filter(|w| VOCAB[..WORDS].contains(w)).count() > 0;
                (keep(&e.text0) && keep(&e.text1)).then_some(e)
            })
            .collect(),
    );
    report(runner(cases).run(&(store_strategy(), seeds_strategy(), 0.01f32..100.0), |(store, seeds, c)| {
        let scaled = store.scaled(c);
        let cfg = ScoreConfig::default();
        let (a, b) = (EmbeddingSource::Static(&store), EmbeddingSource::Static(&scaled));
        let (Ok(fa), Ok(fb)) = (build_feature_vector(&seeds, &a, &cfg), build_feature_vector(&seeds, &b, &cfg)) else {
            return Ok(());
        };
        for e in &ds.examples {
            for t in [&e.text0, &e.text1] {
                let sa = score_text(t, &fa, &a, &cfg).unwrap().value;
                let sb = score_text(t, &fb, &b, &cfg).unwrap().value;
                prop_assert!((sa - sb).abs() < 1e-6, "{sa} vs {sb}");
            }
        }
        let ra = evaluate(&ds, &Scorer::new(&fa, a, cfg).unwrap()).unwrap();
        let rb = evaluate(&ds, &Scorer::new(&fb, b, cfg).unwrap()).unwrap();
        // Scores may differ in the last bits; only near-ties may flip.
        for (pa, pb) in ra.predictions.iter().zip(&rb.predictions) {
            if (pa.score0 - pa.score1).abs() > 1e-6 {
                prop_assert_eq!(pa.predicted, pb.predicted);
            }
        }
        Ok(())
    }))
}

fn samples_strategy() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (2usize..8, 2usize..30).prop_flat_map(|(d, n)| prop::collection::vec(vector(d..d + 1), n))
}

/// Standardized fit samples have mean 0 and std 1 in every unclamped dimension.
pub fn standardization_moments(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&samples_strategy(), |samples| {
        let stats = fit_correction(&samples, Correction::Standardization, FitOptions::default()).unwrap();
        let out: Vec<Vec<f64>> = samples.iter().map(|s| stats.apply(s).unwrap()).collect();
        let n = out.len() as f64;
        for j in 0..stats.dim {
            let m = out.iter().map(|v| v[j]).sum::<f64>() / n;
            prop_assert!(m.abs() < 1e-6, "mean {m}");
            if stats.sigma[j] > 1e-8 {
                let sd = (out.iter().map(|v| (v[j] - m).powi(2)).sum::<f64>() / n).sqrt();
                prop_assert!((sd - 1.0).abs() < 1e-6, "std {sd}");
            }
        }
        Ok(())
    }))
}

/// After abtt, the projection of any vector on a removed component is the
/// constant `-u . mu`.
pub fn abtt_constant_projection(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&samples_strategy(), |samples| {
        let Ok(stats) = fit_correction(&samples, Correction::Abtt, FitOptions::default()) else {
            return Ok(());
        };
        let constant = vec![3.0; stats.dim];
        let probes = samples.iter().chain(std::iter::once(&constant));
        for x in probes {
            let y = stats.apply(x).unwrap();
            for u in &stats.components {
                let proj: f64 = u.iter().zip(&y).map(|(a, b)| a * b).sum();
                let expected: f64 = -u.iter().zip(&stats.mu).map(|(a, b)| a * b).sum::<f64>();
                prop_assert!((proj - expected).abs() < 1e-6, "{proj} vs {expected}");
            }
        }
        Ok(())
    }))
}

/// Average-tie ranks of d values sum to d(d+1)/2.
pub fn rank_sum(cases: u32) -> Result<(), String> {
    let values = prop::collection::vec(prop_oneof![(-5i32..5).prop_map(f64::from), -10.0f64..10.0], 1..60);
    report(runner(cases).run(&values, |x| {
        let d = x.len() as f64;
        let s: f64 = rank_transform(&x).iter().sum();
        prop_assert!((s - d * (d + 1.0) / 2.0).abs() < 1e-9);
        Ok(())
    }))
}

/// Spearman similarity is unchanged by a strictly increasing transform.
pub fn spearman_monotone(cases: u32) -> Result<(), String> {
    let ints = |n| prop::collection::vec((-6i32..6).prop_map(f64::from), n..n + 1);
    report(runner(cases).run(&(2usize..30).prop_flat_map(move |n| (ints(n), vector(n..n + 1))), |(x, y)| {
        let fx: Vec<f64> = x.iter().map(|v| v * v * v + 2.0 * v).collect();
        let a = similarity(&x, &y, Metric::Spearman).unwrap();
        let b = similarity(&fx, &y, Metric::Spearman).unwrap();
        prop_assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        Ok(())
    }))
}

fn dataset_strategy() -> impl Strategy<Value = PairDataset> {
    prop::collection::vec(("[a-z]{1,6}", "[a-z]{1,6}", 0u8..2), 1..80).prop_map(|rows| {
        PairDataset::new(
            "f",
            rows.into_iter().filter_map(|(a, b, g)| PairExample::new(a, b, g).ok()).collect(),
        )
    })
}

/// Balancing and splitting are pure functions of the seed; balancing keeps
/// the unordered pairs; splits partition the input.
pub fn balance_split_determinism(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(dataset_strategy(), any::<u64>()), |(ds, seed)| {
        let a = balance_labels(&ds, seed);
        prop_assert_eq!(&a, &balance_labels(&ds, seed));
        for (x, y) in ds.examples.iter().zip(&a.examples) {
            prop_assert!(x == y || x.swapped() == *y);
        }
        let ratios = SplitRatios::parse("8:1:1").unwrap();
        let s1 = split(&a, ratios, seed, true).unwrap();
        let s2 = split(&a, ratios, seed, true).unwrap();
        prop_assert_eq!(&s1, &s2);
        let mut all: Vec<PairExample> = s1.0.examples.iter().chain(&s1.1.examples).chain(&s1.2.examples).cloned().collect();
        let mut orig = a.examples.clone();
        all.sort_by(|x, y| (&x.text0, &x.text1, x.gold).cmp(&(&y.text0, &y.text1, y.gold)));
        orig.sort_by(|x, y| (&x.text0, &x.text1, x.gold).cmp(&(&y.text0, &y.text1, y.gold)));
        prop_assert_eq!(all, orig);
        Ok(())
    }))
}

/// An n-pair vector is the mean of the n single-pair vectors, and seed
/// order does not matter.
pub fn pair_averaging(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(store_strategy(), seeds_strategy(), any::<u64>()), |(store, seeds, perm_seed)| {
        let src = EmbeddingSource::Static(&store);
        let cfg = ScoreConfig::default();
        let Ok(all) = build_feature_vector(&seeds, &src, &cfg) else { return Ok(()) };
        let mut mean = vec![0.0; store.dim()];
        for p in &seeds.pairs {
            let one = SeedSet::new("f", vec![p.clone()]).unwrap();
            // A single pair may embed to the zero vector.
            let v = build_feature_vector(&one, &src, &cfg).map(|f| f.values).unwrap_or_else(|_| vec![0.0; store.dim()]);
            for (m, x) in mean.iter_mut().zip(v) {
                *m += x / seeds.len() as f64;
            }
        }
        close(&all.values, &mean, 1e-9)?;

        let mut pairs = seeds.pairs.clone();
        styleprobe::rng::SeededRng::new(perm_seed, styleprobe::rng::Stream::Split).shuffle(&mut pairs);
        let permuted = build_feature_vector(&SeedSet::new("f", pairs).unwrap(), &src, &cfg).unwrap();
        close(&all.values, &permuted.values, 1e-6)
    }))
}

/// Scaling the store scales the feature vector.
pub fn store_linearity(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(store_strategy(), seeds_strategy(), 0.1f32..10.0), |(store, seeds, c)| {
        let cfg = ScoreConfig::default();
        let scaled = store.scaled(c);
        let (Ok(a), Ok(b)) = (
            build_feature_vector(&seeds, &EmbeddingSource::Static(&store), &cfg),
            build_feature_vector(&seeds, &EmbeddingSource::Static(&scaled), &cfg),
        ) else {
            return Ok(());
        };
        let expected: Vec<f64> = a.values.iter().map(|v| v * c as f64).collect();
        close(&b.values, &expected, 1e-5)
    }))
}

/// Negating the feature vector maps accuracy a to 1 - a without ties, and
/// accuracy does not depend on dataset order.
pub fn negation_and_permutation(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(store_strategy(), seeds_strategy(), any::<u64>()), |(store, seeds, perm_seed)| {
        let src = EmbeddingSource::Static(&store);
        let cfg = ScoreConfig::default();
        let Ok(fv) = build_feature_vector(&seeds, &src, &cfg) else { return Ok(()) };
        let ds = synth_dataset(perm_seed % 7, 25);
        let r = evaluate(&ds, &Scorer::new(&fv, src, cfg).unwrap()).unwrap();
        let neg = fv.negated();
        let rn = evaluate(&ds, &Scorer::new(&neg, src, cfg).unwrap()).unwrap();
        if r.tie_count == 0 && rn.tie_count == 0 {
            prop_assert!((r.accuracy + rn.accuracy - 1.0).abs() < 1e-12);
        }
        let mut shuffled = ds.clone();
        styleprobe::rng::SeededRng::new(perm_seed, styleprobe::rng::Stream::Split).shuffle(&mut shuffled.examples);
        let rp = evaluate(&shuffled, &Scorer::new(&fv, src, cfg).unwrap()).unwrap();
        prop_assert_eq!(r.accuracy, rp.accuracy);
        Ok(())
    }))
}

/// Writing and reading a dump reproduces it exactly.
pub fn led_roundtrip(cases: u32) -> Result<(), String> {
    report(runner(cases).run(&(any::<u64>(), 0usize..4, 1usize..6), |(seed, layers, dim)| {
        let mut rng = super::synth::Rng::new(seed);
        let texts: Vec<String> = (0..3).map(|_| super::synth::synth_text(&mut rng)).collect();
        let dump = synth_dump(seed, &texts, layers, dim);
        let mut buf = Vec::new();
        dump.write(&mut buf).unwrap();
        let back = read_layer_dump(std::io::Cursor::new(&buf), std::path::Path::new("mem.led")).unwrap();
        prop_assert_eq!(&back.header, &dump.header);
        prop_assert_eq!(back.entries(), dump.entries());
        Ok(())
    }))
}

/// The checks that make up the acceptance property suite.
pub const SUITE: [(&str, Check); 9] = [
    ("antisymmetry of build_feature_vector", antisymmetry),
    ("cosine bounds and zero-norm convention", cosine_bounds),
    ("max >= mean pooling", max_at_least_mean),
    ("positive-scale decision invariance", positive_scale_invariance),
    ("standardization mean/std on seed tokens (1e-6)", standardization_moments),
    ("abtt constant-projection identity (1e-6)", abtt_constant_projection),
    ("rank-sum identity d(d+1)/2", rank_sum),
    ("spearman monotone invariance", spearman_monotone),
    ("balance_labels/split determinism", balance_split_determinism),
];

pub const EXTRA: [(&str, Check); 4] = [
    ("n-pair vector = mean of single-pair vectors; seed permutation", pair_averaging),
    ("store linearity", store_linearity),
    ("negation and dataset permutation", negation_and_permutation),
    ("LED write/read roundtrip", led_roundtrip),
];
