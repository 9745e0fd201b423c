//! Deliberately naive reference for the scoring chain, written without the
//! library's helpers: its own tokenizer, lookup, statistics (power
//! iteration instead of SVD), O(n^2) ranks and explicit loops.

use std::collections::HashMap;

use styleprobe::anisotropy::{Correction, FitGranularity};
use styleprobe::embedding_store::{LayerDump, LayerSetting};
use styleprobe::scoring::{Metric, Pooling, ScoreConfig};

pub fn naive_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let cs: Vec<char> = chunk.chars().collect();
        let mut cur = String::new();
        for i in 0..cs.len() {
            let c = cs[i];
            let joiner = "-'\u{2019}\u{2010}\u{2011}".contains(c);
            let glued = joiner && i > 0 && i + 1 < cs.len() && cs[i - 1].is_alphanumeric() && cs[i + 1].is_alphanumeric();
            if c.is_alphanumeric() || glued {
                cur.push(c);
            } else {
                if !cur.is_empty() {
                    out.push(std::mem::take(&mut cur));
                }
                out.push(c.to_string());
            }
        }
        if !cur.is_empty() {
            out.push(cur);
        }
    }
    out
}

/// A word as its subtoken vectors plus an OOV flag.
type Word = (Vec<Vec<f64>>, bool);

pub enum NaiveSource<'a> {
    Static { map: HashMap<String, Vec<f64>>, dim: usize, case_fallback: bool },
    Dump(&'a LayerDump),
}

impl<'a> NaiveSource<'a> {
    pub fn from_rows(rows: &[(String, Vec<f32>)], case_fallback: bool) -> Self {
        let dim = rows[0].1.len();
        let map = rows
            .iter()
            .map(|(w, v)| (w.clone(), v.iter().map(|x| *x as f64).collect()))
            .collect();
        NaiveSource::Static { map, dim, case_fallback }
    }

    fn dim(&self) -> usize {
        match self {
            NaiveSource::Static { dim, .. } => *dim,
            NaiveSource::Dump(d) => d.dim(),
        }
    }

    fn words(&self, text: &str, layers: Option<LayerSetting>) -> Vec<Word> {
        match self {
            NaiveSource::Static { map, dim, case_fallback } => naive_tokens(text)
                .into_iter()
                .map(|t| {
                    if let Some(v) = map.get(&t) {
                        (vec![v.clone()], false)
                    } else if let Some(v) = map.get(&t.to_lowercase()).filter(|_| *case_fallback) {
                        (vec![v.clone()], false)
                    } else {
                        (vec![vec![0.0; *dim]], true)
                    }
                })
                .collect(),
            NaiveSource::Dump(dump) => {
                let entry = dump.entries().iter().find(|e| e.text == text).expect("text in dump");
                let (lo, hi) = match layers.expect("layer setting") {
                    LayerSetting::Single(l) => (l, l),
                    LayerSetting::Aggregate(l) => (0, l),
                };
                let d = dump.dim();
                let mut words: Vec<Word> = vec![(Vec::new(), false); entry.words.len()];
                for (s, sub) in entry.subtokens.iter().enumerate() {
                    let mut v = vec![0.0; d];
                    for layer in lo..=hi {
                        for j in 0..d {
                            v[j] += entry.vectors[[layer, s, j]] as f64;
                        }
                    }
                    let count = (hi - lo + 1) as f64;
                    // Layer means are taken in f32 by the library.
                    let v: Vec<f64> = v.iter().map(|x| (x / count) as f32 as f64).collect();
                    words[sub.3].0.push(v);
                }
                words
            }
        }
    }
}

fn mean(vs: &[Vec<f64>], d: usize) -> Vec<f64> {
    let mut m = vec![0.0; d];
    for v in vs {
        for j in 0..d {
            m[j] += v[j];
        }
    }
    m.iter().map(|x| x / vs.len() as f64).collect()
}

pub struct NaiveCorrection {
    method: Correction,
    mu: Vec<f64>,
    sigma: Vec<f64>,
    comps: Vec<Vec<f64>>,
    centered: bool,
}

fn top_eigenvectors(samples: &[Vec<f64>], mu: &[f64], k: usize) -> Vec<Vec<f64>> {
    let d = mu.len();
    let mut cov = vec![vec![0.0; d]; d];
    for s in samples {
        for a in 0..d {
            for b in 0..d {
                cov[a][b] += (s[a] - mu[a]) * (s[b] - mu[b]);
            }
        }
    }
    let mut comps: Vec<Vec<f64>> = Vec::new();
    for c in 0..k {
        let mut v: Vec<f64> = (0..d).map(|j| 1.0 + (j as f64 + c as f64) * 0.37).collect();
        let mut lambda = 0.0;
        for _ in 0..5000 {
            let mut w = vec![0.0; d];
            for a in 0..d {
                for b in 0..d {
                    w[a] += cov[a][b] * v[b];
                }
            }
            for u in &comps {
                let p: f64 = (0..d).map(|j| w[j] * u[j]).sum();
                for j in 0..d {
                    w[j] -= p * u[j];
                }
            }
            let norm = w.iter().map(|x| x * x).sum::<f64>().sqrt();
            lambda = norm;
            v = w.iter().map(|x| x / norm).collect();
        }
        let _ = lambda;
        let big = (0..d).max_by(|&a, &b| v[a].abs().total_cmp(&v[b].abs())).unwrap();
        if v[big] < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        comps.push(v);
    }
    comps
}

impl NaiveCorrection {
    pub fn fit(samples: &[Vec<f64>], cfg: &ScoreConfig) -> Self {
        let d = samples[0].len();
        let n = samples.len() as f64;
        let mu = mean(samples, d);
        let mut sigma = vec![0.0; d];
        for s in samples {
            for j in 0..d {
                sigma[j] += (s[j] - mu[j]).powi(2) / n;
            }
        }
        let sigma = sigma.iter().map(|v| v.sqrt().max(1e-8)).collect();
        let comps = if cfg.correction == Correction::Abtt {
            let k = cfg.fit.k_override.unwrap_or_else(|| {
                let k = (d as f64 / 100.0).round() as usize;
                k.max(1).min(d.min(samples.len() - 1).max(1))
            });
            top_eigenvectors(samples, &mu, k)
        } else {
            Vec::new()
        };
        NaiveCorrection {
            method: cfg.correction,
            mu,
            sigma,
            comps,
            centered: cfg.fit.centered_projection,
        }
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let d = x.len();
        match self.method {
            Correction::Standardization => (0..d).map(|j| (x[j] - self.mu[j]) / self.sigma[j]).collect(),
            Correction::Abtt => {
                let mut out: Vec<f64> = (0..d).map(|j| x[j] - self.mu[j]).collect();
                for u in &self.comps {
                    let p: f64 = if self.centered {
                        (0..d).map(|j| u[j] * (x[j] - self.mu[j])).sum()
                    } else {
                        (0..d).map(|j| u[j] * x[j]).sum()
                    };
                    for j in 0..d {
                        out[j] -= p * u[j];
                    }
                }
                out
            }
            _ => x.to_vec(),
        }
    }
}

pub fn naive_ranks(x: &[f64]) -> Vec<f64> {
    x.iter()
        .map(|&v| {
            let less = x.iter().filter(|&&o| o < v).count() as f64;
            let equal = x.iter().filter(|&&o| o == v).count() as f64;
            less + (equal + 1.0) / 2.0
        })
        .collect()
}

fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..x.len() {
        sxy += (x[i] - mx) * (y[i] - my);
        sxx += (x[i] - mx).powi(2);
        syy += (y[i] - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        0.0
    } else {
        sxy / (sxx * syy).sqrt()
    }
}

pub fn naive_similarity(x: &[f64], d: &[f64], metric: Metric) -> f64 {
    match metric {
        Metric::Cosine => {
            let dot: f64 = x.iter().zip(d).map(|(a, b)| a * b).sum();
            let nx = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            let nd = d.iter().map(|a| a * a).sum::<f64>().sqrt();
            if nx == 0.0 || nd == 0.0 {
                0.0
            } else {
                (dot / (nx * nd)).clamp(-1.0, 1.0)
            }
        }
        Metric::Spearman => pearson(&naive_ranks(x), &naive_ranks(d)),
    }
}

fn naive_pool(v: &[f64], p: Pooling) -> f64 {
    match p {
        Pooling::Mean => v.iter().sum::<f64>() / v.len() as f64,
        Pooling::Max => v.iter().cloned().fold(f64::MIN, f64::max),
    }
}

pub struct NaiveModel<'a> {
    pub source: &'a NaiveSource<'a>,
    pub cfg: ScoreConfig,
    pub dvec: Vec<f64>,
    pub correction: Option<NaiveCorrection>,
}

impl<'a> NaiveModel<'a> {
    pub fn build(source: &'a NaiveSource<'a>, pairs: &[(String, String)], cfg: ScoreConfig) -> Self {
        let d = source.dim();
        let tokens = |t: &str| -> Vec<Vec<f64>> { source.words(t, cfg.layers).into_iter().flat_map(|w| w.0).collect() };
        let mut samples = Vec::new();
        for (low, high) in pairs {
            for t in [low, high] {
                match cfg.fit_granularity {
                    FitGranularity::Token => samples.extend(tokens(t)),
                    FitGranularity::Text => samples.push(mean(&tokens(t), d)),
                }
            }
        }
        let correction = matches!(cfg.correction, Correction::Abtt | Correction::Standardization)
            .then(|| NaiveCorrection::fit(&samples, &cfg));
        // Seed tokens are corrected before averaging.
        let embed = |t: &str| {
            let toks: Vec<Vec<f64>> = tokens(t)
                .iter()
                .map(|v| correction.as_ref().map_or_else(|| v.clone(), |c| c.apply(v)))
                .collect();
            mean(&toks, d)
        };
        let diffs: Vec<Vec<f64>> = pairs
            .iter()
            .map(|(low, high)| {
                let (el, eh) = (embed(low), embed(high));
                (0..d).map(|j| eh[j] - el[j]).collect()
            })
            .collect();
        let dvec = mean(&diffs, d);
        NaiveModel { source, cfg, dvec, correction }
    }

    pub fn score(&self, text: &str) -> f64 {
        let mut word_scores = Vec::new();
        for (vectors, oov) in self.source.words(text, self.cfg.layers) {
            let scores: Vec<f64> = vectors
                .iter()
                .map(|v| {
                    let v = match &self.correction {
                        Some(c) => c.apply(v),
                        None => v.clone(),
                    };
                    naive_similarity(&v, &self.dvec, self.cfg.metric)
                })
                .collect();
            let w = naive_pool(&scores, self.cfg.pooling);
            if !(self.cfg.skip_oov && oov) {
                word_scores.push(w);
            }
        }
        if word_scores.is_empty() {
            0.0
        } else {
            naive_pool(&word_scores, self.cfg.pooling)
        }
    }

    /// `(score0, score1, predicted)`.
    pub fn classify(&self, t0: &str, t1: &str) -> (f64, f64, u8) {
        let (s0, s1) = (self.score(t0), self.score(t1));
        (s0, s1, u8::from(s1 > s0))
    }
}
