//! Local anisotropy corrections fitted on seed token vectors:
//! all-but-the-top (mean + top principal component removal),
//! per-dimension standardization, and the rank transform used by the
//! Spearman similarity.
//!
//! Fitted parameters serialize to JSON as base64 little-endian `f64`
//! blocks, so a reloaded fit is bit-identical to the in-memory one.

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use log::warn;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Lower clamp for per-dimension standard deviations.
pub const SIGMA_EPSILON: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Correction {
    #[default]
    None,
    Abtt,
    Standardization,
    Rank,
}

impl Correction {
    /// Whether scoring needs fitted statistics.
    pub fn needs_fit(&self) -> bool {
        matches!(self, Correction::Abtt | Correction::Standardization)
    }

    pub fn as_str(&self) -> &'static str {
        match self {
            Correction::None => "none",
            Correction::Abtt => "abtt",
            Correction::Standardization => "standardization",
            Correction::Rank => "rank",
        }
    }
}

impl std::str::FromStr for Correction {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Correction::None),
            "abtt" => Ok(Correction::Abtt),
            "standardization" | "std" => Ok(Correction::Standardization),
            "rank" => Ok(Correction::Rank),
            other => Err(Error::Usage(format!(
                "unknown correction `{other}` (expected none, abtt, standardization, rank)"
            ))),
        }
    }
}

/// Which samples the correction is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum FitGranularity {
    /// Every token vector of every seed text.
    #[default]
    Token,
    /// One mean vector per seed text.
    Text,
}

impl std::str::FromStr for FitGranularity {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "token" => Ok(FitGranularity::Token),
            "text" => Ok(FitGranularity::Text),
            other => Err(Error::Usage(format!("unknown fit granularity `{other}` (expected token or text)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct FitOptions {
    pub k_override: Option<usize>,
    /// Project `x - mu` instead of `x` onto the removed components.
    pub centered_projection: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "StatsJson", try_from = "StatsJson")]
pub struct CorrectionStats {
    pub method: Correction,
    pub dim: usize,
    pub mu: Vec<f64>,
    pub sigma: Vec<f64>,
    /// Unit-norm, mutually orthogonal rows sorted by descending singular value.
    pub components: Vec<Vec<f64>>,
    pub singular_values: Vec<f64>,
    pub k: usize,
    pub requested_k: usize,
    pub sample_count: usize,
    pub centered_projection: bool,
}

/// Default number of removed components: `round(d / 100)` clamped to
/// `1..=min(d, n - 1)`.
pub fn default_k(dim: usize, samples: usize) -> usize {
    let upper = dim.min(samples.saturating_sub(1)).max(1);
    ((dim as f64 / 100.0).round() as usize).clamp(1, upper)
}

/// Fit correction statistics on `samples` (n vectors of dimension d).
pub fn fit_correction(samples: &[Vec<f64>], method: Correction, opts: FitOptions) -> Result<CorrectionStats> {
    if method == Correction::None || method == Correction::Rank {
        let dim = samples.first().map_or(0, Vec::len);
        return Ok(CorrectionStats {
            method,
            dim,
            mu: Vec::new(),
            sigma: Vec::new(),
            components: Vec::new(),
            singular_values: Vec::new(),
            k: 0,
            requested_k: 0,
            sample_count: samples.len(),
            centered_projection: false,
        });
    }
    let n = samples.len();
    if n < 2 {
        return Err(Error::Numeric(format!(
            "correction fit needs at least 2 samples, got {n}"
        )));
    }
    let d = samples[0].len();
    if d == 0 {
        return Err(Error::Numeric("zero-dimensional samples".into()));
    }
    if let Some(bad) = samples.iter().find(|s| s.len() != d) {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: bad.len(),
        });
    }

    let mut mu = vec![0.0f64; d];
    for s in samples {
        for (m, x) in mu.iter_mut().zip(s) {
            *m += x;
        }
    }
    mu.iter_mut().for_each(|m| *m /= n as f64);

    let mut var = vec![0.0f64; d];
    for s in samples {
        for ((v, x), m) in var.iter_mut().zip(s).zip(&mu) {
            *v += (x - m) * (x - m);
        }
    }
    let sigma: Vec<f64> = var
        .iter()
        .map(|v| (v / n as f64).sqrt().max(SIGMA_EPSILON))
        .collect();

    let mut stats = CorrectionStats {
        method,
        dim: d,
        mu,
        sigma,
        components: Vec::new(),
        singular_values: Vec::new(),
        k: 0,
        requested_k: 0,
        sample_count: n,
        centered_projection: opts.centered_projection,
    };

    if method == Correction::Abtt {
        let requested = opts.k_override.unwrap_or_else(|| default_k(d, n));
        let (components, singular) = principal_components(samples, &stats.mu)?;
        let max_sv = singular.first().copied().unwrap_or(0.0);
        let tol = max_sv * (n.max(d) as f64) * f64::EPSILON;
        let rank = singular.iter().filter(|&&s| s > tol && s > 0.0).count();
        let k = requested.min(rank).min(d).min(n - 1);
        if k < requested {
            warn!("abtt: requested {requested} components, using {k} (rank {rank})");
        }
        stats.requested_k = requested;
        stats.k = k;
        stats.components = components
            .into_iter()
            .take(k)
            .collect();
        stats.singular_values = singular.into_iter().take(k).collect();
    }
    Ok(stats)
}

/// Right singular vectors of the centered sample matrix, sorted by
/// descending singular value, each sign-fixed so that its largest-magnitude
/// entry is positive.
fn principal_components(samples: &[Vec<f64>], mu: &[f64]) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let n = samples.len();
    let d = mu.len();
    let centered = DMatrix::from_fn(n, d, |i, j| samples[i][j] - mu[j]);
    let svd = centered.svd(false, true);
    let v_t = svd
        .v_t
        .ok_or_else(|| Error::Numeric("SVD did not produce right singular vectors".into()))?;
    let mut order: Vec<usize> = (0..svd.singular_values.len()).collect();
    order.sort_by(|&a, &b| svd.singular_values[b].total_cmp(&svd.singular_values[a]));

    let mut comps = Vec::with_capacity(order.len());
    let mut values = Vec::with_capacity(order.len());
    for i in order {
        let mut row: Vec<f64> = v_t.row(i).iter().copied().collect();
        let mut pivot = 0;
        for (j, v) in row.iter().enumerate() {
            if v.abs() > row[pivot].abs() {
                pivot = j;
            }
        }
        if row[pivot] < 0.0 {
            row.iter_mut().for_each(|v| *v = -*v);
        }
        comps.push(row);
        values.push(svd.singular_values[i]);
    }
    Ok((comps, values))
}

fn check_dim(x: &[f64], d: usize) -> Result<()> {
    if x.len() != d {
        return Err(Error::DimensionMismatch {
            expected: d,
            actual: x.len(),
        });
    }
    Ok(())
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `x - mu - sum_i (u_i . x) u_i`, or with `u_i . (x - mu)` in centered mode.
pub fn apply_abtt(x: &[f64], stats: &CorrectionStats) -> Result<Vec<f64>> {
    check_dim(x, stats.dim)?;
    let centered: Vec<f64> = x.iter().zip(&stats.mu).map(|(a, m)| a - m).collect();
    let mut out = centered.clone();
    for u in &stats.components {
        let proj = if stats.centered_projection {
            dot(u, &centered)
        } else {
            dot(u, x)
        };
        for (o, ui) in out.iter_mut().zip(u) {
            *o -= proj * ui;
        }
    }
    Ok(out)
}

/// `(x - mu) / sigma` elementwise.
pub fn apply_standardization(x: &[f64], stats: &CorrectionStats) -> Result<Vec<f64>> {
    check_dim(x, stats.dim)?;
    Ok(x
        .iter()
        .zip(&stats.mu)
        .zip(&stats.sigma)
        .map(|((a, m), s)| (a - m) / s)
        .collect())
}

impl CorrectionStats {
    /// Apply the fitted token-level correction. `None` and `Rank` leave the
    /// vector unchanged (rank acts at similarity time).
    pub fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        match self.method {
            Correction::Abtt => apply_abtt(x, self),
            Correction::Standardization => apply_standardization(x, self),
            Correction::None | Correction::Rank => Ok(x.to_vec()),
        }
    }
}

/// Ascending ranks `1..=d`; tied values share the mean of their ranks.
pub fn rank_transform(x: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| x[a].total_cmp(&x[b]).then(a.cmp(&b)));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && x[order[j]] == x[order[i]] {
            j += 1;
        }
        // positions i..j hold ranks i+1..=j
        let avg = (i + 1 + j) as f64 / 2.0;
        for &idx in &order[i..j] {
            ranks[idx] = avg;
        }
        i = j;
    }
    ranks
}

// --- serialization -------------------------------------------------------

#[derive(Serialize, Deserialize)]
struct StatsJson {
    method: Correction,
    dim: usize,
    k: usize,
    requested_k: usize,
    sample_count: usize,
    centered_projection: bool,
    dtype: String,
    mu: String,
    sigma: String,
    components: String,
    singular_values: Vec<f64>,
}

const STATS_DTYPE: &str = "float64_le";

fn encode_f64(values: impl Iterator<Item = f64>) -> String {
    let mut bytes = Vec::new();
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    BASE64.encode(bytes)
}

fn decode_f64(s: &str) -> std::result::Result<Vec<f64>, String> {
    let bytes = BASE64.decode(s.as_bytes()).map_err(|e| e.to_string())?;
    if bytes.len() % 8 != 0 {
        return Err("float64 block length is not a multiple of 8".into());
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

impl From<CorrectionStats> for StatsJson {
    fn from(s: CorrectionStats) -> Self {
        StatsJson {
            method: s.method,
            dim: s.dim,
            k: s.k,
            requested_k: s.requested_k,
            sample_count: s.sample_count,
            centered_projection: s.centered_projection,
            dtype: STATS_DTYPE.to_string(),
            mu: encode_f64(s.mu.into_iter()),
            sigma: encode_f64(s.sigma.into_iter()),
            components: encode_f64(s.components.into_iter().flatten()),
            singular_values: s.singular_values,
        }
    }
}

impl TryFrom<StatsJson> for CorrectionStats {
    type Error = String;

    fn try_from(j: StatsJson) -> std::result::Result<Self, String> {
        if j.dtype != STATS_DTYPE {
            return Err(format!("unsupported stats dtype `{}`", j.dtype));
        }
        let mu = decode_f64(&j.mu)?;
        let sigma = decode_f64(&j.sigma)?;
        let flat = decode_f64(&j.components)?;
        if j.method.needs_fit() && (mu.len() != j.dim || sigma.len() != j.dim) {
            return Err(format!("mu/sigma length does not match dim {}", j.dim));
        }
        if flat.len() != j.k * j.dim {
            return Err(format!(
                "components block has {} values, expected {}x{}",
                flat.len(),
                j.k,
                j.dim
            ));
        }
        let components = if j.dim == 0 {
            Vec::new()
        } else {
            flat.chunks(j.dim).map(<[f64]>::to_vec).collect()
        };
        Ok(CorrectionStats {
            method: j.method,
            dim: j.dim,
            mu,
            sigma,
            components,
            singular_values: j.singular_values,
            k: j.k,
            requested_k: j.requested_k,
            sample_count: j.sample_count,
            centered_projection: j.centered_projection,
        })
    }
}
