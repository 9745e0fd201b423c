//! C ABI over `styleprobe`.
//!
//! Objects cross the boundary as opaque handles created by `sp_*_load` /
//! `sp_*_build` and released with the matching `sp_*_free`. Every fallible
//! call returns an [`SpStatus`]; on failure the message is available from
//! [`sp_last_error`] on the same thread until the next failing call.
//! Panics are caught and reported as [`SpStatus::Panic`].

use std::cell::RefCell;
use std::ffi::{c_char, c_double, c_int, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use styleprobe::anisotropy::Correction;
use styleprobe::dataset::PairExample;
use styleprobe::embedding_store::{load_static_embeddings, open_layer_dump, LayerDump, LayerSetting, StaticEmbeddings};
use styleprobe::evaluation::{classify_pair, Scorer};
use styleprobe::scoring::{score_text, Pooling, ScoreConfig};
use styleprobe::source::EmbeddingSource;
use styleprobe::style_vectors::{build_feature_vector, load_seed_set, FeatureVector};
use styleprobe::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Io = 3,
    Format = 4,
    DimensionMismatch = 5,
    LayerOutOfRange = 6,
    Numeric = 7,
    Invalid = 8,
    Panic = 9,
}

impl From<&Error> for SpStatus {
    fn from(e: &Error) -> Self {
        match e {
            Error::Io { .. } => SpStatus::Io,
            Error::Format { .. } | Error::Dump { .. } | Error::Json(_) => SpStatus::Format,
            Error::DimensionMismatch { .. } => SpStatus::DimensionMismatch,
            Error::LayerOutOfRange { .. } => SpStatus::LayerOutOfRange,
            Error::Numeric(_) => SpStatus::Numeric,
            Error::Example { source, .. } => SpStatus::from(source.as_ref()),
            Error::Invalid(_) | Error::Usage(_) => SpStatus::Invalid,
        }
    }
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpPooling {
    Mean = 0,
    Max = 1,
}

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SpCorrection {
    None = 0,
    Abtt = 1,
    Standardization = 2,
    Rank = 3,
}

/// Scoring options. `pooling` and `correction` hold [`SpPooling`] and
/// [`SpCorrection`] values. `layer < 0` means a static source; otherwise the
/// layer (or the last layer of the aggregate `0..=layer` when `aggregate` is
/// set).
#[repr(C)]
#[derive(Debug, Clone, Copy)]
pub struct SpOptions {
    pub pooling: i32,
    pub correction: i32,
    pub layer: c_int,
    pub aggregate: bool,
    pub skip_oov: bool,
}

/// An embedding source: a static embedding file or a layer dump.
pub struct SpSource(Source);

enum Source {
    Static(StaticEmbeddings),
    Dump(LayerDump),
}

impl SpSource {
    fn view(&self) -> EmbeddingSource<'_> {
        match &self.0 {
            Source::Static(s) => EmbeddingSource::Static(s),
            Source::Dump(d) => EmbeddingSource::Contextual(d),
        }
    }
}

/// A feature direction with its provenance and correction statistics.
pub struct SpVector(FeatureVector);

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_last_error(msg: String) {
    let msg = CString::new(msg.replace('\0', " ")).expect("nul bytes removed");
    LAST_ERROR.with(|e| *e.borrow_mut() = Some(msg));
}

enum Failure {
    Status(SpStatus, String),
    Lib(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Lib(e)
    }
}

fn guard(f: impl FnOnce() -> Result<(), Failure>) -> SpStatus {
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => SpStatus::Ok,
        Ok(Err(Failure::Status(s, msg))) => {
            set_last_error(msg);
            s
        }
        Ok(Err(Failure::Lib(e))) => {
            set_last_error(e.to_string());
            SpStatus::from(&e)
        }
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "panic".into());
            set_last_error(format!("internal error: {msg}"));
            SpStatus::Panic
        }
    }
}

fn null(what: &str) -> Failure {
    Failure::Status(SpStatus::NullArgument, format!("{what} is null"))
}

unsafe fn str_arg<'a>(p: *const c_char, what: &str) -> Result<&'a str, Failure> {
    if p.is_null() {
        return Err(null(what));
    }
    CStr::from_ptr(p)
        .to_str()
        .map_err(|_| Failure::Status(SpStatus::InvalidUtf8, format!("{what} is not valid UTF-8")))
}

unsafe fn ref_arg<'a, T>(p: *const T, what: &str) -> Result<&'a T, Failure> {
    p.as_ref().ok_or_else(|| null(what))
}

unsafe fn out_arg<'a, T>(p: *mut T, what: &str) -> Result<&'a mut T, Failure> {
    p.as_mut().ok_or_else(|| null(what))
}

fn config(opts: &SpOptions) -> Result<ScoreConfig, Failure> {
    let layers = usize::try_from(opts.layer).ok().map(|l| {
        if opts.aggregate {
            LayerSetting::Aggregate(l)
        } else {
            LayerSetting::Single(l)
        }
    });
    let correction = match opts.correction {
        c if c == SpCorrection::None as i32 => Correction::None,
        c if c == SpCorrection::Abtt as i32 => Correction::Abtt,
        c if c == SpCorrection::Standardization as i32 => Correction::Standardization,
        c if c == SpCorrection::Rank as i32 => Correction::Rank,
        c => return Err(Failure::Status(SpStatus::Invalid, format!("unknown correction {c}"))),
    };
    let pooling = match opts.pooling {
        p if p == SpPooling::Mean as i32 => Pooling::Mean,
        p if p == SpPooling::Max as i32 => Pooling::Max,
        p => return Err(Failure::Status(SpStatus::Invalid, format!("unknown pooling {p}"))),
    };
    Ok(ScoreConfig {
        pooling,
        layers,
        skip_oov: opts.skip_oov,
        ..ScoreConfig::default()
    }
    .with_correction(correction))
}

/// Options stored with the vector when `opts` is null.
unsafe fn config_for(fv: &FeatureVector, opts: *const SpOptions) -> Result<ScoreConfig, Failure> {
    Ok(match opts.as_ref() {
        Some(o) => {
            let mut cfg = config(o)?;
            cfg.fit = fv.correction_stats.as_ref().map_or(cfg.fit, |s| styleprobe::anisotropy::FitOptions {
                k_override: None,
                centered_projection: s.centered_projection,
            });
            cfg.fit_granularity = fv.provenance.fit_granularity;
            cfg
        }
        None => ScoreConfig {
            layers: fv.provenance.layers,
            fit_granularity: fv.provenance.fit_granularity,
            ..ScoreConfig::default()
        }
        .with_correction(fv.provenance.correction),
    })
}

/// Mean pooling, no correction, static source.
#[no_mangle]
pub extern "C" fn sp_options_default() -> SpOptions {
    SpOptions {
        pooling: SpPooling::Mean as i32,
        correction: SpCorrection::None as i32,
        layer: -1,
        aggregate: false,
        skip_oov: false,
    }
}

/// Message of the last failing call on this thread, or null. Owned by the
/// library; valid until the next failing call on the same thread.
#[no_mangle]
pub extern "C" fn sp_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Load a static embedding text file. `expected_dim` 0 accepts any.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_source_load_static(path: *const c_char, expected_dim: usize, out: *mut *mut SpSource) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let store = load_static_embeddings(&path, (expected_dim > 0).then_some(expected_dim))?;
        *out = Box::into_raw(Box::new(SpSource(Source::Static(store))));
        Ok(())
    })
}

/// Open a layered embedding dump.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_source_open_dump(path: *const c_char, out: *mut *mut SpSource) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let dump = open_layer_dump(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(SpSource(Source::Dump(dump))));
        Ok(())
    })
}

/// Embedding dimension, or 0 for a null handle.
///
/// # Safety
/// `src` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_source_dim(src: *const SpSource) -> usize {
    src.as_ref().map_or(0, |s| s.view().dim())
}

/// # Safety
/// `src` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_source_free(src: *mut SpSource) {
    if !src.is_null() {
        drop(Box::from_raw(src));
    }
}

/// Build a feature vector from a `low TAB high` seed file. `opts` may be
/// null for the defaults.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_build(
    src: *const SpSource,
    seeds_path: *const c_char,
    feature: *const c_char,
    opts: *const SpOptions,
    out: *mut *mut SpVector,
) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let src = ref_arg(src, "source")?;
        let seeds = load_seed_set(&PathBuf::from(str_arg(seeds_path, "seeds_path")?), str_arg(feature, "feature")?)?;
        let cfg = config(opts.as_ref().unwrap_or(&sp_options_default()))?;
        let fv = build_feature_vector(&seeds, &src.view(), &cfg)?;
        *out = Box::into_raw(Box::new(SpVector(fv)));
        Ok(())
    })
}

/// Load a feature vector JSON file.
///
/// # Safety
/// `path` must be a NUL-terminated string; `out` a valid pointer.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_load(path: *const c_char, out: *mut *mut SpVector) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let fv = FeatureVector::load_json(&PathBuf::from(str_arg(path, "path")?))?;
        *out = Box::into_raw(Box::new(SpVector(fv)));
        Ok(())
    })
}

/// Write a feature vector as JSON.
///
/// # Safety
/// `vec` must be a live handle; `path` a NUL-terminated string.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_save(vec: *const SpVector, path: *const c_char) -> SpStatus {
    guard(|| {
        let vec = ref_arg(vec, "vector")?;
        let path = PathBuf::from(str_arg(path, "path")?);
        let file = std::fs::File::create(&path).map_err(|e| Error::Io { path: path.clone(), source: e })?;
        serde_json::to_writer_pretty(std::io::BufWriter::new(file), &vec.0).map_err(Error::from)?;
        Ok(())
    })
}

/// Dimension of the vector, or 0 for a null handle.
///
/// # Safety
/// `vec` must be null or a live handle.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_dim(vec: *const SpVector) -> usize {
    vec.as_ref().map_or(0, |v| v.0.dim)
}

/// Copy the components into `buf`, which must hold `len >= dim` doubles.
///
/// # Safety
/// `buf` must point to `len` writable doubles.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_values(vec: *const SpVector, buf: *mut c_double, len: usize) -> SpStatus {
    guard(|| {
        let vec = ref_arg(vec, "vector")?;
        if buf.is_null() {
            return Err(null("buf"));
        }
        if len < vec.0.dim {
            return Err(Failure::Status(SpStatus::Invalid, format!("buffer holds {len} values, need {}", vec.0.dim)));
        }
        std::slice::from_raw_parts_mut(buf, vec.0.dim).copy_from_slice(&vec.0.values);
        Ok(())
    })
}

/// # Safety
/// `vec` must be null or a handle not yet freed.
#[no_mangle]
pub unsafe extern "C" fn sp_vector_free(vec: *mut SpVector) {
    if !vec.is_null() {
        drop(Box::from_raw(vec));
    }
}

/// Feature score of `text`. A null `opts` uses the settings stored with the
/// vector.
///
/// # Safety
/// Pointers must be valid; `text` NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_score_text(
    vec: *const SpVector,
    src: *const SpSource,
    text: *const c_char,
    opts: *const SpOptions,
    out: *mut c_double,
) -> SpStatus {
    guard(|| {
        let out = out_arg(out, "out")?;
        let vec = ref_arg(vec, "vector")?;
        let src = ref_arg(src, "source")?;
        let text = str_arg(text, "text")?;
        *out = score_text(text, &vec.0, &src.view(), &config_for(&vec.0, opts)?)?.value;
        Ok(())
    })
}

/// Which text shows the feature more strongly: `*predicted` is 1 when
/// `text1` scores strictly higher, else 0 (ties predict 0). `score0` and
/// `score1` may be null.
///
/// # Safety
/// Pointers must be valid; strings NUL-terminated.
#[no_mangle]
pub unsafe extern "C" fn sp_classify_pair(
    vec: *const SpVector,
    src: *const SpSource,
    text0: *const c_char,
    text1: *const c_char,
    opts: *const SpOptions,
    predicted: *mut c_int,
    score0: *mut c_double,
    score1: *mut c_double,
) -> SpStatus {
    guard(|| {
        let predicted = out_arg(predicted, "predicted")?;
        let vec = ref_arg(vec, "vector")?;
        let src = ref_arg(src, "source")?;
        let ex = PairExample::new(str_arg(text0, "text0")?, str_arg(text1, "text1")?, 0)?;
        let scorer = Scorer::new(&vec.0, src.view(), config_for(&vec.0, opts)?)?;
        let p = classify_pair(&ex, &scorer)?;
        *predicted = c_int::from(p.predicted);
        if let Some(s) = score0.as_mut() {
            *s = p.score0;
        }
        if let Some(s) = score1.as_mut() {
            *s = p.score1;
        }
        Ok(())
    })
}
