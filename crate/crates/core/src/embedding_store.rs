//! Token-vector stores.
//!
//! Two sources are supported:
//!
//! * static word-vector tables in the usual GloVe / word2vec text layout
//!   (`word v1 ... vd` per line, optional `count dim` header line), and
//! * per-layer contextual dumps in the LED interchange format (JSON Lines,
//!   one header object followed by one object per text, vectors as base64
//!   little-endian `f32` blocks of shape `(L+1) x num_subtokens x d`).
//!
//! Both are immutable after loading and can be shared freely across threads.

use std::collections::HashMap;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use log::warn;
use ndarray::{Array2, Array3, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A static word-vector table.
#[derive(Debug, Clone)]
pub struct StaticEmbeddings {
    id: String,
    vocab: HashMap<String, usize>,
    words: Vec<String>,
    matrix: Vec<f32>,
    dim: usize,
    zeros: Vec<f32>,
    case_fallback: bool,
    duplicates: usize,
    skipped_lines: usize,
}

/// Load a static embedding file. See [`StaticEmbeddings::from_reader`].
pub fn load_static_embeddings(path: &Path, expected_dim: Option<usize>) -> Result<StaticEmbeddings> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "static".to_string());
    StaticEmbeddings::from_reader(BufReader::new(file), Some(path), expected_dim)
        .map(|store| store.with_id(format!("static:{id}")))
}

fn parse_header(line: &str) -> Option<(usize, usize)> {
    let mut it = line.split_whitespace();
    let a = it.next()?.parse::<usize>().ok()?;
    let b = it.next()?.parse::<usize>().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some((a, b))
}

impl StaticEmbeddings {
    /// Parse the text format from any reader.
    ///
    /// Lines whose components do not parse as floats are skipped and
    /// counted. A line with a different number of components than the
    /// first data line is a hard error.
    pub fn from_reader<R: BufRead>(
        reader: R,
        path: Option<&Path>,
        expected_dim: Option<usize>,
    ) -> Result<Self> {
        let at = |line: usize, msg: String| Error::Format {
            path: path.map(Path::to_path_buf),
            line: Some(line),
            message: msg,
        };

        let mut vocab: HashMap<String, usize> = HashMap::new();
        let mut words = Vec::new();
        let mut matrix: Vec<f32> = Vec::new();
        let mut dim: Option<usize> = None;
        let mut header: Option<(usize, usize)> = None;
        let mut duplicates = 0;
        let mut skipped = 0;
        let mut row = Vec::new();

        for (idx, line) in reader.lines().enumerate() {
            let lineno = idx + 1;
            let line = line.map_err(|e| match path {
                Some(p) => Error::io(p, e),
                None => Error::format(e.to_string()),
            })?;
            let line = line.trim_end_matches(['\r', '\n']);
            if line.trim().is_empty() {
                continue;
            }
            if idx == 0 {
                if let Some(h) = parse_header(line) {
                    header = Some(h);
                    continue;
                }
            }

            let mut parts = line.split(' ').filter(|s| !s.is_empty());
            let word = match parts.next() {
                Some(w) => w,
                None => {
                    skipped += 1;
                    continue;
                }
            };
            row.clear();
            let mut ok = true;
            for p in parts {
                match p.parse::<f32>() {
                    Ok(v) => row.push(v),
                    Err(_) => {
                        ok = false;
                        break;
                    }
                }
            }
            if !ok || row.is_empty() {
                skipped += 1;
                continue;
            }
            match dim {
                None => {
                    if let Some((_, hd)) = header {
                        if hd != row.len() {
                            return Err(at(
                                lineno,
                                format!("header declares dimension {hd}, row has {}", row.len()),
                            ));
                        }
                    }
                    dim = Some(row.len());
                }
                Some(d) if d != row.len() => {
                    return Err(at(
                        lineno,
                        format!("dimension mismatch: expected {d} components, found {}", row.len()),
                    ));
                }
                Some(_) => {}
            }
            let d = row.len();
            if let Some(&existing) = vocab.get(word) {
                duplicates += 1;
                matrix[existing * d..(existing + 1) * d].copy_from_slice(&row);
            } else {
                vocab.insert(word.to_string(), words.len());
                words.push(word.to_string());
                matrix.extend_from_slice(&row);
            }
        }

        let dim = match dim {
            Some(d) => d,
            None => {
                return Err(Error::Format {
                    path: path.map(Path::to_path_buf),
                    line: None,
                    message: "no embedding vectors found".into(),
                })
            }
        };
        if let Some(expected) = expected_dim {
            if expected != dim {
                return Err(Error::DimensionMismatch {
                    expected,
                    actual: dim,
                });
            }
        }
        if duplicates > 0 {
            warn!("{duplicates} duplicate vocabulary entries (last occurrence kept)");
        }
        if skipped > 0 {
            warn!("{skipped} malformed lines skipped");
        }

        Ok(StaticEmbeddings {
            id: "static".to_string(),
            vocab,
            words,
            matrix,
            dim,
            zeros: vec![0.0; dim],
            case_fallback: true,
            duplicates,
            skipped_lines: skipped,
        })
    }

    /// Build a store from in-memory rows. Later duplicates replace earlier ones.
    pub fn from_rows<I, S>(rows: I) -> Result<Self>
    where
        I: IntoIterator<Item = (S, Vec<f32>)>,
        S: Into<String>,
    {
        let mut vocab = HashMap::new();
        let mut words = Vec::new();
        let mut matrix = Vec::new();
        let mut dim = None;
        let mut duplicates = 0;
        for (word, v) in rows {
            let word = word.into();
            let d = *dim.get_or_insert(v.len());
            if v.len() != d {
                return Err(Error::DimensionMismatch {
                    expected: d,
                    actual: v.len(),
                });
            }
            if let Some(&i) = vocab.get(&word) {
                duplicates += 1;
                matrix[i * d..(i + 1) * d].copy_from_slice(&v);
            } else {
                vocab.insert(word.clone(), words.len());
                words.push(word);
                matrix.extend_from_slice(&v);
            }
        }
        let dim = match dim {
            Some(d) if d > 0 => d,
            _ => return Err(Error::format("no embedding vectors found")),
        };
        Ok(StaticEmbeddings {
            id: "static".to_string(),
            vocab,
            words,
            matrix,
            dim,
            zeros: vec![0.0; dim],
            case_fallback: true,
            duplicates,
            skipped_lines: 0,
        })
    }

    pub fn with_id(mut self, id: impl Into<String>) -> Self {
        self.id = id.into();
        self
    }

    /// Enable or disable the lowercase retry for out-of-vocabulary words.
    pub fn with_case_fallback(mut self, enabled: bool) -> Self {
        self.case_fallback = enabled;
        self
    }

    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }

    pub fn case_fallback(&self) -> bool {
        self.case_fallback
    }

    pub fn duplicate_count(&self) -> usize {
        self.duplicates
    }

    pub fn skipped_lines(&self) -> usize {
        self.skipped_lines
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn contains(&self, word: &str) -> bool {
        self.vocab.contains_key(word)
    }

    fn row(&self, idx: usize) -> &[f32] {
        &self.matrix[idx * self.dim..(idx + 1) * self.dim]
    }

    /// Look up a word: exact match, then lowercase (if enabled), then the
    /// all-zero vector. The flag is `true` for out-of-vocabulary words.
    pub fn lookup(&self, word: &str) -> (&[f32], bool) {
        if let Some(&i) = self.vocab.get(word) {
            return (self.row(i), false);
        }
        if self.case_fallback {
            let lower = word.to_lowercase();
            if lower != word {
                if let Some(&i) = self.vocab.get(&lower) {
                    return (self.row(i), false);
                }
            }
        }
        (&self.zeros, true)
    }

    /// Copy of this store with every vector multiplied by `c`.
    pub fn scaled(&self, c: f32) -> Self {
        let mut out = self.clone();
        out.matrix.iter_mut().for_each(|v| *v *= c);
        out
    }

    /// Write in the text format (no header line).
    pub fn write_text<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        for (i, word) in self.words.iter().enumerate() {
            write!(w, "{word}")?;
            for v in self.row(i) {
                write!(w, " {v}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

// ---------------------------------------------------------------------------
// LED dumps

pub const LED_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LedHeader {
    pub format_version: u32,
    pub model_name: String,
    pub num_layers: usize,
    pub hidden_dim: usize,
    pub tokenizer: String,
}

/// A word as `(surface, char_start, char_end)`; offsets count Unicode scalar values.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WordSpan(pub String, pub usize, pub usize);

/// A subtoken as `(piece, char_start, char_end, word_index)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SubtokenSpan(pub String, pub usize, pub usize, pub usize);

impl SubtokenSpan {
    pub fn word_index(&self) -> usize {
        self.3
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DumpEntry {
    pub text_id: String,
    pub text: String,
    pub words: Vec<WordSpan>,
    pub subtokens: Vec<SubtokenSpan>,
    /// Shape `(L+1, num_subtokens, d)`.
    pub vectors: Array3<f32>,
}

#[derive(Serialize, Deserialize)]
struct RawEntry {
    text_id: String,
    text: String,
    words: Vec<WordSpan>,
    subtokens: Vec<SubtokenSpan>,
    vectors: String,
}

impl DumpEntry {
    pub fn num_layers(&self) -> usize {
        self.vectors.shape()[0].saturating_sub(1)
    }

    pub fn num_subtokens(&self) -> usize {
        self.vectors.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.vectors.shape()[2]
    }

    /// Structural invariants that do not depend on the header: offsets within
    /// the text, in order and non-overlapping, and a non-decreasing
    /// surjective word index.
    pub fn check_alignment(&self) -> std::result::Result<(), String> {
        let len = self.text.chars().count();
        let mut prev_end = 0;
        for (i, WordSpan(_, s, e)) in self.words.iter().enumerate() {
            if s > e || *e > len {
                return Err(format!("word {i} span {s}..{e} outside text of length {len}"));
            }
            if *s < prev_end {
                return Err(format!("word {i} span {s}..{e} overlaps the previous word"));
            }
            prev_end = *e;
        }
        let mut prev_end = 0;
        let mut prev_word = 0;
        for (i, SubtokenSpan(_, s, e, w)) in self.subtokens.iter().enumerate() {
            if s > e || *e > len {
                return Err(format!("subtoken {i} span {s}..{e} outside text of length {len}"));
            }
            if *s < prev_end {
                return Err(format!("subtoken {i} span {s}..{e} overlaps the previous subtoken"));
            }
            if *w >= self.words.len() {
                return Err(format!("subtoken {i} word index {w} out of range"));
            }
            if i == 0 && *w != 0 {
                return Err("first subtoken must belong to word 0".to_string());
            }
            if i > 0 && (*w < prev_word || *w > prev_word + 1) {
                return Err(format!(
                    "subtoken {i} word index {w} breaks the non-decreasing surjection"
                ));
            }
            prev_end = *e;
            prev_word = *w;
        }
        let covered = if self.subtokens.is_empty() { 0 } else { prev_word + 1 };
        if covered != self.words.len() {
            return Err(format!(
                "subtokens cover {covered} of {} words",
                self.words.len()
            ));
        }
        Ok(())
    }

    fn to_raw(&self) -> RawEntry {
        let mut bytes = Vec::with_capacity(self.vectors.len() * 4);
        for v in self.vectors.iter() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        RawEntry {
            text_id: self.text_id.clone(),
            text: self.text.clone(),
            words: self.words.clone(),
            subtokens: self.subtokens.clone(),
            vectors: BASE64.encode(bytes),
        }
    }
}

fn decode_entry(raw: RawEntry, header: &LedHeader) -> Result<DumpEntry> {
    let dump_err = |message: String| Error::Dump {
        text_id: raw.text_id.clone(),
        message,
    };
    let bytes = BASE64
        .decode(raw.vectors.as_bytes())
        .map_err(|e| dump_err(format!("invalid base64 vector block: {e}")))?;
    let layers = header.num_layers + 1;
    let t = raw.subtokens.len();
    let d = header.hidden_dim;
    let expected = layers * t * d * 4;
    if bytes.len() != expected {
        let found = bytes.len() / 4;
        let hint = if layers * t > 0 && found % (layers * t) == 0 {
            format!(" (block looks like {}x{}x{})", layers, t, found / (layers * t))
        } else {
            String::new()
        };
        return Err(dump_err(format!(
            "vector block has {} bytes, expected {} for shape {}x{}x{}{}",
            bytes.len(),
            expected,
            layers,
            t,
            d,
            hint
        )));
    }
    let values: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    let vectors = Array3::from_shape_vec((layers, t, d), values)
        .map_err(|e| dump_err(e.to_string()))?;
    let entry = DumpEntry {
        text_id: raw.text_id,
        text: raw.text,
        words: raw.words,
        subtokens: raw.subtokens,
        vectors,
    };
    entry.check_alignment().map_err(|message| Error::Dump {
        text_id: entry.text_id.clone(),
        message,
    })?;
    Ok(entry)
}

fn parse_led_header(line: &str, path: &Path) -> Result<LedHeader> {
    let header: LedHeader = serde_json::from_str(line)
        .map_err(|e| Error::format_at(path, 1, format!("not an LED header: {e}")))?;
    if header.format_version != LED_FORMAT_VERSION {
        return Err(Error::format_at(
            path,
            1,
            format!("unsupported LED format_version {}", header.format_version),
        ));
    }
    if header.hidden_dim == 0 {
        return Err(Error::format_at(path, 1, "hidden_dim must be positive"));
    }
    Ok(header)
}

/// An in-memory LED dump.
#[derive(Debug, Clone)]
pub struct LayerDump {
    pub header: LedHeader,
    entries: Vec<DumpEntry>,
    by_id: HashMap<String, usize>,
    by_text: HashMap<String, usize>,
}

impl LayerDump {
    pub fn new(header: LedHeader, entries: Vec<DumpEntry>) -> Result<Self> {
        let mut by_id = HashMap::new();
        let mut by_text = HashMap::new();
        for (i, e) in entries.iter().enumerate() {
            let shape = e.vectors.shape();
            if shape[0] != header.num_layers + 1
                || shape[1] != e.subtokens.len()
                || shape[2] != header.hidden_dim
            {
                return Err(Error::Dump {
                    text_id: e.text_id.clone(),
                    message: format!(
                        "block shape {:?} does not match ({}, {}, {})",
                        shape,
                        header.num_layers + 1,
                        e.subtokens.len(),
                        header.hidden_dim
                    ),
                });
            }
            e.check_alignment().map_err(|message| Error::Dump {
                text_id: e.text_id.clone(),
                message,
            })?;
            if by_id.insert(e.text_id.clone(), i).is_some() {
                return Err(Error::Dump {
                    text_id: e.text_id.clone(),
                    message: "duplicate text_id".into(),
                });
            }
            by_text.entry(e.text.clone()).or_insert(i);
        }
        Ok(LayerDump {
            header,
            entries,
            by_id,
            by_text,
        })
    }

    pub fn num_layers(&self) -> usize {
        self.header.num_layers
    }

    pub fn dim(&self) -> usize {
        self.header.hidden_dim
    }

    pub fn id(&self) -> String {
        format!("led:{}", self.header.model_name)
    }

    pub fn entries(&self) -> &[DumpEntry] {
        &self.entries
    }

    pub fn get(&self, text_id: &str) -> Option<&DumpEntry> {
        self.by_id.get(text_id).map(|&i| &self.entries[i])
    }

    /// First entry whose text equals `text`.
    pub fn entry_for_text(&self, text: &str) -> Option<&DumpEntry> {
        self.by_text.get(text).map(|&i| &self.entries[i])
    }

    pub fn write<W: Write>(&self, w: W) -> Result<()> {
        write_layer_dump(w, &self.header, &self.entries)
    }
}

/// Read and validate an LED file eagerly.
pub fn open_layer_dump(path: &Path) -> Result<LayerDump> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_layer_dump(BufReader::new(file), path)
}

pub fn read_layer_dump<R: BufRead>(reader: R, path: &Path) -> Result<LayerDump> {
    let mut lines = reader.lines().enumerate();
    let header = match lines.next() {
        Some((_, line)) => parse_led_header(&line.map_err(|e| Error::io(path, e))?, path)?,
        None => return Err(Error::format_at(path, 1, "empty LED file")),
    };
    let mut entries = Vec::new();
    for (idx, line) in lines {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let raw: RawEntry = serde_json::from_str(&line)
            .map_err(|e| Error::format_at(path, idx + 1, format!("bad LED entry: {e}")))?;
        entries.push(decode_entry(raw, &header)?);
    }
    LayerDump::new(header, entries)
}

pub fn write_layer_dump<W: Write>(w: W, header: &LedHeader, entries: &[DumpEntry]) -> Result<()> {
    let mut w = BufWriter::new(w);
    let io = |e: std::io::Error| Error::io(PathBuf::from("<led output>"), e);
    serde_json::to_writer(&mut w, header)?;
    w.write_all(b"\n").map_err(io)?;
    for e in entries {
        serde_json::to_writer(&mut w, &e.to_raw())?;
        w.write_all(b"\n").map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}

/// Outcome of [`validate_dump`].
#[derive(Debug, Clone, Default, Serialize)]
pub struct DumpValidation {
    pub header: Option<LedHeader>,
    pub entries_checked: usize,
    pub violations: Vec<DumpViolation>,
}

#[derive(Debug, Clone, Serialize)]
pub struct DumpViolation {
    pub line: usize,
    pub text_id: Option<String>,
    pub message: String,
}

impl DumpValidation {
    pub fn is_clean(&self) -> bool {
        self.header.is_some() && self.violations.is_empty()
    }
}

/// Check every entry of an LED file, collecting all violations instead of
/// stopping at the first one.
pub fn validate_dump(path: &Path) -> Result<DumpValidation> {
    let mut file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut content = String::new();
    file.read_to_string(&mut content)
        .map_err(|e| Error::io(path, e))?;
    let mut report = DumpValidation::default();
    let mut lines = content.lines().enumerate();
    let header = match lines.next() {
        Some((_, l)) => match parse_led_header(l, path) {
            Ok(h) => h,
            Err(e) => {
                report.violations.push(DumpViolation {
                    line: 1,
                    text_id: None,
                    message: e.to_string(),
                });
                return Ok(report);
            }
        },
        None => {
            report.violations.push(DumpViolation {
                line: 1,
                text_id: None,
                message: "empty file".into(),
            });
            return Ok(report);
        }
    };
    let mut seen = HashMap::new();
    for (idx, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        report.entries_checked += 1;
        let raw: RawEntry = match serde_json::from_str(line) {
            Ok(r) => r,
            Err(e) => {
                report.violations.push(DumpViolation {
                    line: idx + 1,
                    text_id: None,
                    message: format!("bad LED entry: {e}"),
                });
                continue;
            }
        };
        let id = raw.text_id.clone();
        if let Some(prev) = seen.insert(id.clone(), idx + 1) {
            report.violations.push(DumpViolation {
                line: idx + 1,
                text_id: Some(id.clone()),
                message: format!("duplicate text_id (first on line {prev})"),
            });
        }
        if let Err(e) = decode_entry(raw, &header) {
            let message = match e {
                Error::Dump { message, .. } => message,
                other => other.to_string(),
            };
            report.violations.push(DumpViolation {
                line: idx + 1,
                text_id: Some(id),
                message,
            });
        }
    }
    report.header = Some(header);
    Ok(report)
}

// ---------------------------------------------------------------------------
// Layer selection

/// How contextual token vectors are taken from the layer stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(tag = "mode", content = "layer", rename_all = "snake_case")]
pub enum LayerSetting {
    /// Layer `l` only.
    Single(usize),
    /// Mean of layers `0..=l`.
    Aggregate(usize),
}

impl LayerSetting {
    pub fn layer(&self) -> usize {
        match *self {
            LayerSetting::Single(l) | LayerSetting::Aggregate(l) => l,
        }
    }

    pub fn apply(&self, entry: &DumpEntry) -> Result<Array2<f32>> {
        match *self {
            LayerSetting::Single(l) => select_layer(entry, l).map(|v| v.to_owned()),
            LayerSetting::Aggregate(l) => aggregate_layers(entry, l),
        }
    }
}

impl std::fmt::Display for LayerSetting {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LayerSetting::Single(l) => write!(f, "single({l})"),
            LayerSetting::Aggregate(l) => write!(f, "agg({l})"),
        }
    }
}

pub fn select_layer(entry: &DumpEntry, layer: usize) -> Result<ArrayView2<'_, f32>> {
    let max = entry.num_layers();
    if layer > max {
        return Err(Error::LayerOutOfRange { layer, max });
    }
    Ok(entry.vectors.index_axis(Axis(0), layer))
}

/// Elementwise mean of layers `0..=layer`, accumulated in `f64`.
pub fn aggregate_layers(entry: &DumpEntry, layer: usize) -> Result<Array2<f32>> {
    let max = entry.num_layers();
    if layer > max {
        return Err(Error::LayerOutOfRange { layer, max });
    }
    let (t, d) = (entry.num_subtokens(), entry.dim());
    let mut acc = Array2::<f64>::zeros((t, d));
    for l in 0..=layer {
        let view = entry.vectors.index_axis(Axis(0), l);
        acc.zip_mut_with(&view, |a, &v| *a += f64::from(v));
    }
    let n = (layer + 1) as f64;
    Ok(acc.mapv(|a| (a / n) as f32))
}
