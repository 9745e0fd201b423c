//! Command-line interface.
//!
//! Every subcommand's options can also come from a JSON config file
//! (`--config run.json`) whose keys are the option names with `-` replaced
//! by `_` (e.g. `static_embeddings`, `skip_oov`). Options given on the
//! command line win over the file. The fully resolved options are echoed as
//! `run_config` into every JSON output.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use crate::analysis::{
    compare_settings, layer_curves, length_bin_analysis, settings_from_grid, write_accuracy_matrix, BinReport,
};
use crate::anisotropy::{Correction, FitGranularity, FitOptions};
use crate::dataset::{balance_labels, filter_token_overlap, load_pair_dataset, split, PairDataset, SplitRatios};
use crate::embedding_store::{load_static_embeddings, open_layer_dump, validate_dump, LayerDump, LayerSetting, StaticEmbeddings};
use crate::error::{Error, Result};
use crate::evaluation::{
    evaluate, frequency_baseline, grid_search, majority_baseline, EvalReport, FrequencyTable, GridCandidate,
    GridEntry, Scorer,
};
use crate::ingest::{ingest, Adapter, ColumnSpec};
use crate::scoring::{score_text, Pooling, ScoreConfig};
use crate::source::EmbeddingSource;
use crate::style_vectors::{build_feature_vector, load_seed_set, FeatureVector, SeedSet};

pub const SEED_ENV: &str = "STYLEPROBE_SEED";

#[derive(Debug, Parser)]
#[command(name = "styleprobe", version, about = "Lexical style directions in embedding spaces")]
struct Cli {
    /// JSON file with option values; command-line options take precedence.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Worker threads for evaluation (default: logical cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    /// Log progress and warnings at info level.
    #[arg(short, long, global = true)]
    verbose: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a feature vector from seed pairs.
    BuildVector(BuildVectorArgs),
    /// Score texts against a feature vector (JSON Lines).
    Score(ScoreArgs),
    /// Convert a raw corpus to the canonical pair TSV, filter, balance, split.
    Preprocess(PreprocessArgs),
    /// Pairwise classification accuracy of a feature vector and baselines.
    Evaluate(EvaluateArgs),
    /// Select a configuration on validation data and report it on test data.
    Grid(GridArgs),
    /// Length bins, setting comparisons, layer curves and accuracy matrices.
    Analyze(AnalyzeArgs),
    /// Check a layer-embedding dump for header, shape and offset problems.
    ValidateDump(ValidateDumpArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum LayerMode {
    Single,
    Agg,
}

impl std::str::FromStr for LayerMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "single" => Ok(LayerMode::Single),
            "agg" | "aggregate" => Ok(LayerMode::Agg),
            other => Err(Error::Usage(format!("unknown layer setting `{other}` (expected single or agg)"))),
        }
    }
}

impl LayerMode {
    fn at(self, layer: usize) -> LayerSetting {
        match self {
            LayerMode::Single => LayerSetting::Single(layer),
            LayerMode::Agg => LayerSetting::Aggregate(layer),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum Baseline {
    Majority,
    Frequency,
}

impl std::str::FromStr for Baseline {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(Baseline::Majority),
            "frequency" => Ok(Baseline::Frequency),
            other => Err(Error::Usage(format!("unknown baseline `{other}` (expected majority or frequency)"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum AdapterKind {
    Canonical,
    Columns,
    Parallel,
}

impl std::str::FromStr for AdapterKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "canonical" => Ok(AdapterKind::Canonical),
            "columns" => Ok(AdapterKind::Columns),
            "parallel" => Ok(AdapterKind::Parallel),
            other => Err(Error::Usage(format!(
                "unknown adapter `{other}` (expected canonical, columns or parallel)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct SourceArgs {
    /// Static embeddings text file (`word v1 ... vd` per line).
    #[arg(long = "static", value_name = "PATH")]
    static_embeddings: Vec<PathBuf>,
    /// Layer-embedding dump (LED) file.
    #[arg(long, value_name = "PATH")]
    dump: Vec<PathBuf>,
    /// Expected embedding dimension of static files.
    #[arg(long)]
    dim: Option<usize>,
    /// Disable the lowercase retry for out-of-vocabulary words.
    #[arg(long)]
    no_case_fallback: bool,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ScoringArgs {
    /// mean or max; used at both subtoken->word and word->text level.
    #[arg(long)]
    pooling: Option<Pooling>,
    /// none, abtt, standardization or rank.
    #[arg(long)]
    correction: Option<Correction>,
    /// Layer index for dump sources.
    #[arg(long)]
    layer: Option<usize>,
    /// single (one layer) or agg (mean of layers 0..=layer).
    #[arg(long)]
    setting: Option<LayerMode>,
    /// Leave out-of-vocabulary words out of pooling.
    #[arg(long)]
    skip_oov: bool,
    /// Remove components of `x - mu` rather than of `x` in abtt.
    #[arg(long)]
    centered_projection: bool,
    /// Fit corrections on seed tokens (token) or per-text means (text).
    #[arg(long)]
    fit_granularity: Option<FitGranularity>,
    /// Number of components removed by abtt.
    #[arg(long)]
    k: Option<usize>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct BuildVectorArgs {
    /// Seed pair TSV (`low TAB high`).
    #[arg(long)]
    seeds: Option<PathBuf>,
    /// Feature name (default: seed file stem).
    #[arg(long)]
    feature: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    scoring: ScoringArgs,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ScoreArgs {
    /// Feature vector JSON.
    #[arg(long)]
    dvec: Option<PathBuf>,
    /// Text to score (repeatable).
    #[arg(long)]
    text: Vec<String>,
    /// File with one text per line.
    #[arg(long)]
    texts: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    scoring: ScoringArgs,
    /// JSON Lines output (default: stdout).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct PreprocessArgs {
    /// canonical, columns or parallel.
    #[arg(long)]
    adapter: Option<AdapterKind>,
    /// Input file (for parallel: the text showing the feature more strongly).
    #[arg(long)]
    input: Option<PathBuf>,
    /// Parallel adapter: the line-aligned weaker-feature file.
    #[arg(long)]
    input_low: Option<PathBuf>,
    /// Columns adapter: field delimiter (`tab` or a single character).
    #[arg(long)]
    delimiter: Option<String>,
    #[arg(long)]
    text0_col: Option<usize>,
    #[arg(long)]
    text1_col: Option<usize>,
    /// Column holding the 0/1 gold label.
    #[arg(long)]
    label_col: Option<usize>,
    /// Gold label for every row when there is no label column.
    #[arg(long)]
    fixed_gold: Option<u8>,
    /// Column holding the annotator agreement fraction.
    #[arg(long)]
    agreement_col: Option<usize>,
    #[arg(long)]
    min_agreement: Option<f64>,
    #[arg(long)]
    skip_header: bool,
    #[arg(long)]
    feature: Option<String>,
    /// Drop pairs where one text's token set contains the other's.
    #[arg(long)]
    filter_overlap: bool,
    /// Randomly swap pair order (flipping gold) to balance labels.
    #[arg(long)]
    balance: bool,
    /// Random seed (default: $STYLEPROBE_SEED, else 0).
    #[arg(long)]
    seed: Option<u64>,
    /// Split ratios `train:val:test`, e.g. 8:1:1 or 0:1:1.
    #[arg(long)]
    split: Option<String>,
    /// Allow empty split parts.
    #[arg(long)]
    allow_empty: bool,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    /// Output file prefix (default: feature name).
    #[arg(long)]
    name: Option<String>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct EvaluateArgs {
    /// Canonical pair TSV.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Feature vector JSON (alternative to --seeds).
    #[arg(long)]
    dvec: Option<PathBuf>,
    /// Seed pair TSV to build the feature vector from.
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    feature: Option<String>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    #[command(flatten)]
    #[serde(flatten)]
    scoring: ScoringArgs,
    /// Also run baselines: majority, frequency.
    #[arg(long, value_delimiter = ',')]
    baselines: Vec<Baseline>,
    /// `token TAB count` table for the frequency baseline.
    #[arg(long)]
    freq_table: Option<PathBuf>,
    /// Only run the baselines.
    #[arg(long)]
    baselines_only: bool,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct GridArgs {
    #[arg(long)]
    seeds: Option<PathBuf>,
    #[arg(long)]
    feature: Option<String>,
    #[arg(long)]
    val: Option<PathBuf>,
    #[arg(long)]
    test: Option<PathBuf>,
    #[command(flatten)]
    #[serde(flatten)]
    source: SourceArgs,
    /// Layers for dump sources: `0..12` (inclusive) or `0,4,8`.
    #[arg(long)]
    layers: Option<String>,
    /// single, agg or both.
    #[arg(long, value_delimiter = ',')]
    settings: Vec<LayerMode>,
    #[arg(long, value_delimiter = ',')]
    pooling: Vec<Pooling>,
    #[arg(long, value_delimiter = ',')]
    corrections: Vec<Correction>,
    #[arg(long)]
    skip_oov: bool,
    #[arg(long)]
    centered_projection: bool,
    #[arg(long)]
    fit_granularity: Option<FitGranularity>,
    #[arg(long)]
    k: Option<usize>,
    /// Record test accuracy for every configuration (for layer curves).
    #[arg(long)]
    test_all: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accuracy matrix (configuration x split) as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct AnalyzeArgs {
    /// Outputs of `evaluate` or `grid`.
    #[arg(long = "report", value_name = "PATH")]
    reports: Vec<PathBuf>,
    /// Use test instead of validation accuracies from grid outputs.
    #[arg(long)]
    use_test: bool,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Accuracy matrix (configuration x dataset) as CSV.
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, Args, Serialize, Deserialize)]
struct ValidateDumpArgs {
    #[arg(long)]
    dump: Option<PathBuf>,
    /// JSON report path.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(argv) {
        Ok(m) => m,
        Err(e) => {
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let cli = match Cli::from_arg_matches(&matches) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return 1;
        }
    };
    let _ = env_logger::Builder::from_env(
        env_logger::Env::default().default_filter_or(if cli.verbose { "info" } else { "warn" }),
    )
    .format_timestamp(None)
    .try_init();
    if let Some(n) = cli.workers {
        if n == 0 {
            eprintln!("error: --workers must be positive");
            return 1;
        }
        // Only the first configuration in a process takes effect.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match dispatch(&cli, sub) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(cli: &Cli, sub: &ArgMatches) -> Result<i32> {
    let file = cli.config.as_deref().map(read_config_file).transpose()?;
    let file = file.as_ref();
    match &cli.command {
        Command::BuildVector(a) => cmd_build_vector(resolve(a, sub, file, "build-vector")?),
        Command::Score(a) => cmd_score(resolve(a, sub, file, "score")?),
        Command::Preprocess(a) => cmd_preprocess(resolve(a, sub, file, "preprocess")?),
        Command::Evaluate(a) => cmd_evaluate(resolve(a, sub, file, "evaluate")?),
        Command::Grid(a) => cmd_grid(resolve(a, sub, file, "grid")?),
        Command::Analyze(a) => cmd_analyze(resolve(a, sub, file, "analyze")?),
        Command::ValidateDump(a) => cmd_validate_dump(resolve(a, sub, file, "validate-dump")?),
    }
}

fn read_config_file(path: &Path) -> Result<Map<String, Value>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    match serde_json::from_str::<Value>(&text) {
        Ok(Value::Object(map)) => Ok(map),
        Ok(_) => Err(Error::Format {
            path: Some(path.to_path_buf()),
            line: None,
            message: "config file must hold a JSON object".into(),
        }),
        Err(e) => Err(Error::Format {
            path: Some(path.to_path_buf()),
            line: Some(e.line()),
            message: e.to_string(),
        }),
    }
}

/// Resolved options of one command, with the JSON form echoed into outputs.
struct Resolved<T> {
    args: T,
    echo: Value,
}

/// Overlay command-line options on config-file values.
fn resolve<T>(args: &T, matches: &ArgMatches, file: Option<&Map<String, Value>>, command: &str) -> Result<Resolved<T>>
where
    T: Serialize + DeserializeOwned,
{
    let Value::Object(mut merged) = serde_json::to_value(args)? else {
        unreachable!("argument structs serialize to objects")
    };
    if let Some(file) = file {
        for (key, value) in file {
            if key == "command" {
                if value.as_str() != Some(command) {
                    return Err(Error::Usage(format!("config file is for command {value}, not `{command}`")));
                }
                continue;
            }
            if !merged.contains_key(key) {
                let mut known: Vec<&String> = merged.keys().collect();
                known.sort();
                return Err(Error::Usage(format!(
                    "unknown config key `{key}` for `{command}` (valid keys: {})",
                    known.iter().map(|k| k.as_str()).collect::<Vec<_>>().join(", ")
                )));
            }
            if matches.value_source(key) != Some(ValueSource::CommandLine) {
                merged.insert(key.clone(), value.clone());
            }
        }
    }
    let args: T = serde_json::from_value(Value::Object(merged))
        .map_err(|e| Error::Usage(format!("invalid config value: {e}")))?;
    let Value::Object(mut echo) = serde_json::to_value(&args)? else {
        unreachable!("argument structs serialize to objects")
    };
    echo.insert("command".into(), Value::String(command.into()));
    Ok(Resolved {
        args,
        echo: Value::Object(echo),
    })
}

fn require<'a, T>(value: &'a Option<T>, flag: &str) -> Result<&'a T> {
    value.as_ref().ok_or_else(|| Error::Usage(format!("missing required option {flag}")))
}

fn check_inputs<'a>(paths: impl IntoIterator<Item = &'a Path>) -> Result<()> {
    for p in paths {
        if !p.is_file() {
            return Err(Error::io(
                p,
                std::io::Error::new(std::io::ErrorKind::NotFound, "input file not found"),
            ));
        }
    }
    Ok(())
}

fn resolve_seed(seed: Option<u64>) -> Result<u64> {
    if let Some(s) = seed {
        return Ok(s);
    }
    match std::env::var(SEED_ENV) {
        Ok(v) => v
            .trim()
            .parse()
            .map_err(|_| Error::Usage(format!("{SEED_ENV}={v:?} is not a 64-bit unsigned integer"))),
        Err(_) => Ok(0),
    }
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::io(dir, e)),
        _ => Ok(()),
    }
}

fn write_json(path: &Path, value: &Value) -> Result<()> {
    create_parent(path)?;
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    serde_json::to_writer_pretty(&mut w, value)?;
    writeln!(w).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

fn with_envelope(kind: &str, echo: &Value, payload: Value) -> Value {
    let mut map = match payload {
        Value::Object(m) => m,
        other => {
            let mut m = Map::new();
            m.insert("result".into(), other);
            m
        }
    };
    map.insert("kind".into(), Value::String(kind.into()));
    map.insert("run_config".into(), echo.clone());
    Value::Object(map)
}

enum Loaded {
    Static(StaticEmbeddings),
    Dump(LayerDump),
}

impl Loaded {
    fn source(&self) -> EmbeddingSource<'_> {
        match self {
            Loaded::Static(s) => EmbeddingSource::Static(s),
            Loaded::Dump(d) => EmbeddingSource::Contextual(d),
        }
    }
}

impl SourceArgs {
    fn paths(&self) -> impl Iterator<Item = &Path> {
        self.static_embeddings.iter().chain(&self.dump).map(PathBuf::as_path)
    }

    fn check(&self, allow_many: bool) -> Result<()> {
        if !self.static_embeddings.is_empty() && !self.dump.is_empty() {
            return Err(Error::Usage("--static and --dump are mutually exclusive".into()));
        }
        let n = self.static_embeddings.len() + self.dump.len();
        if n == 0 {
            return Err(Error::Usage("an embedding source is required (--static or --dump)".into()));
        }
        if n > 1 && !allow_many {
            return Err(Error::Usage("this command takes a single embedding source".into()));
        }
        Ok(())
    }

    fn load(&self) -> Result<Vec<Loaded>> {
        let mut out = Vec::new();
        for p in &self.static_embeddings {
            let store = load_static_embeddings(p, self.dim)?.with_case_fallback(!self.no_case_fallback);
            out.push(Loaded::Static(store));
        }
        for p in &self.dump {
            out.push(Loaded::Dump(open_layer_dump(p)?));
        }
        Ok(out)
    }

    fn load_one(&self) -> Result<Loaded> {
        Ok(self.load()?.pop().expect("one source checked"))
    }
}

impl ScoringArgs {
    /// Score configuration from options, falling back on the settings a
    /// stored feature vector was built with.
    fn config(&self, contextual: bool, fvec: Option<&FeatureVector>) -> Result<ScoreConfig> {
        let prov = fvec.map(|f| &f.provenance);
        let correction = self
            .correction
            .or(prov.map(|p| p.correction))
            .unwrap_or_default();
        let layers = match (self.layer, prov.and_then(|p| p.layers)) {
            (Some(l), _) => Some(self.setting.unwrap_or(LayerMode::Single).at(l)),
            (None, Some(stored)) if self.setting.is_none() => Some(stored),
            (None, Some(stored)) => Some(self.setting.expect("checked").at(stored.layer())),
            (None, None) if contextual => {
                return Err(Error::Usage("--layer is required for dump sources".into()))
            }
            (None, None) => None,
        };
        let stored_centered = fvec
            .and_then(|f| f.correction_stats.as_ref())
            .is_some_and(|s| s.centered_projection);
        let cfg = ScoreConfig {
            pooling: self.pooling.unwrap_or_default(),
            layers,
            skip_oov: self.skip_oov,
            fit: FitOptions {
                k_override: self.k,
                centered_projection: self.centered_projection || stored_centered,
            },
            fit_granularity: self
                .fit_granularity
                .or(prov.map(|p| p.fit_granularity))
                .unwrap_or_default(),
            ..ScoreConfig::default()
        }
        .with_correction(correction);
        Ok(cfg)
    }
}

fn feature_name(explicit: &Option<String>, seeds: &Path) -> String {
    explicit.clone().unwrap_or_else(|| {
        seeds
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "feature".into())
    })
}

fn cmd_build_vector(r: Resolved<BuildVectorArgs>) -> Result<i32> {
    let a = &r.args;
    let seeds_path = require(&a.seeds, "--seeds")?;
    let out = require(&a.out, "--out")?;
    a.source.check(false)?;
    check_inputs(std::iter::once(seeds_path.as_path()).chain(a.source.paths()))?;

    let seeds = load_seed_set(seeds_path, &feature_name(&a.feature, seeds_path))?;
    let loaded = a.source.load_one()?;
    let source = loaded.source();
    let cfg = a.scoring.config(source.is_contextual(), None)?;
    let fvec = build_feature_vector(&seeds, &source, &cfg)?;
    write_json(out, &with_envelope("feature_vector", &r.echo, serde_json::to_value(&fvec)?))?;
    println!(
        "{}: {} pairs, dim {}, {} -> {}",
        fvec.feature,
        seeds.len(),
        fvec.dim,
        cfg.label(),
        out.display()
    );
    Ok(0)
}

fn read_texts(path: &Path) -> Result<Vec<String>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut texts = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if !line.trim().is_empty() {
            texts.push(line);
        }
    }
    Ok(texts)
}

fn cmd_score(r: Resolved<ScoreArgs>) -> Result<i32> {
    let a = &r.args;
    let dvec_path = require(&a.dvec, "--dvec")?;
    a.source.check(false)?;
    check_inputs(
        std::iter::once(dvec_path.as_path())
            .chain(a.texts.as_deref())
            .chain(a.source.paths()),
    )?;
    let mut texts = a.text.clone();
    if let Some(p) = &a.texts {
        texts.extend(read_texts(p)?);
    }
    if texts.is_empty() {
        return Err(Error::Usage("nothing to score (use --text or --texts)".into()));
    }

    let fvec = FeatureVector::load_json(dvec_path)?;
    let loaded = a.source.load_one()?;
    let source = loaded.source();
    let cfg = a.scoring.config(source.is_contextual(), Some(&fvec))?;
    let config = json!({"score": cfg, "source_id": source.id(), "run_config": r.echo});

    let mut lines = Vec::with_capacity(texts.len());
    for text in &texts {
        let s = score_text(text, &fvec, &source, &cfg)?;
        let line = json!({
            "text": text,
            "feature": fvec.feature,
            "value": s.value,
            "word_scores": s.word_scores,
            "oov_count": s.oov_count,
            "config": config,
        });
        lines.push(serde_json::to_string(&line)?);
    }
    match &a.out {
        Some(out) => {
            create_parent(out)?;
            let body: String = lines.iter().map(|l| format!("{l}\n")).collect();
            fs::write(out, body).map_err(|e| Error::io(out, e))?;
            println!("scored {} texts -> {}", lines.len(), out.display());
        }
        None => {
            let stdout = std::io::stdout();
            let mut w = stdout.lock();
            for l in &lines {
                writeln!(w, "{l}").map_err(|e| Error::io("<stdout>", e))?;
            }
        }
    }
    Ok(0)
}

fn parse_delimiter(s: &str) -> Result<char> {
    match s {
        "tab" | "\\t" | "\t" => Ok('\t'),
        _ => {
            let mut chars = s.chars();
            match (chars.next(), chars.next()) {
                (Some(c), None) => Ok(c),
                _ => Err(Error::Usage(format!("delimiter must be one character or `tab`, got {s:?}"))),
            }
        }
    }
}

fn cmd_preprocess(mut r: Resolved<PreprocessArgs>) -> Result<i32> {
    let seed = resolve_seed(r.args.seed)?;
    r.args.seed = Some(seed);
    r.echo["seed"] = json!(seed);
    let a = &r.args;
    let input = require(&a.input, "--input")?.clone();
    let feature = require(&a.feature, "--feature")?;
    let out_dir = require(&a.out_dir, "--out-dir")?;
    let kind = a.adapter.unwrap_or(AdapterKind::Canonical);
    let ratios = a.split.as_deref().map(SplitRatios::parse).transpose()?;
    let adapter = match kind {
        AdapterKind::Canonical => Adapter::Canonical { path: input },
        AdapterKind::Columns => {
            let d = ColumnSpec::default();
            Adapter::Columns {
                path: input,
                spec: ColumnSpec {
                    delimiter: a.delimiter.as_deref().map(parse_delimiter).transpose()?.unwrap_or(d.delimiter),
                    text0: a.text0_col.unwrap_or(d.text0),
                    text1: a.text1_col.unwrap_or(d.text1),
                    label: if a.fixed_gold.is_some() && a.label_col.is_none() {
                        None
                    } else {
                        a.label_col.or(d.label)
                    },
                    fixed_gold: a.fixed_gold.unwrap_or(d.fixed_gold),
                    agreement: a.agreement_col,
                    min_agreement: a.min_agreement.unwrap_or(d.min_agreement),
                    skip_header: a.skip_header,
                },
            }
        }
        AdapterKind::Parallel => Adapter::Parallel {
            high: input,
            low: require(&a.input_low, "--input-low")?.clone(),
        },
    };
    check_inputs(adapter.inputs())?;

    let (ds, manifest) = ingest(&adapter, feature)?;
    let mut ds = if a.filter_overlap { filter_token_overlap(&ds) } else { ds };
    if a.balance {
        ds = balance_labels(&ds, seed);
    }
    let parts: Vec<PairDataset> = match ratios {
        Some(ratios) => {
            let (tr, va, te) = split(&ds, ratios, seed, a.allow_empty)?;
            vec![tr, va, te]
        }
        None => vec![ds],
    };

    let name = a.name.clone().unwrap_or_else(|| feature.clone());
    fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let mut outputs = Vec::new();
    for part in &parts {
        let file_name = match &part.split {
            Some(s) => format!("{name}.{s}.tsv"),
            None => format!("{name}.tsv"),
        };
        let path = out_dir.join(file_name);
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        part.write_tsv(f).map_err(|e| Error::io(&path, e))?;
        outputs.push(json!({
            "path": path.display().to_string(),
            "split": part.split,
            "n": part.len(),
            "gold0_fraction": part.gold0_fraction(),
            "provenance": part.provenance,
        }));
        println!("{:>6} pairs -> {}", part.len(), path.display());
    }
    let manifest_path = out_dir.join(format!("{name}.manifest.json"));
    write_json(
        &manifest_path,
        &with_envelope("preprocess_manifest", &r.echo, json!({"ingest": manifest, "outputs": outputs})),
    )?;
    Ok(0)
}

fn summary_row(r: &EvalReport) -> String {
    format!(
        "{:<14} {:>7.1} {:>6} {:>6}  {}",
        r.method,
        r.accuracy * 100.0,
        r.n,
        r.tie_count,
        r.config.map(|c| c.label()).unwrap_or_default()
    )
}

fn cmd_evaluate(r: Resolved<EvaluateArgs>) -> Result<i32> {
    let a = &r.args;
    let dataset_path = require(&a.dataset, "--dataset")?;
    let want_freq = a.baselines.contains(&Baseline::Frequency);
    if want_freq && a.freq_table.is_none() {
        return Err(Error::Usage("the frequency baseline needs --freq-table".into()));
    }
    if !a.baselines_only {
        match (&a.dvec, &a.seeds) {
            (Some(_), Some(_)) => return Err(Error::Usage("--dvec and --seeds are mutually exclusive".into())),
            (None, None) => return Err(Error::Usage("one of --dvec or --seeds is required".into())),
            _ => {}
        }
        a.source.check(false)?;
    } else if a.baselines.is_empty() {
        return Err(Error::Usage("--baselines-only needs --baselines".into()));
    }
    check_inputs(
        std::iter::once(dataset_path.as_path())
            .chain(a.dvec.as_deref())
            .chain(a.seeds.as_deref())
            .chain(a.freq_table.as_deref())
            .chain(a.source.paths()),
    )?;

    let feature = a
        .feature
        .clone()
        .or_else(|| a.seeds.as_deref().map(|s| feature_name(&None, s)))
        .unwrap_or_default();
    let mut ds = load_pair_dataset(dataset_path, &feature)?;
    let mut reports = Vec::new();
    if !a.baselines_only {
        let loaded = a.source.load_one()?;
        let source = loaded.source();
        let fvec = match (&a.dvec, &a.seeds) {
            (Some(p), _) => FeatureVector::load_json(p)?,
            (None, Some(p)) => {
                let cfg = a.scoring.config(source.is_contextual(), None)?;
                build_feature_vector(&load_seed_set(p, &feature)?, &source, &cfg)?
            }
            (None, None) => unreachable!("checked above"),
        };
        if ds.feature.is_empty() {
            ds.feature = fvec.feature.clone();
        }
        let cfg = a.scoring.config(source.is_contextual(), Some(&fvec))?;
        let scorer = Scorer::new(&fvec, source, cfg)?;
        reports.push(evaluate(&ds, &scorer)?);
    }
    for b in &a.baselines {
        reports.push(match b {
            Baseline::Majority => majority_baseline(&ds),
            Baseline::Frequency => {
                let table = FrequencyTable::load(require(&a.freq_table, "--freq-table")?)?;
                frequency_baseline(&ds, &table, a.scoring.pooling.unwrap_or_default())
            }
        });
    }
    let bins: Vec<BinReport> = reports.iter().map(length_bin_analysis).collect();

    let out = require(&a.out, "--out")?;
    write_json(
        out,
        &with_envelope("evaluation", &r.echo, json!({"reports": reports, "length_bins": bins})),
    )?;
    println!("{:<14} {:>7} {:>6} {:>6}  config", "method", "acc(%)", "n", "ties");
    for rep in &reports {
        println!("{}", summary_row(rep));
    }
    Ok(0)
}

/// Parse `a..b` (inclusive) or a comma-separated list.
fn parse_layer_list(s: &str) -> Result<Vec<usize>> {
    let bad = || Error::Usage(format!("bad layer list `{s}` (expected e.g. 0..12 or 0,4,8)"));
    if let Some((lo, hi)) = s.split_once("..") {
        let lo: usize = lo.trim().parse().map_err(|_| bad())?;
        let hi: usize = hi.trim().trim_start_matches('=').parse().map_err(|_| bad())?;
        if lo > hi {
            return Err(bad());
        }
        return Ok((lo..=hi).collect());
    }
    s.split(',').map(|p| p.trim().parse().map_err(|_| bad())).collect()
}

fn cmd_grid(r: Resolved<GridArgs>) -> Result<i32> {
    let a = &r.args;
    let seeds_path = require(&a.seeds, "--seeds")?;
    let val_path = require(&a.val, "--val")?;
    let test_path = require(&a.test, "--test")?;
    let out = require(&a.out, "--out")?;
    a.source.check(true)?;
    let contextual = !a.source.dump.is_empty();
    let layers = match (&a.layers, contextual) {
        (Some(l), true) => parse_layer_list(l)?,
        (None, true) => return Err(Error::Usage("--layers is required for dump sources".into())),
        (_, false) => Vec::new(),
    };
    check_inputs(
        [seeds_path.as_path(), val_path.as_path(), test_path.as_path()]
            .into_iter()
            .chain(a.source.paths()),
    )?;

    let feature = feature_name(&a.feature, seeds_path);
    let seeds: SeedSet = load_seed_set(seeds_path, &feature)?;
    let mut val = load_pair_dataset(val_path, &feature)?;
    let mut test = load_pair_dataset(test_path, &feature)?;
    val.split.get_or_insert_with(|| "val".into());
    test.split.get_or_insert_with(|| "test".into());
    let loaded = a.source.load()?;

    let poolings = if a.pooling.is_empty() { vec![Pooling::Mean] } else { a.pooling.clone() };
    let corrections = if a.corrections.is_empty() { vec![Correction::None] } else { a.corrections.clone() };
    let settings = if a.settings.is_empty() { vec![LayerMode::Single] } else { a.settings.clone() };
    let base = ScoreConfig {
        skip_oov: a.skip_oov,
        fit: FitOptions {
            k_override: a.k,
            centered_projection: a.centered_projection,
        },
        fit_granularity: a.fit_granularity.unwrap_or_default(),
        ..ScoreConfig::default()
    };
    let mut candidates = Vec::new();
    for l in &loaded {
        let source = l.source();
        let layer_settings: Vec<Option<LayerSetting>> = if source.is_contextual() {
            settings
                .iter()
                .flat_map(|m| layers.iter().map(move |&layer| Some(m.at(layer))))
                .collect()
        } else {
            vec![None]
        };
        for ls in &layer_settings {
            for &pooling in &poolings {
                for &correction in &corrections {
                    candidates.push(GridCandidate {
                        source,
                        cfg: ScoreConfig {
                            pooling,
                            layers: *ls,
                            ..base
                        }
                        .with_correction(correction),
                    });
                }
            }
        }
    }
    for c in &candidates {
        c.source.check_layers(c.cfg.layers)?;
    }

    let result = grid_search(&candidates, &seeds, &val, &test, a.test_all)?;
    let (single_val, agg_val) = settings_from_grid(&result.entries, false);
    let mut comparisons = Map::new();
    if !single_val.is_empty() && !agg_val.is_empty() {
        comparisons.insert("val".into(), serde_json::to_value(compare_settings(&single_val, &agg_val)?)?);
        if a.test_all {
            let (s, g) = settings_from_grid(&result.entries, true);
            comparisons.insert("test".into(), serde_json::to_value(compare_settings(&s, &g)?)?);
        }
    }
    let curves = layer_curves(&result.entries, a.test_all);

    write_json(
        out,
        &with_envelope(
            "grid",
            &r.echo,
            json!({
                "winner": result.entries[result.winner],
                "entries": result.entries,
                "val_report": result.val_report,
                "test_report": result.test_report,
                "feature_vector": result.feature_vector,
                "setting_comparison": comparisons,
                "layer_curves": curves,
            }),
        ),
    )?;
    if let Some(csv_path) = &a.csv {
        let mut cells = BTreeMap::new();
        for e in &result.entries {
            cells.insert((e.label.clone(), "val".to_string()), e.val_accuracy);
            if let Some(t) = e.test_accuracy {
                cells.insert((e.label.clone(), "test".to_string()), t);
            }
        }
        let w = &result.entries[result.winner];
        cells.insert((w.label.clone(), "test".to_string()), result.test_report.accuracy);
        write_csv(csv_path, &cells)?;
    }
    let w = &result.entries[result.winner];
    println!("{} configurations", result.entries.len());
    println!(
        "winner: {}  val {:.1}  test {:.1}",
        w.label,
        w.val_accuracy * 100.0,
        result.test_report.accuracy * 100.0
    );
    Ok(0)
}

fn write_csv(path: &Path, cells: &BTreeMap<(String, String), f64>) -> Result<()> {
    create_parent(path)?;
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    write_accuracy_matrix(f, cells)
}

#[derive(Deserialize)]
struct EvaluationFile {
    reports: Vec<EvalReport>,
}

#[derive(Deserialize)]
struct GridFile {
    entries: Vec<GridEntry>,
}

fn dataset_label(report: &EvalReport) -> String {
    let name = Path::new(&report.dataset)
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| report.dataset.clone());
    name.trim_end_matches(".tsv").to_string()
}

fn cmd_analyze(r: Resolved<AnalyzeArgs>) -> Result<i32> {
    let a = &r.args;
    let out = require(&a.out, "--out")?;
    if a.reports.is_empty() {
        return Err(Error::Usage("at least one --report is required".into()));
    }
    check_inputs(a.reports.iter().map(PathBuf::as_path))?;

    let mut bins = Vec::new();
    let mut merged: BTreeMap<(String, String), EvalReport> = BTreeMap::new();
    let mut comparisons = Vec::new();
    let mut curves = Vec::new();
    let mut cells = BTreeMap::new();
    for path in &a.reports {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let value: Value = serde_json::from_str(&text)?;
        let file_label = path.display().to_string();
        match value.get("kind").and_then(Value::as_str) {
            Some("evaluation") => {
                let f: EvaluationFile = serde_json::from_value(value)?;
                for rep in f.reports {
                    bins.push(json!({"file": file_label, "bins": length_bin_analysis(&rep)}));
                    let label = match (&rep.source_id, rep.config) {
                        (Some(s), Some(c)) => format!("{s}/{}", c.label()),
                        _ => rep.method.clone(),
                    };
                    cells.insert((label, dataset_label(&rep)), rep.accuracy);
                    let key = (rep.feature.clone(), rep.method.clone());
                    match merged.get_mut(&key) {
                        Some(m) => {
                            m.predictions.extend(rep.predictions);
                            m.dataset = format!("{}+{}", m.dataset, rep.dataset);
                        }
                        None => {
                            merged.insert(key, rep);
                        }
                    }
                }
            }
            Some("grid") => {
                let f: GridFile = serde_json::from_value(value)?;
                let (single, agg) = settings_from_grid(&f.entries, a.use_test);
                if !single.is_empty() && !agg.is_empty() {
                    comparisons.push(json!({"file": file_label, "comparison": compare_settings(&single, &agg)?}));
                }
                curves.push(json!({"file": file_label, "curves": layer_curves(&f.entries, a.use_test)}));
                for e in &f.entries {
                    cells.insert((e.label.clone(), "val".into()), e.val_accuracy);
                    if let Some(t) = e.test_accuracy {
                        cells.insert((e.label.clone(), "test".into()), t);
                    }
                }
            }
            _ => {
                return Err(Error::Format {
                    path: Some(path.clone()),
                    line: None,
                    message: "not an evaluate or grid output".into(),
                })
            }
        }
    }
    let merged_bins: Vec<BinReport> = merged.values().map(length_bin_analysis).collect();
    write_json(
        out,
        &with_envelope(
            "analysis",
            &r.echo,
            json!({
                "length_bins": bins,
                "merged_length_bins": merged_bins,
                "setting_comparisons": comparisons,
                "layer_curves": curves,
            }),
        ),
    )?;
    if let Some(csv_path) = &a.csv {
        write_csv(csv_path, &cells)?;
    }
    for b in &merged_bins {
        println!("{} / {} ({} pairs)", b.feature, b.method, b.total);
        for bin in &b.bins {
            match bin.accuracy {
                Some(acc) => println!("  {:<8} {:>5} {:>6.1}", bin.bin, bin.n, acc * 100.0),
                None => println!("  {:<8} {:>5}      -", bin.bin, bin.n),
            }
        }
    }
    for c in &comparisons {
        println!(
            "{}: agg >= single in {:.1}% of configs, mean gain {:+.2} points",
            c["file"].as_str().unwrap_or_default(),
            c["comparison"]["pct_2_beats_1"].as_f64().unwrap_or_default(),
            c["comparison"]["mean_acc_gain"].as_f64().unwrap_or_default()
        );
    }
    Ok(0)
}

fn cmd_validate_dump(r: Resolved<ValidateDumpArgs>) -> Result<i32> {
    let a = &r.args;
    let path = require(&a.dump, "--dump")?;
    check_inputs([path.as_path()])?;
    let report = validate_dump(path)?;
    for v in &report.violations {
        eprintln!(
            "line {}: {}: {}",
            v.line,
            v.text_id.as_deref().unwrap_or("<unknown>"),
            v.message
        );
    }
    if let Some(out) = &a.out {
        write_json(out, &with_envelope("dump_validation", &r.echo, serde_json::to_value(&report)?))?;
    }
    println!(
        "{}: {} entries checked, {} violations",
        path.display(),
        report.entries_checked,
        report.violations.len()
    );
    Ok(if report.is_clean() { 0 } else { 2 })
}
