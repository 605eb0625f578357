//! The `stx` command line. Every command writes its artifacts plus a
//! `manifest.json` into an output directory; JSON artifacts with an open
//! schema carry the manifest's `run_sha256`, the rest are listed with their
//! hashes in the manifest's `outputs` table.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{
    documents_to_lines, filter_corpus, ingest, lines_to_jsonl, read_prepared, train_test_split,
    CorpusLine, Ingest, LabeledCorpus, Source,
};
use crate::error::{Error, Result};
use crate::evaluation::{category_size_curve, cross_validate, score, MetricsReport};
use crate::expansion::{
    build_category_thesaurus, expand_documents, ExpansionConfig, HashtagCounts, Side, Thesaurus,
    ThesaurusKind, Weighting, DEFAULT_MIN_SUPPORT,
};
use crate::learners::{grid_search, ModelKind};
use crate::pipeline::{
    ExpansionSettings, FittedPipeline, Pipeline, PipelineConfig, MODEL_FILE, PIPELINE_FILE,
    VOCABULARY_FILE,
};
use crate::rng::sha256_hex;
use crate::synth::{generate, taxonomy_to_jsonl, SynthConfig};
use crate::taxonomy::load_taxonomy;
use crate::textprep::{
    normalize_document, parse_stop_list, vocabulary_reduction_report, Document, Stemmer, StopLists,
};

pub const DEFAULT_SEED: u64 = 42;
pub const SEED_ENV: &str = "STX_SEED";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const LOG_FILE: &str = "run.log";

#[derive(Debug, Parser)]
#[command(
    name = "stx",
    version,
    about = "Short-text product classification toolkit"
)]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Master seed. Falls back to the config file, then $STX_SEED, then 42.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic labeled corpus, taxonomy and unlabeled stream.
    Synth(SynthArgs),
    /// Ingest, resolve root categories, filter and normalize a corpus.
    Prepare(PrepareArgs),
    /// Build a hashtag or category thesaurus.
    Thesaurus(ThesaurusArgs),
    /// Expand every document of a prepared corpus with a thesaurus.
    Expand(ExpandArgs),
    /// Fit the pipeline on a prepared corpus and save the model.
    Train(TrainArgs),
    /// Cross-validate, hold out, or score a saved model.
    Evaluate(EvaluateArgs),
    /// Cross-validate once per value of one parameter.
    Sweep(SweepArgs),
    /// Pick C by cross-validated macro-F1.
    GridSearch(GridSearchArgs),
}

#[derive(Debug, Args)]
pub struct OutArg {
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args, Default)]
pub struct TextArgs {
    #[arg(long)]
    pub stop_general: Option<PathBuf>,
    #[arg(long)]
    pub stop_platform: Option<PathBuf>,
    #[arg(long)]
    pub stemmer: Option<Stemmer>,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long)]
    pub docs_per_class: Option<usize>,
    #[arg(long)]
    pub majority_factor: Option<usize>,
    #[arg(long)]
    pub vocab_per_class: Option<usize>,
    #[arg(long)]
    pub shared_vocab: Option<usize>,
    #[arg(long)]
    pub noise_rate: Option<f64>,
    #[arg(long)]
    pub hashtag_rate: Option<f64>,
    #[arg(long)]
    pub retweet_rate: Option<f64>,
    #[arg(long)]
    pub unlabeled: Option<usize>,
}

#[derive(Debug, Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub taxonomy: Option<PathBuf>,
    #[arg(long, default_value = "twitter")]
    pub source: Source,
    #[arg(long)]
    pub min_class_size: Option<usize>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct ThesaurusArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub kind: ThesaurusKind,
    /// Raw JSON-Lines stream (hashtag) or prepared corpus (category).
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long, default_value_t = 20)]
    pub max_depth: usize,
    #[arg(long, default_value_t = DEFAULT_MIN_SUPPORT)]
    pub min_support: usize,
    #[arg(long, default_value = "tfidf")]
    pub weighting: Weighting,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args)]
pub struct ExpandArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub thesaurus: Option<PathBuf>,
    #[arg(long, default_value_t = 2)]
    pub n: usize,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Args, Default)]
pub struct PipelineArgs {
    #[arg(long)]
    pub ngram_max: Option<usize>,
    #[arg(long)]
    pub min_df: Option<usize>,
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    #[arg(long)]
    pub learner: Option<ModelKind>,
    #[arg(long = "C", alias = "c")]
    pub c: Option<f64>,
    /// CLASS=WEIGHT, repeatable.
    #[arg(long = "class-weight", value_parser = parse_class_weight)]
    pub class_weights: Vec<(String, f64)>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub nb_counts: bool,
    #[arg(long)]
    pub expansion: Option<ExpansionChoice>,
    #[arg(long)]
    pub expansion_n: Option<usize>,
    #[arg(long)]
    pub expansion_side: Option<Side>,
    /// Hashtag thesaurus used for expansion.
    #[arg(long)]
    pub thesaurus: Option<PathBuf>,
    #[command(flatten)]
    pub text: TextArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ExpansionChoice {
    None,
    Hashtag,
    Category,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Protocol {
    Cv,
    Split,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
    Both,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    /// Score a saved model instead of fitting.
    #[arg(long)]
    pub model: Option<PathBuf>,
    #[arg(long, default_value = "cv")]
    pub protocol: Protocol,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub test_fraction: Option<f64>,
    #[arg(long, default_value = "both")]
    pub format: Format,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    #[value(name = "keep_fraction")]
    KeepFraction,
    #[value(name = "expansion_n")]
    ExpansionN,
    #[value(name = "class_weight")]
    ClassWeight,
    #[value(name = "C")]
    C,
}

impl Axis {
    fn name(self) -> &'static str {
        match self {
            Axis::KeepFraction => "keep_fraction",
            Axis::ExpansionN => "expansion_n",
            Axis::ClassWeight => "class_weight",
            Axis::C => "C",
        }
    }
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long)]
    pub axis: Axis,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub values: Vec<f64>,
    /// Class whose weight is swept; defaults to the largest class.
    #[arg(long)]
    pub target_class: Option<String>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

#[derive(Debug, Args)]
pub struct GridSearchArgs {
    #[command(flatten)]
    pub out: OutArg,
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, value_delimiter = ',', required = true, num_args = 1..)]
    pub candidates: Vec<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[command(flatten)]
    pub pipeline: PipelineArgs,
}

fn parse_class_weight(s: &str) -> std::result::Result<(String, f64), String> {
    let (class, w) = s.rsplit_once('=').ok_or("expected CLASS=WEIGHT")?;
    let w: f64 = w.parse().map_err(|e| format!("bad weight {w:?}: {e}"))?;
    Ok((class.to_string(), w))
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PathsConfig {
    pub corpus: Option<PathBuf>,
    pub taxonomy: Option<PathBuf>,
    pub stop_general: Option<PathBuf>,
    pub stop_platform: Option<PathBuf>,
    pub thesaurus: Option<PathBuf>,
    pub unlabeled: Option<PathBuf>,
    pub model: Option<PathBuf>,
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolConfig {
    pub folds: usize,
    pub test_fraction: f64,
    pub min_class_size: usize,
}

impl Default for ProtocolConfig {
    fn default() -> Self {
        ProtocolConfig {
            folds: 5,
            test_fraction: 0.25,
            min_class_size: 5,
        }
    }
}

/// Everything a run depends on. Loaded from `--config`, then overridden by
/// flags; the merged value is recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub stemmer: Stemmer,
    pub paths: PathsConfig,
    pub pipeline: PipelineConfig,
    pub protocol: ProtocolConfig,
    pub synth: SynthConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        serde_json::from_slice(&bytes)
            .map_err(|e| Error::InvalidConfig(format!("{}: {e}", path.display())))
    }
}

/// Seed precedence: flag, config file, `$STX_SEED`, default.
pub fn resolve_seed(flag: Option<u64>, config: Option<u64>, env: Option<&str>) -> Result<u64> {
    if let Some(s) = flag.or(config) {
        return Ok(s);
    }
    match env {
        Some(v) => v.trim().parse().map_err(|_| {
            Error::InvalidConfig(format!("{SEED_ENV}={v:?} is not an unsigned integer"))
        }),
        None => Ok(DEFAULT_SEED),
    }
}

fn required(path: Option<PathBuf>, what: &str) -> Result<PathBuf> {
    path.ok_or_else(|| {
        Error::InvalidConfig(format!(
            "missing --{what} (or paths.{} in the config file)",
            what.replace('-', "_")
        ))
    })
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn set_path(slot: &mut Option<PathBuf>, value: Option<PathBuf>) {
    if value.is_some() {
        *slot = value;
    }
}

impl RunConfig {
    fn apply_text(&mut self, text: TextArgs) {
        set_path(&mut self.paths.stop_general, text.stop_general);
        set_path(&mut self.paths.stop_platform, text.stop_platform);
        set(&mut self.stemmer, text.stemmer);
    }

    fn apply_pipeline(&mut self, args: PipelineArgs) {
        let p = &mut self.pipeline;
        set(&mut p.ngram_max, args.ngram_max);
        set(&mut p.min_df, args.min_df);
        set(&mut p.keep_fraction, args.keep_fraction);
        set(&mut p.learner, args.learner);
        set(&mut p.c, args.c);
        set(&mut p.epochs, args.epochs);
        set(&mut p.alpha, args.alpha);
        p.nb_counts |= args.nb_counts;
        p.class_weights.extend(args.class_weights);
        match args.expansion {
            Some(ExpansionChoice::None) => p.expansion = None,
            Some(ExpansionChoice::Hashtag) => {
                p.expansion.get_or_insert_with(Default::default).kind = ThesaurusKind::Hashtag
            }
            Some(ExpansionChoice::Category) => {
                p.expansion.get_or_insert_with(Default::default).kind = ThesaurusKind::Category
            }
            None => {}
        }
        if let Some(e) = p.expansion.as_mut() {
            set(&mut e.n, args.expansion_n);
            set(&mut e.side, args.expansion_side);
        }
        set_path(&mut self.paths.thesaurus, args.thesaurus);
        self.apply_text(args.text);
    }

    fn stop_lists(&self) -> Result<StopLists> {
        let builtin = StopLists::builtin();
        let read = |p: &Option<PathBuf>,
                    fallback: &std::collections::BTreeSet<String>|
         -> Result<Vec<String>> {
            match p {
                Some(p) => Ok(parse_stop_list(
                    &std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?,
                )),
                None => Ok(fallback.iter().cloned().collect()),
            }
        };
        Ok(StopLists::new(
            read(&self.paths.stop_general, builtin.general())?,
            read(&self.paths.stop_platform, builtin.platform())?,
        ))
    }

    /// Hashtag thesaurus for the pipeline, when hashtag expansion is on.
    fn hashtag_thesaurus(&self) -> Result<Option<Thesaurus>> {
        match &self.pipeline.expansion {
            Some(e) if e.kind == ThesaurusKind::Hashtag && e.n > 0 => {
                let path = required(self.paths.thesaurus.clone(), "thesaurus")?;
                let t = Thesaurus::read(&path)?;
                if t.kind != ThesaurusKind::Hashtag {
                    return Err(Error::InvalidConfig(format!(
                        "{} is not a hashtag thesaurus",
                        path.display()
                    )));
                }
                Ok(Some(t))
            }
            _ => Ok(None),
        }
    }
}

/// Output directory bookkeeping: the manifest's `run` section (command,
/// config, input hashes) is hashed before any output is written.
struct Outputs {
    dir: PathBuf,
    command: String,
    run: Value,
    run_sha256: String,
    files: BTreeMap<String, String>,
}

impl Outputs {
    fn new(dir: &Path, command: &str, config: Value, inputs: &[(&str, &Path)]) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let mut hashed = BTreeMap::new();
        for (role, path) in inputs {
            let bytes = std::fs::read(path).map_err(|e| Error::io(*path, e))?;
            hashed.insert(
                role.to_string(),
                json!({ "path": path.display().to_string(), "sha256": sha256_hex(&bytes) }),
            );
        }
        let run = json!({
            "tool": "stx",
            "version": env!("CARGO_PKG_VERSION"),
            "command": command,
            "config": config,
            "inputs": hashed,
        });
        let run_sha256 = sha256_hex(&serde_json::to_vec(&run)?);
        Ok(Outputs {
            dir: dir.to_path_buf(),
            command: command.to_string(),
            run,
            run_sha256,
            files: BTreeMap::new(),
        })
    }

    fn bytes(&mut self, name: &str, bytes: &[u8]) -> Result<()> {
        crate::io::write_atomic(&self.dir.join(name), bytes)?;
        self.files.insert(name.to_string(), sha256_hex(bytes));
        Ok(())
    }

    /// Writes a JSON object with `manifest_sha256` added at the top level.
    fn json<T: Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let mut value = serde_json::to_value(value)?;
        if let Value::Object(map) = &mut value {
            map.insert(
                "manifest_sha256".into(),
                Value::String(self.run_sha256.clone()),
            );
        }
        let mut bytes = serde_json::to_vec_pretty(&value)?;
        bytes.push(b'\n');
        self.bytes(name, &bytes)
    }

    /// Records a file some other writer already put in the directory.
    fn adopt(&mut self, name: &str) -> Result<()> {
        let path = self.dir.join(name);
        let bytes = std::fs::read(&path).map_err(|e| Error::io(&path, e))?;
        self.files.insert(name.to_string(), sha256_hex(&bytes));
        Ok(())
    }

    fn finish(self) -> Result<()> {
        let manifest = json!({
            "run": self.run,
            "run_sha256": self.run_sha256,
            "outputs": self.files,
        });
        let mut bytes = serde_json::to_vec_pretty(&manifest)?;
        bytes.push(b'\n');
        crate::io::write_atomic(&self.dir.join(MANIFEST_FILE), &bytes)?;
        let secs = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let log = self.dir.join(LOG_FILE);
        let mut f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(|e| Error::io(&log, e))?;
        writeln!(f, "{secs} {} {}", self.command, self.run_sha256)
            .map_err(|e| Error::io(&log, e))?;
        Ok(())
    }
}

fn jsonl_to_vec(lines: &[CorpusLine]) -> Result<Vec<u8>> {
    lines_to_jsonl(lines)
}

/// Parses `args` and runs the command. Returns the process exit code:
/// 0 on success, 1 runtime, 2 usage, 3 data.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            let mut source = std::error::Error::source(&e);
            while let Some(s) = source {
                eprintln!("  caused by: {s}");
                source = s.source();
            }
            e.kind().exit_code()
        }
    }
}

pub fn execute(cli: Cli) -> Result<()> {
    let mut config = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    let env = std::env::var(SEED_ENV).ok();
    let seed = resolve_seed(cli.seed, config.seed, env.as_deref())?;
    config.seed = Some(seed);
    config.pipeline.seed = seed;
    config.synth.seed = seed;
    match cli.command {
        Command::Synth(a) => cmd_synth(config, a),
        Command::Prepare(a) => cmd_prepare(config, a),
        Command::Thesaurus(a) => cmd_thesaurus(config, a),
        Command::Expand(a) => cmd_expand(config, a),
        Command::Train(a) => cmd_train(config, a),
        Command::Evaluate(a) => cmd_evaluate(config, a),
        Command::Sweep(a) => cmd_sweep(config, a),
        Command::GridSearch(a) => cmd_grid_search(config, a),
    }
}

fn out_dir(config: &mut RunConfig, out: OutArg) -> Result<PathBuf> {
    set_path(&mut config.paths.out, out.out);
    required(config.paths.out.clone(), "out")
}

/// Config as recorded in the manifest: output location excluded so that
/// identical runs into different directories share a manifest hash.
fn manifest_config(config: &RunConfig, extra: Value) -> Result<Value> {
    let mut c = config.clone();
    c.paths.out = None;
    Ok(json!({ "run_config": c, "args": extra }))
}

pub fn cmd_synth(mut config: RunConfig, args: SynthArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    let s = &mut config.synth;
    set(&mut s.classes, args.classes);
    set(&mut s.docs_per_class, args.docs_per_class);
    set(&mut s.majority_factor, args.majority_factor);
    set(&mut s.vocab_per_class, args.vocab_per_class);
    set(&mut s.shared_vocab, args.shared_vocab);
    set(&mut s.noise_rate, args.noise_rate);
    set(&mut s.hashtag_rate, args.hashtag_rate);
    set(&mut s.retweet_rate, args.retweet_rate);
    set(&mut s.unlabeled, args.unlabeled);
    let corpus = generate(&config.synth)?;
    let mut out = Outputs::new(&dir, "synth", manifest_config(&config, Value::Null)?, &[])?;
    out.bytes("corpus.jsonl", &jsonl_to_vec(&corpus.labeled)?)?;
    out.bytes("taxonomy.jsonl", &taxonomy_to_jsonl(&corpus.taxonomy)?)?;
    if !corpus.unlabeled.is_empty() {
        out.bytes("unlabeled.jsonl", &jsonl_to_vec(&corpus.unlabeled)?)?;
    }
    out.finish()
}

#[derive(Serialize)]
struct PrepareSummary {
    ingest: crate::corpus::IngestSummary,
    retweets_removed: usize,
    unlabeled_or_unresolved: usize,
    classes_dropped: Vec<String>,
    documents: usize,
    class_counts: BTreeMap<String, usize>,
    vocabulary: crate::textprep::VocabularyReduction,
    taxonomy_duplicate_lines: usize,
    taxonomy_placeholders: usize,
}

/// Most frequent non-hashtag tokens, ties broken alphabetically.
fn top_keywords(docs: &[&Document], k: usize) -> Vec<String> {
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for d in docs {
        for t in d.tokens.iter().filter(|t| !t.starts_with('#')) {
            *counts.entry(t).or_insert(0) += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    ranked
        .into_iter()
        .take(k)
        .map(|(w, _)| w.to_string())
        .collect()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn cmd_prepare(mut config: RunConfig, args: PrepareArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    set_path(&mut config.paths.taxonomy, args.taxonomy);
    set(&mut config.protocol.min_class_size, args.min_class_size);
    config.apply_text(args.text);
    let corpus_path = required(config.paths.corpus.clone(), "corpus")?;
    let taxonomy_path = required(config.paths.taxonomy.clone(), "taxonomy")?;
    let seed = config.seed.unwrap_or(DEFAULT_SEED);
    let stops = config.stop_lists()?;

    let (records, ingest_summary) = ingest(&corpus_path, args.source)?;
    let graph = load_taxonomy(&taxonomy_path)?;
    let nodes: Vec<&str> = records
        .iter()
        .filter_map(|r| r.label_node.as_deref())
        .collect();
    let resolution = graph.resolve_all(&nodes, seed);
    let labels: BTreeMap<String, String> = records
        .iter()
        .filter_map(|r| {
            let root = resolution.resolved.get(r.label_node.as_deref()?)?;
            Some((r.id.clone(), graph.display_name(root).to_string()))
        })
        .collect();
    let retweets = records.iter().filter(|r| r.retweet_of.is_some()).count();
    let originals = records.len() - retweets;
    let labeled_originals = records
        .iter()
        .filter(|r| r.retweet_of.is_none() && labels.contains_key(&r.id))
        .count();
    let mut before_classes: BTreeMap<&str, usize> = BTreeMap::new();
    for r in records.iter().filter(|r| r.retweet_of.is_none()) {
        if let Some(l) = labels.get(&r.id) {
            *before_classes.entry(l).or_insert(0) += 1;
        }
    }
    let filtered = filter_corpus(records.clone(), &labels, config.protocol.min_class_size)?;
    let classes_dropped = before_classes
        .keys()
        .filter(|c| !filtered.class_counts().contains_key(**c))
        .map(|c| c.to_string())
        .collect();

    let docs: Vec<(Document, Option<String>)> = filtered
        .documents()
        .par_iter()
        .map(|r| {
            let doc = normalize_document(
                r.record.id.clone(),
                &r.record.text,
                Some(r.root_category.clone()),
                &stops,
                config.stemmer,
            );
            (doc, r.record.label_node.clone())
        })
        .collect();
    let raw_texts: Vec<&str> = filtered
        .documents()
        .iter()
        .map(|r| r.record.text.as_str())
        .collect();
    let just_docs: Vec<Document> = docs.iter().map(|(d, _)| d.clone()).collect();
    let reduction = vocabulary_reduction_report(raw_texts.iter().copied(), &just_docs);

    let lines: Vec<CorpusLine> = docs
        .iter()
        .map(|(d, node)| CorpusLine {
            id: d.id.clone(),
            text: d.text(),
            retweet_of: None,
            label_node: node.clone(),
            root_category: d.label.clone(),
        })
        .collect();

    let mut by_class: BTreeMap<&str, Vec<&Document>> = BTreeMap::new();
    for d in &just_docs {
        by_class
            .entry(d.label.as_deref().unwrap_or_default())
            .or_default()
            .push(d);
    }
    let mut rows: Vec<(&str, &Vec<&Document>)> = by_class.iter().map(|(c, d)| (*c, d)).collect();
    rows.sort_by(|a, b| b.1.len().cmp(&a.1.len()).then_with(|| a.0.cmp(b.0)));
    let mut table = String::from("category,count,top_keywords\n");
    for (class, members) in rows {
        table.push_str(&format!(
            "{},{},{}\n",
            csv_field(class),
            members.len(),
            csv_field(&top_keywords(members, 3).join(" "))
        ));
    }

    let summary = PrepareSummary {
        ingest: ingest_summary,
        retweets_removed: retweets,
        unlabeled_or_unresolved: originals - labeled_originals,
        classes_dropped,
        documents: filtered.len(),
        class_counts: filtered.class_counts().clone(),
        vocabulary: reduction,
        taxonomy_duplicate_lines: graph.duplicate_lines(),
        taxonomy_placeholders: graph.placeholders(),
    };
    let extra = json!({ "source": args.source, "stop_lists": stops.hashes() });
    let mut out = Outputs::new(
        &dir,
        "prepare",
        manifest_config(&config, extra)?,
        &[("corpus", &corpus_path), ("taxonomy", &taxonomy_path)],
    )?;
    out.bytes("prepared.jsonl", &jsonl_to_vec(&lines)?)?;
    out.bytes("distribution.csv", table.as_bytes())?;
    out.json("resolution.json", &resolution)?;
    out.json("summary.json", &summary)?;
    out.finish()
}

const THESAURUS_FILE: &str = "thesaurus.json";
const BATCH: usize = 8192;

pub fn cmd_thesaurus(mut config: RunConfig, args: ThesaurusArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    config.apply_text(args.text);
    let input = match args.kind {
        ThesaurusKind::Hashtag => args.input.or_else(|| config.paths.unlabeled.clone()),
        ThesaurusKind::Category => args.input.or_else(|| config.paths.corpus.clone()),
    };
    let input = required(input, "input")?;
    let stops = config.stop_lists()?;
    let mut warnings = Vec::new();
    let thesaurus = match args.kind {
        ThesaurusKind::Hashtag => {
            let mut stream = Ingest::open(&input, Source::Twitter)?;
            let mut counts = HashtagCounts::new();
            loop {
                let batch: Vec<_> = stream.by_ref().take(BATCH).collect::<Result<Vec<_>>>()?;
                if batch.is_empty() {
                    break;
                }
                let shard = batch
                    .par_iter()
                    .fold(HashtagCounts::new, |mut acc, r| {
                        acc.add(
                            &normalize_document(
                                r.id.clone(),
                                &r.text,
                                None,
                                &stops,
                                config.stemmer,
                            ),
                            &stops,
                        );
                        acc
                    })
                    .reduce(HashtagCounts::new, |mut a, b| {
                        a.merge(b);
                        a
                    });
                counts.merge(shard);
            }
            stream.finish()?;
            counts.finish(&stops, args.max_depth, args.min_support, "unlabeled stream")
        }
        ThesaurusKind::Category => {
            let corpus = read_prepared(&input, &stops, config.stemmer)?;
            let (t, w) = build_category_thesaurus(&corpus, args.weighting, args.max_depth, &stops);
            warnings = w;
            t
        }
    };
    for w in &warnings {
        log::warn!("{w}");
    }
    let extra = json!({
        "kind": args.kind,
        "max_depth": args.max_depth,
        "min_support": args.min_support,
        "weighting": args.weighting,
        "stop_lists": stops.hashes(),
    });
    let mut out = Outputs::new(
        &dir,
        "thesaurus",
        manifest_config(&config, extra)?,
        &[("input", &input)],
    )?;
    out.bytes(THESAURUS_FILE, &thesaurus.to_bytes()?)?;
    out.json(
        "thesaurus_report.json",
        &json!({ "keys": thesaurus.entries.len(), "warnings": warnings }),
    )?;
    out.finish()
}

pub fn cmd_expand(mut config: RunConfig, args: ExpandArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    set_path(&mut config.paths.thesaurus, args.thesaurus);
    config.apply_text(args.text);
    let corpus_path = required(config.paths.corpus.clone(), "corpus")?;
    let thesaurus_path = required(config.paths.thesaurus.clone(), "thesaurus")?;
    let stops = config.stop_lists()?;
    let corpus = read_prepared(&corpus_path, &stops, config.stemmer)?;
    let thesaurus = Thesaurus::read(&thesaurus_path)?;
    let exp = ExpansionConfig {
        n: args.n,
        seed: config.seed.unwrap_or(DEFAULT_SEED),
        side: Side::Document,
    };
    let (docs, stats) = expand_documents(corpus.documents(), &thesaurus, &exp)?;
    let mut out = Outputs::new(
        &dir,
        "expand",
        manifest_config(&config, json!({ "n": args.n }))?,
        &[("corpus", &corpus_path), ("thesaurus", &thesaurus_path)],
    )?;
    out.bytes("expanded.jsonl", &jsonl_to_vec(&documents_to_lines(&docs))?)?;
    out.json("expansion_stats.json", &stats)?;
    out.finish()
}

fn load_corpus(config: &RunConfig) -> Result<(PathBuf, LabeledCorpus<Document>)> {
    let path = required(config.paths.corpus.clone(), "corpus")?;
    let corpus = read_prepared(&path, &config.stop_lists()?, config.stemmer)?;
    Ok((path, corpus))
}

fn pipeline_inputs<'a>(corpus: &'a Path, config: &'a RunConfig) -> Vec<(&'a str, &'a Path)> {
    let mut inputs = vec![("corpus", corpus)];
    if let (Some(t), Some(e)) = (&config.paths.thesaurus, &config.pipeline.expansion) {
        if e.kind == ThesaurusKind::Hashtag {
            inputs.push(("thesaurus", t.as_path()));
        }
    }
    inputs
}

pub fn cmd_train(mut config: RunConfig, args: TrainArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    config.apply_pipeline(args.pipeline);
    let (corpus_path, corpus) = load_corpus(&config)?;
    let thesaurus = config.hashtag_thesaurus()?;
    let fitted = Pipeline::fit(&config.pipeline, &corpus, thesaurus.as_ref())?;
    let inputs = pipeline_inputs(&corpus_path, &config);
    let mut out = Outputs::new(
        &dir,
        "train",
        manifest_config(&config, Value::Null)?,
        &inputs,
    )?;
    fitted.save(&dir)?;
    for name in [MODEL_FILE, VOCABULARY_FILE, PIPELINE_FILE] {
        out.adopt(name)?;
    }
    out.finish()
}

fn write_report(
    out: &mut Outputs,
    format: Format,
    report: &MetricsReport,
    folds: Option<&[MetricsReport]>,
) -> Result<()> {
    if matches!(format, Format::Json | Format::Both) {
        let body = match folds {
            Some(f) => json!({ "mean": report, "folds": f }),
            None => json!({ "report": report }),
        };
        out.json("metrics.json", &body)?;
    }
    if matches!(format, Format::Csv | Format::Both) {
        out.bytes("metrics.csv", report.to_csv().as_bytes())?;
        let mut curve = String::from("support,f1\n");
        for (s, f) in category_size_curve(report) {
            curve.push_str(&format!("{s},{f:.4}\n"));
        }
        out.bytes("category_size.csv", curve.as_bytes())?;
    }
    Ok(())
}

pub fn cmd_evaluate(mut config: RunConfig, args: EvaluateArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    set_path(&mut config.paths.model, args.model);
    set(&mut config.protocol.folds, args.folds);
    set(&mut config.protocol.test_fraction, args.test_fraction);
    config.apply_pipeline(args.pipeline);
    let (corpus_path, corpus) = load_corpus(&config)?;
    let seed = config.seed.unwrap_or(DEFAULT_SEED);

    if let Some(model_dir) = config.paths.model.clone() {
        let fitted = FittedPipeline::load(&model_dir)?;
        config.pipeline = fitted.config.clone();
        let thesaurus = config.hashtag_thesaurus()?;
        let predicted = fitted.predict(corpus.documents(), thesaurus.as_ref())?;
        let mut report = score(&predicted, &corpus.labels())?;
        report.config = serde_json::to_value(&fitted.config).ok();
        let model_file = model_dir.join(MODEL_FILE);
        let mut inputs = pipeline_inputs(&corpus_path, &config);
        inputs.push(("model", &model_file));
        let mut out = Outputs::new(
            &dir,
            "evaluate",
            manifest_config(&config, json!({ "protocol": "model" }))?,
            &inputs,
        )?;
        write_report(&mut out, args.format, &report, None)?;
        return out.finish();
    }

    let thesaurus = config.hashtag_thesaurus()?;
    let (report, folds) = match args.protocol {
        Protocol::Cv => {
            let cv = cross_validate(
                &config.pipeline,
                &corpus,
                config.protocol.folds,
                seed,
                thesaurus.as_ref(),
            )?;
            (cv.mean, Some(cv.folds))
        }
        Protocol::Split => {
            let (train, test) = train_test_split(&corpus, config.protocol.test_fraction, seed)?;
            let fitted = Pipeline::fit(&config.pipeline, &train, thesaurus.as_ref())?;
            let predicted = fitted.predict(test.documents(), thesaurus.as_ref())?;
            let mut report = score(&predicted, &test.labels())?;
            report.config = serde_json::to_value(&config.pipeline).ok();
            (report, None)
        }
    };
    let inputs = pipeline_inputs(&corpus_path, &config);
    let protocol = match args.protocol {
        Protocol::Cv => "cv",
        Protocol::Split => "split",
    };
    let mut out = Outputs::new(
        &dir,
        "evaluate",
        manifest_config(&config, json!({ "protocol": protocol }))?,
        &inputs,
    )?;
    write_report(&mut out, args.format, &report, folds.as_deref())?;
    out.finish()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub value: f64,
    pub macro_f1: f64,
    pub macro_p: f64,
    pub macro_r: f64,
}

/// Largest class; ties go to the alphabetically first name.
fn majority_class(corpus: &LabeledCorpus<Document>) -> String {
    let mut best: Option<(&String, usize)> = None;
    for (c, &n) in corpus.class_counts() {
        if best.is_none_or(|(_, m)| n > m) {
            best = Some((c, n));
        }
    }
    best.map(|(c, _)| c.clone()).unwrap_or_default()
}

pub fn sweep_config(
    base: &PipelineConfig,
    axis: Axis,
    value: f64,
    target: &str,
) -> Result<PipelineConfig> {
    let mut p = base.clone();
    match axis {
        Axis::KeepFraction => p.keep_fraction = value,
        Axis::C => p.c = value,
        Axis::ClassWeight => {
            p.class_weights.insert(target.to_string(), value);
        }
        Axis::ExpansionN => {
            if value < 0.0 || value.fract() != 0.0 {
                return Err(Error::InvalidConfig(format!(
                    "expansion_n must be a whole number, got {value}"
                )));
            }
            p.expansion.get_or_insert_with(ExpansionSettings::default).n = value as usize;
        }
    }
    Ok(p)
}

pub fn cmd_sweep(mut config: RunConfig, args: SweepArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    set(&mut config.protocol.folds, args.folds);
    config.apply_pipeline(args.pipeline);
    let (corpus_path, corpus) = load_corpus(&config)?;
    let seed = config.seed.unwrap_or(DEFAULT_SEED);
    let target = args
        .target_class
        .clone()
        .unwrap_or_else(|| majority_class(&corpus));
    if args.axis == Axis::ExpansionN && config.pipeline.expansion.is_none() {
        config.pipeline.expansion = Some(ExpansionSettings::default());
    }
    let thesaurus = config.hashtag_thesaurus()?;

    let configs = args
        .values
        .iter()
        .map(|&v| sweep_config(&config.pipeline, args.axis, v, &target))
        .collect::<Result<Vec<_>>>()?;
    let rows = configs
        .par_iter()
        .zip(&args.values)
        .map(|(p, &value)| {
            let m = cross_validate(p, &corpus, config.protocol.folds, seed, thesaurus.as_ref())?
                .mean
                .macro_avg;
            Ok(SweepRow {
                value,
                macro_f1: m.f1,
                macro_p: m.precision,
                macro_r: m.recall,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let mut csv = format!("{},macro_f1,macro_p,macro_r\n", args.axis.name());
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            r.value, r.macro_f1, r.macro_p, r.macro_r
        ));
    }
    let inputs = pipeline_inputs(&corpus_path, &config);
    let extra = json!({ "axis": args.axis, "values": args.values, "target_class": target });
    let mut out = Outputs::new(&dir, "sweep", manifest_config(&config, extra)?, &inputs)?;
    out.bytes("sweep.csv", csv.as_bytes())?;
    out.json(
        "sweep.json",
        &json!({ "axis": args.axis, "target_class": target, "rows": rows }),
    )?;
    out.finish()
}

pub fn cmd_grid_search(mut config: RunConfig, args: GridSearchArgs) -> Result<()> {
    let dir = out_dir(&mut config, args.out)?;
    set_path(&mut config.paths.corpus, args.corpus);
    set(&mut config.protocol.folds, args.folds);
    config.apply_pipeline(args.pipeline);
    if config.protocol.folds < 2 {
        return Err(Error::InvalidConfig(
            "grid search needs at least 2 folds".into(),
        ));
    }
    let (corpus_path, corpus) = load_corpus(&config)?;
    let seed = config.seed.unwrap_or(DEFAULT_SEED);
    let thesaurus = config.hashtag_thesaurus()?;
    let result = grid_search(&args.candidates, |c| {
        let p = PipelineConfig {
            c,
            ..config.pipeline.clone()
        };
        Ok(
            cross_validate(&p, &corpus, config.protocol.folds, seed, thesaurus.as_ref())?
                .mean
                .macro_avg
                .f1,
        )
    })?;
    let inputs = pipeline_inputs(&corpus_path, &config);
    let mut out = Outputs::new(
        &dir,
        "grid-search",
        manifest_config(&config, json!({ "candidates": args.candidates }))?,
        &inputs,
    )?;
    out.json("grid_search.json", &result)?;
    out.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seed_precedence() {
        assert_eq!(resolve_seed(Some(1), Some(2), Some("3")).unwrap(), 1);
        assert_eq!(resolve_seed(None, Some(2), Some("3")).unwrap(), 2);
        assert_eq!(resolve_seed(None, None, Some("3")).unwrap(), 3);
        assert_eq!(resolve_seed(None, None, None).unwrap(), DEFAULT_SEED);
        assert!(matches!(
            resolve_seed(None, None, Some("x")),
            Err(Error::InvalidConfig(_))
        ));
    }

    #[test]
    fn flags_override_config_file() {
        let mut config: RunConfig =
            serde_json::from_str(r#"{"pipeline": {"C": 2.0, "keep_fraction": 0.5}}"#).unwrap();
        config.apply_pipeline(PipelineArgs {
            c: Some(7.0),
            ..Default::default()
        });
        assert_eq!(config.pipeline.c, 7.0);
        assert_eq!(config.pipeline.keep_fraction, 0.5);
    }

    #[test]
    fn unknown_config_keys_are_rejected() {
        assert!(serde_json::from_str::<RunConfig>(r#"{"pipelin": {}}"#).is_err());
    }

    #[test]
    fn class_weight_flag_parses() {
        assert_eq!(
            parse_class_weight("Home & Kitchen=0.1").unwrap(),
            ("Home & Kitchen".into(), 0.1)
        );
        assert!(parse_class_weight("Books").is_err());
    }

    #[test]
    fn sweep_axes_touch_one_field() {
        let base = PipelineConfig::default();
        assert_eq!(
            sweep_config(&base, Axis::KeepFraction, 0.1, "x")
                .unwrap()
                .keep_fraction,
            0.1
        );
        assert_eq!(sweep_config(&base, Axis::C, 3.0, "x").unwrap().c, 3.0);
        assert_eq!(
            sweep_config(&base, Axis::ClassWeight, 0.1, "Books")
                .unwrap()
                .class_weights["Books"],
            0.1
        );
        assert_eq!(
            sweep_config(&base, Axis::ExpansionN, 3.0, "x")
                .unwrap()
                .expansion
                .unwrap()
                .n,
            3
        );
        assert!(sweep_config(&base, Axis::ExpansionN, 1.5, "x").is_err());
    }
}
