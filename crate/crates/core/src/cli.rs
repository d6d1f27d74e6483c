//! Command-line front end: synthetic model and data generation, CSV
//! ingestion, prediction, neighbour features, and the baseline-versus-
//! optimized benchmark.
//!
//! Data files are CSV with a header row. Every column is a float feature
//! except an optional column named `label`. Prediction files carry one
//! `raw_<d>` column per output dimension, plus `probability` or `label`
//! when a transform is applied. Floats are written in shortest round-trip
//! form, so two prediction files are equal iff the predictions are.

use std::borrow::Cow;
use std::fmt;
use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::error::{Error, Result};
use crate::kernels::{Backend, Lanes};
use crate::knn::{self, EmbeddingCorpus};
use crate::model::{self, Ensemble, SyntheticModelParams, SYNTHETIC_FEATURE_RANGE};
use crate::predict::{
    self, predict_batch_profiled, predict_oracle, OutputTransform, PredictOptions, PredictionMatrix,
    DEFAULT_BLOCK_SIZE,
};
use crate::profiler::{ComparisonReport, ProfileReport, Profiler, ReportFormat};

pub const LABEL_COLUMN: &str = "label";

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] Error),
    #[error("{0}")]
    Usage(String),
    #[error(
        "backend outputs differ at sample {sample}, dim {dim}: {baseline_backend} gave {baseline}, \
         {optimized_backend} gave {optimized}; no performance report is produced"
    )]
    BackendMismatch {
        sample: usize,
        dim: usize,
        baseline_backend: Backend,
        optimized_backend: Backend,
        baseline: f64,
        optimized: f64,
    },
}

impl CliError {
    /// 1 for usage errors, 2 for data or model errors, 3 for a backend mismatch.
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Usage(_) | CliError::Core(Error::InvalidParameter(_)) => 1,
            CliError::Core(_) => 2,
            CliError::BackendMismatch { .. } => 3,
        }
    }
}

#[derive(Debug, Parser)]
#[command(name = "obtree", version, about = "Oblivious-tree ensemble inference and kernel benchmarks")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write a synthetic model file.
    GenModel(GenModelArgs),
    /// Write a synthetic sample or embedding CSV.
    GenData(GenDataArgs),
    /// Predict a CSV with a model.
    Predict(RunConfig),
    /// Profile scalar against a vectorized backend and report speedups.
    Bench(BenchConfig),
    /// Compute nearest-neighbour features for a query CSV.
    KnnFeatures(KnnFeaturesArgs),
}

#[derive(Debug, Clone, Args)]
pub struct GenModelArgs {
    #[arg(long, default_value_t = 7)]
    pub seed: u64,
    #[arg(long, default_value_t = 90)]
    pub features: usize,
    #[arg(long, default_value_t = 1000)]
    pub trees: usize,
    #[arg(long, default_value_t = 6)]
    pub depth: usize,
    /// Output dimensions (1 for regression or binary, K for K classes).
    #[arg(long, default_value_t = 1)]
    pub dims: usize,
    #[arg(long, default_value_t = 32)]
    pub borders: usize,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct GenDataArgs {
    #[arg(long, default_value_t = 1)]
    pub seed: u64,
    #[arg(long, default_value_t = 1000)]
    pub samples: usize,
    /// Feature count; taken from --model when given.
    #[arg(long)]
    pub features: Option<usize>,
    #[arg(long)]
    pub model: Option<PathBuf>,
    /// Add a label column that agrees with the model's prediction.
    #[arg(long, requires = "model")]
    pub labels: bool,
    /// Transform the labels follow; defaults to raw for one output, softmax-argmax otherwise.
    #[arg(long)]
    pub transform: Option<OutputTransform>,
    /// Write a labelled embedding corpus instead of model samples.
    #[arg(long, conflicts_with_all = ["model", "labels"])]
    pub embeddings: bool,
    #[arg(long, default_value_t = 512)]
    pub dim: usize,
    #[arg(long, default_value_t = 20)]
    pub classes: usize,
    /// Labelled queries drawn from the same clusters as the corpus.
    #[arg(long, default_value_t = 0, requires = "queries_out")]
    pub queries: usize,
    #[arg(long)]
    pub queries_out: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Args)]
pub struct RunConfig {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value = "scalar")]
    pub backend: Backend,
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, default_value = "raw")]
    pub transform: OutputTransform,
    #[arg(long)]
    pub profile: bool,
    /// Timed repetitions; the mean wall time is reported.
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Predictions file; stdout when omitted.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value = "table")]
    pub report: ReportFormat,
}

impl RunConfig {
    pub fn new(model: impl Into<PathBuf>, data: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            data: data.into(),
            backend: Backend::Scalar,
            workers: 1,
            block_size: DEFAULT_BLOCK_SIZE,
            transform: OutputTransform::RawValue,
            profile: false,
            repeat: 5,
            seed: 0,
            out: None,
            report: ReportFormat::Table,
        }
    }

    fn validate(&self) -> Result<(), CliError> {
        check_positive("workers", self.workers)?;
        check_positive("block-size", self.block_size)?;
        check_positive("repeat", self.repeat)
    }

    pub fn header(&self) -> String {
        format!(
            "# obtree predict model={} data={} backend={} workers={} block_size={} transform={} profile={} repeat={} seed={}",
            self.model.display(),
            self.data.display(),
            self.backend,
            self.workers,
            self.block_size,
            self.transform,
            self.profile,
            self.repeat,
            self.seed
        )
    }

    fn options(&self) -> PredictOptions {
        PredictOptions {
            backend: self.backend,
            workers: self.workers,
            block_size: self.block_size,
            transform: self.transform,
            profile: false,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct BenchConfig {
    #[arg(long)]
    pub model: PathBuf,
    /// Model samples, or embedding queries when --corpus is given.
    #[arg(long)]
    pub data: PathBuf,
    /// Optimized backend; the baseline is always scalar.
    #[arg(long, default_value = "vec:8")]
    pub backend: Backend,
    /// Workers for the end-to-end timing runs; profiled runs are serial.
    #[arg(long, default_value_t = 1)]
    pub workers: usize,
    #[arg(long, default_value_t = DEFAULT_BLOCK_SIZE)]
    pub block_size: usize,
    #[arg(long, default_value = "raw")]
    pub transform: OutputTransform,
    #[arg(long, default_value_t = 5)]
    pub repeat: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value = "table")]
    pub report: ReportFormat,
    /// Also write the report here.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Embedding corpus; the model then consumes neighbour features.
    #[arg(long)]
    pub corpus: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    #[arg(long)]
    pub classes: Option<usize>,
}

impl BenchConfig {
    pub fn new(model: impl Into<PathBuf>, data: impl Into<PathBuf>) -> Self {
        Self {
            model: model.into(),
            data: data.into(),
            backend: Backend::Vectorized(Lanes::W8),
            workers: 1,
            block_size: DEFAULT_BLOCK_SIZE,
            transform: OutputTransform::RawValue,
            repeat: 5,
            seed: 0,
            report: ReportFormat::Table,
            out: None,
            corpus: None,
            k: 5,
            classes: None,
        }
    }

    pub fn header(&self) -> String {
        let mut h = format!(
            "# obtree bench model={} data={} baseline=scalar optimized={} workers={} block_size={} transform={} repeat={} seed={}",
            self.model.display(),
            self.data.display(),
            self.backend,
            self.workers,
            self.block_size,
            self.transform,
            self.repeat,
            self.seed
        );
        if let Some(corpus) = &self.corpus {
            h.push_str(&format!(" corpus={} k={}", corpus.display(), self.k));
        }
        h
    }
}

#[derive(Debug, Clone, Args)]
pub struct KnnFeaturesArgs {
    #[arg(long)]
    pub corpus: PathBuf,
    /// Query vectors; a label column is passed through.
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long, default_value_t = 5)]
    pub k: usize,
    /// Class count; defaults to the largest corpus label plus one.
    #[arg(long)]
    pub classes: Option<usize>,
    #[arg(long, default_value = "scalar")]
    pub backend: Backend,
    #[arg(long)]
    pub profile: bool,
    #[arg(long, default_value = "table")]
    pub report: ReportFormat,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

fn check_positive(name: &str, value: usize) -> Result<(), CliError> {
    if value == 0 {
        Err(CliError::Usage(format!("--{name} must be positive")))
    } else {
        Ok(())
    }
}

/// A parsed data file: sample-major features plus the optional label column.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub feature_names: Vec<String>,
    pub n_rows: usize,
    pub values: Vec<f32>,
    pub labels: Option<Vec<f64>>,
}

impl Table {
    pub fn n_features(&self) -> usize {
        self.feature_names.len()
    }

    pub fn memory_bytes(&self) -> usize {
        self.values.len() * size_of::<f32>()
            + self.labels.as_ref().map_or(0, |l| l.len() * size_of::<f64>())
    }

    pub fn row(&self, index: usize) -> &[f32] {
        let w = self.n_features();
        &self.values[index * w..(index + 1) * w]
    }
}

/// Reads a headed CSV. With `expected_features`, the number of non-label
/// columns must match it.
pub fn ingest_csv(path: impl AsRef<Path>, expected_features: Option<usize>) -> Result<Table> {
    let path = path.as_ref();
    let csv_error = |e: csv::Error| {
        let line = e.position().map_or(0, |p| p.line());
        match e.into_kind() {
            csv::ErrorKind::Io(source) => Error::io(path, source),
            kind => Error::Csv {
                path: path.to_path_buf(),
                line,
                message: format!("{kind:?}"),
            },
        }
    };
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(csv_error)?;

    let header: Vec<String> = reader
        .headers()
        .map_err(csv_error)?
        .iter()
        .map(str::to_string)
        .collect();
    if header.is_empty() || header.iter().all(String::is_empty) {
        return Err(Error::Csv {
            path: path.to_path_buf(),
            line: 1,
            message: "missing header row".into(),
        });
    }
    let label_index = header.iter().position(|h| h == LABEL_COLUMN);
    let feature_names: Vec<String> = header
        .iter()
        .enumerate()
        .filter(|&(i, _)| Some(i) != label_index)
        .map(|(_, h)| h.clone())
        .collect();
    if let Some(expected) = expected_features {
        if feature_names.len() != expected {
            return Err(Error::DimensionMismatch(format!(
                "{} has {} feature columns, the model expects {expected}",
                path.display(),
                feature_names.len()
            )));
        }
    }

    let mut values = Vec::new();
    let mut labels = label_index.map(|_| Vec::new());
    let mut n_rows = 0;
    let mut record = csv::StringRecord::new();
    while reader.read_record(&mut record).map_err(csv_error)? {
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != header.len() {
            return Err(Error::Csv {
                path: path.to_path_buf(),
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        for (i, cell) in record.iter().enumerate() {
            let bad = || Error::Csv {
                path: path.to_path_buf(),
                line,
                message: format!("column '{}': cannot parse '{cell}' as a number", header[i]),
            };
            if Some(i) == label_index {
                let v: f64 = cell.parse().map_err(|_| bad())?;
                labels.as_mut().unwrap().push(v);
            } else {
                values.push(cell.parse::<f32>().map_err(|_| bad())?);
            }
        }
        n_rows += 1;
    }
    Ok(Table {
        feature_names,
        n_rows,
        values,
        labels,
    })
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn write_table<W: Write>(
    out: &mut W,
    feature_names: &[String],
    values: &[f32],
    labels: Option<&[f64]>,
) -> io::Result<()> {
    let mut header = feature_names.join(",");
    if labels.is_some() {
        header.push(',');
        header.push_str(LABEL_COLUMN);
    }
    writeln!(out, "{header}")?;
    if feature_names.is_empty() {
        return Ok(());
    }
    let mut line = String::new();
    for (r, row) in values.chunks_exact(feature_names.len()).enumerate() {
        line.clear();
        for (i, v) in row.iter().enumerate() {
            if i > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        if let Some(labels) = labels {
            line.push(',');
            line.push_str(&labels[r].to_string());
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Writes `table` as CSV in the ingestion format.
pub fn save_table(path: impl AsRef<Path>, table: &Table) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    write_table(&mut out, &table.feature_names, &table.values, table.labels.as_deref())
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

fn feature_names(n: usize, prefix: &str) -> Vec<String> {
    (0..n).map(|i| format!("{prefix}{i}")).collect()
}

pub fn cmd_gen_model(args: &GenModelArgs) -> Result<Ensemble> {
    let ensemble = model::gen_synthetic_model(&SyntheticModelParams {
        seed: args.seed,
        n_features: args.features,
        n_trees: args.trees,
        depth: args.depth,
        n_dims: args.dims,
        borders_per_feature: args.borders,
    })?;
    model::save_model(&ensemble, &args.out)?;
    Ok(ensemble)
}

fn default_transform(n_dims: usize) -> OutputTransform {
    if n_dims == 1 {
        OutputTransform::RawValue
    } else {
        OutputTransform::SoftmaxArgmax
    }
}

/// The label a sample with these raw scores should carry under `transform`.
fn label_for(raw: &[f64], transform: OutputTransform) -> f64 {
    match transform {
        OutputTransform::RawValue if raw.len() == 1 => raw[0],
        OutputTransform::Sigmoid => f64::from(u8::from(raw[0] > 0.0)),
        _ => predict::argmax(raw) as f64,
    }
}

/// Synthetic samples uniform over a range slightly wider than the
/// generator's borders. Labels come from the per-sample traversal oracle.
pub fn cmd_gen_data(args: &GenDataArgs) -> Result<Table> {
    if args.embeddings {
        let (corpus, queries) =
            knn::gen_synthetic_embeddings(args.seed, args.samples, args.queries, args.dim, args.classes)?;
        let to_table = |c: &EmbeddingCorpus| Table {
            feature_names: feature_names(c.dim(), "e"),
            n_rows: c.n_items(),
            values: c.vectors().to_vec(),
            labels: Some(c.labels().iter().map(|&l| l as f64).collect()),
        };
        let table = to_table(&corpus);
        save_table(&args.out, &table)?;
        if let Some(path) = &args.queries_out {
            save_table(path, &to_table(&queries))?;
        }
        return Ok(table);
    }

    let ensemble = args.model.as_ref().map(model::load_model).transpose()?;
    let n_features = match (&ensemble, args.features) {
        (Some(e), Some(f)) if e.n_features() != f => {
            return Err(Error::DimensionMismatch(format!(
                "--features {f} disagrees with the model's {} features",
                e.n_features()
            )))
        }
        (Some(e), _) => e.n_features(),
        (None, Some(f)) => f,
        (None, None) => SyntheticModelParams::default().n_features,
    };

    let (lo, hi) = SYNTHETIC_FEATURE_RANGE;
    let margin = 0.1 * (hi - lo);
    let mut rng = ChaCha8Rng::seed_from_u64(args.seed);
    let values: Vec<f32> = (0..args.samples * n_features)
        .map(|_| rng.random_range(lo - margin..hi + margin))
        .collect();

    let labels = match (&ensemble, args.labels) {
        (Some(e), true) => {
            let transform = args.transform.unwrap_or_else(|| default_transform(e.n_dims()));
            transform.check_dims(e.n_dims())?;
            Some(
                values
                    .chunks_exact(n_features)
                    .map(|row| label_for(&predict_oracle(e, row), transform))
                    .collect(),
            )
        }
        _ => None,
    };
    let table = Table {
        feature_names: feature_names(n_features, "f"),
        n_rows: args.samples,
        values,
        labels,
    };
    save_table(&args.out, &table)?;
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Metric {
    Accuracy(f64),
    Mae(f64),
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Metric::Accuracy(a) => write!(f, "accuracy {a:.6}"),
            Metric::Mae(m) => write!(f, "mae {m:.6}"),
        }
    }
}

/// Accuracy for classification transforms (and multi-output raw scores via
/// argmax), mean absolute error for single-output raw scores.
pub fn evaluate(predictions: &PredictionMatrix, labels: &[f64], transform: OutputTransform) -> Metric {
    let n = predictions.n_samples();
    if n == 0 {
        return Metric::Accuracy(0.0);
    }
    let hits = |predicted: &mut dyn Iterator<Item = f64>| {
        let correct = predicted.zip(labels).filter(|(p, l)| p == *l).count();
        Metric::Accuracy(correct as f64 / n as f64)
    };
    match transform {
        OutputTransform::SoftmaxArgmax => {
            hits(&mut predictions.labels().unwrap().iter().map(|&l| l as f64))
        }
        OutputTransform::Sigmoid => hits(
            &mut predictions
                .probabilities()
                .unwrap()
                .iter()
                .map(|&p| f64::from(u8::from(p > 0.5))),
        ),
        OutputTransform::RawValue if predictions.n_dims() == 1 => {
            let total: f64 = predictions
                .raw()
                .iter()
                .zip(labels)
                .map(|(p, l)| (p - l).abs())
                .sum();
            Metric::Mae(total / n as f64)
        }
        OutputTransform::RawValue => hits(
            &mut (0..n).map(|s| predict::argmax(predictions.raw_row(s)) as f64),
        ),
    }
}

/// Writes one row per sample: raw scores, then the transformed output.
pub fn write_predictions<W: Write>(out: &mut W, predictions: &PredictionMatrix) -> io::Result<()> {
    let mut header: Vec<String> = (0..predictions.n_dims()).map(|d| format!("raw_{d}")).collect();
    match predictions.transformed() {
        Some(predict::Transformed::Probabilities(_)) => header.push("probability".into()),
        Some(predict::Transformed::Labels(_)) => header.push(LABEL_COLUMN.into()),
        None => {}
    }
    writeln!(out, "{}", header.join(","))?;
    let mut line = String::new();
    for s in 0..predictions.n_samples() {
        line.clear();
        for (d, v) in predictions.raw_row(s).iter().enumerate() {
            if d > 0 {
                line.push(',');
            }
            line.push_str(&v.to_string());
        }
        match predictions.transformed() {
            Some(predict::Transformed::Probabilities(p)) => {
                line.push(',');
                line.push_str(&p[s].to_string());
            }
            Some(predict::Transformed::Labels(l)) => {
                line.push(',');
                line.push_str(&l[s].to_string());
            }
            None => {}
        }
        writeln!(out, "{line}")?;
    }
    Ok(())
}

#[derive(Debug, Clone)]
pub struct PredictSummary {
    pub predictions: PredictionMatrix,
    pub mean_wall_s: f64,
    pub metric: Option<Metric>,
    pub profile: Option<ProfileReport>,
    pub nan_count: usize,
    pub rows: usize,
    pub columns: usize,
    pub data_bytes: usize,
}

/// Runs prediction `config.repeat` times and writes the predictions to
/// `config.out` when set. A profiled run, if requested, is made separately
/// so profiling never affects the timed runs.
pub fn cmd_predict(config: &RunConfig) -> Result<PredictSummary, CliError> {
    config.validate()?;
    let ensemble = model::load_model(&config.model)?;
    config.transform.check_dims(ensemble.n_dims())?;
    let data = ingest_csv(&config.data, Some(ensemble.n_features()))?;
    let options = config.options();

    let mut result = None;
    let mut elapsed = 0.0;
    for _ in 0..config.repeat {
        let start = Instant::now();
        let out = predict::predict_batch(&ensemble, &data.values, &options)?;
        elapsed += start.elapsed().as_secs_f64();
        result.get_or_insert(out);
    }
    let result = result.expect("repeat is positive");

    let profile = if config.profile {
        let profiled = PredictOptions {
            profile: true,
            ..options
        };
        predict::predict_batch(&ensemble, &data.values, &profiled)?.profile
    } else {
        None
    };

    if let Some(path) = &config.out {
        let mut out = create(path)?;
        write_predictions(&mut out, &result.predictions)
            .and_then(|_| out.flush())
            .map_err(|e| Error::io(path, e))?;
    }
    let metric = data
        .labels
        .as_deref()
        .map(|l| evaluate(&result.predictions, l, config.transform));
    Ok(PredictSummary {
        predictions: result.predictions,
        mean_wall_s: elapsed / config.repeat as f64,
        metric,
        profile,
        nan_count: result.nan_count,
        rows: data.n_rows,
        columns: data.n_features(),
        data_bytes: data.memory_bytes(),
    })
}

/// Loads a labelled embedding corpus; `n_classes` defaults to the largest
/// label plus one.
pub fn load_corpus(path: impl AsRef<Path>, n_classes: Option<usize>) -> Result<EmbeddingCorpus> {
    let path = path.as_ref();
    let table = ingest_csv(path, None)?;
    let labels = table.labels.ok_or_else(|| {
        Error::InvalidParameter(format!("{}: corpus needs a '{LABEL_COLUMN}' column", path.display()))
    })?;
    let labels: Vec<usize> = labels
        .iter()
        .enumerate()
        .map(|(i, &l)| {
            if l >= 0.0 && l.fract() == 0.0 {
                Ok(l as usize)
            } else {
                Err(Error::InvalidParameter(format!(
                    "{}: item {i} has non-class label {l}",
                    path.display()
                )))
            }
        })
        .collect::<Result<_>>()?;
    let n_classes = n_classes.unwrap_or_else(|| labels.iter().max().map_or(0, |m| m + 1));
    EmbeddingCorpus::new(table.values, table.feature_names.len(), labels, n_classes)
}

#[derive(Debug, Clone)]
pub struct KnnSummary {
    pub table: Table,
    pub profile: Option<ProfileReport>,
}

pub fn cmd_knn_features(args: &KnnFeaturesArgs) -> Result<KnnSummary, CliError> {
    check_positive("k", args.k)?;
    let corpus = load_corpus(&args.corpus, args.classes)?;
    let queries = ingest_csv(&args.data, Some(corpus.dim()))?;
    let n_classes = corpus.n_classes();
    let mut profiler = Profiler::new(args.profile);
    let values = knn::embed_features_batch(
        &queries.values,
        &corpus,
        args.k,
        n_classes,
        args.backend,
        &mut profiler,
    )?;
    let mut names = feature_names(n_classes, "class_");
    names.push("mean_dist".into());
    let table = Table {
        feature_names: names,
        n_rows: queries.n_rows,
        values,
        labels: queries.labels,
    };
    if let Some(path) = &args.out {
        save_table(path, &table)?;
    }
    let profile = args.profile.then(|| profiler.report()).transpose()?;
    Ok(KnnSummary { table, profile })
}

#[derive(Debug, Clone)]
pub struct BenchSummary {
    pub baseline: ProfileReport,
    pub optimized: ProfileReport,
    pub comparison: ComparisonReport,
    pub baseline_mean_s: f64,
    pub optimized_mean_s: f64,
    pub metric: Option<Metric>,
    /// Header, comparison table and end-to-end timing, as printed.
    pub rendered: String,
}

impl BenchSummary {
    pub fn end_to_end_speedup(&self) -> f64 {
        self.baseline_mean_s / self.optimized_mean_s
    }
}

fn first_mismatch(
    baseline: &PredictionMatrix,
    optimized: &PredictionMatrix,
    baseline_backend: Backend,
    optimized_backend: Backend,
) -> Result<(), CliError> {
    let n_dims = baseline.n_dims();
    let diff = baseline
        .raw()
        .iter()
        .zip(optimized.raw())
        .position(|(a, b)| a.to_bits() != b.to_bits());
    match diff {
        None if baseline.raw().len() == optimized.raw().len() => Ok(()),
        found => {
            let i = found.unwrap_or(baseline.raw().len().min(optimized.raw().len()));
            Err(CliError::BackendMismatch {
                sample: i / n_dims,
                dim: i % n_dims,
                baseline_backend,
                optimized_backend,
                baseline: baseline.raw().get(i).copied().unwrap_or(f64::NAN),
                optimized: optimized.raw().get(i).copied().unwrap_or(f64::NAN),
            })
        }
    }
}

/// Profiles a serial run under the scalar baseline and under
/// `config.backend`, fails if their raw outputs differ in any bit, then
/// times `config.repeat` end-to-end runs of each with `config.workers`.
pub fn cmd_bench(config: &BenchConfig) -> Result<BenchSummary, CliError> {
    check_positive("workers", config.workers)?;
    check_positive("block-size", config.block_size)?;
    check_positive("repeat", config.repeat)?;
    check_positive("k", config.k)?;
    let ensemble = model::load_model(&config.model)?;
    config.transform.check_dims(ensemble.n_dims())?;

    let corpus = config
        .corpus
        .as_ref()
        .map(|p| load_corpus(p, config.classes))
        .transpose()?;
    let data = match &corpus {
        Some(c) => {
            if ensemble.n_features() != c.n_classes() + 1 {
                return Err(Error::DimensionMismatch(format!(
                    "neighbour features have {} columns, the model expects {}",
                    c.n_classes() + 1,
                    ensemble.n_features()
                ))
                .into());
            }
            ingest_csv(&config.data, Some(c.dim()))?
        }
        None => ingest_csv(&config.data, Some(ensemble.n_features()))?,
    };

    let run = |backend: Backend, workers: usize, profiler: &mut Profiler| -> Result<PredictionMatrix> {
        let features: Cow<'_, [f32]> = match &corpus {
            Some(c) => Cow::Owned(knn::embed_features_batch(
                &data.values,
                c,
                config.k,
                c.n_classes(),
                backend,
                profiler,
            )?),
            None => Cow::Borrowed(&data.values),
        };
        let options = PredictOptions {
            backend,
            workers,
            block_size: config.block_size,
            transform: config.transform,
            profile: false,
        };
        Ok(predict_batch_profiled(&ensemble, &features, &options, profiler)?.predictions)
    };

    let baseline_backend = Backend::Scalar;
    let mut baseline_profiler = Profiler::enabled();
    let baseline = run(baseline_backend, 1, &mut baseline_profiler)?;
    let mut optimized_profiler = Profiler::enabled();
    let optimized = run(config.backend, 1, &mut optimized_profiler)?;
    first_mismatch(&baseline, &optimized, baseline_backend, config.backend)?;

    let baseline_report = baseline_profiler.report()?;
    let optimized_report = optimized_profiler.report()?;
    let comparison = ComparisonReport::join(&baseline_report, &optimized_report);

    let mean_time = |backend: Backend| -> Result<f64> {
        let mut total = 0.0;
        for _ in 0..config.repeat {
            let start = Instant::now();
            run(backend, config.workers, &mut Profiler::disabled())?;
            total += start.elapsed().as_secs_f64();
        }
        Ok(total / config.repeat as f64)
    };
    let baseline_mean_s = mean_time(baseline_backend)?;
    let optimized_mean_s = mean_time(config.backend)?;
    let metric = data
        .labels
        .as_deref()
        .map(|l| evaluate(&baseline, l, config.transform));

    let mut rendered = String::new();
    rendered.push_str(&config.header());
    rendered.push('\n');
    rendered.push_str(&format!(
        "# serial profiled runs, {} samples, outputs bit-identical\n",
        data.n_rows
    ));
    rendered.push_str(&comparison.render(config.report));
    rendered.push('\n');
    rendered.push_str(&format!(
        "# end-to-end, workers={}, mean of {} runs\n",
        config.workers, config.repeat
    ));
    let (metric_name, metric_value) = match metric {
        Some(Metric::Accuracy(a)) => ("accuracy", format!("{a:.6}")),
        Some(Metric::Mae(m)) => ("mae", format!("{m:.6}")),
        None => ("metric", "-".to_string()),
    };
    let sep = match config.report {
        ReportFormat::Tsv => "\t",
        ReportFormat::Table => "  ",
    };
    rendered.push_str(
        &[metric_name, "baseline_time_s", "optimized_time_s", "speedup"].join(sep),
    );
    rendered.push('\n');
    rendered.push_str(
        &[
            metric_value,
            format!("{baseline_mean_s:.6}"),
            format!("{optimized_mean_s:.6}"),
            format!("{:.2}", baseline_mean_s / optimized_mean_s),
        ]
        .join(sep),
    );
    rendered.push('\n');

    if let Some(path) = &config.out {
        std::fs::write(path, &rendered).map_err(|e| Error::io(path, e))?;
    }
    Ok(BenchSummary {
        baseline: baseline_report,
        optimized: optimized_report,
        comparison,
        baseline_mean_s,
        optimized_mean_s,
        metric,
        rendered,
    })
}

/// Executes a parsed command, printing results to stdout and run
/// information to stderr.
pub fn run(cli: Cli) -> Result<(), CliError> {
    let stdout = io::stdout();
    let io_err = |e: io::Error| CliError::Core(Error::io("<stdout>", e));
    match cli.command {
        Command::GenModel(args) => {
            let e = cmd_gen_model(&args)?;
            eprintln!(
                "wrote {}: {} trees, depth {}, {} features, {} dims",
                args.out.display(),
                e.trees().len(),
                args.depth,
                e.n_features(),
                e.n_dims()
            );
        }
        Command::GenData(args) => {
            let t = cmd_gen_data(&args)?;
            eprintln!(
                "wrote {}: {} rows x {} features{}",
                args.out.display(),
                t.n_rows,
                t.n_features(),
                if t.labels.is_some() { " + label" } else { "" }
            );
        }
        Command::Predict(config) => {
            eprintln!("{}", config.header());
            let summary = cmd_predict(&config)?;
            eprintln!(
                "read {} rows x {} feature columns ({:.1} MiB in memory)",
                summary.rows,
                summary.columns,
                summary.data_bytes as f64 / (1024.0 * 1024.0)
            );
            if config.out.is_none() {
                let mut lock = stdout.lock();
                write_predictions(&mut lock, &summary.predictions).map_err(io_err)?;
            }
            eprintln!(
                "predicted {} rows in {:.6} s (mean of {})",
                summary.rows, summary.mean_wall_s, config.repeat
            );
            if summary.nan_count > 0 {
                eprintln!("warning: {} NaN inputs mapped to bin 0", summary.nan_count);
            }
            if let Some(metric) = summary.metric {
                eprintln!("{metric}");
            }
            if let Some(profile) = summary.profile {
                if profile.merged {
                    eprintln!("# profile merged across {} workers", config.workers);
                }
                eprint!("{}", profile.render(config.report));
            }
        }
        Command::Bench(config) => {
            let summary = cmd_bench(&config)?;
            print!("{}", summary.rendered);
        }
        Command::KnnFeatures(args) => {
            let summary = cmd_knn_features(&args)?;
            if args.out.is_none() {
                let t = &summary.table;
                let mut lock = stdout.lock();
                write_table(&mut lock, &t.feature_names, &t.values, t.labels.as_deref())
                    .map_err(io_err)?;
            }
            if let Some(profile) = summary.profile {
                eprint!("{}", profile.render(args.report));
            }
        }
    }
    Ok(())
}
