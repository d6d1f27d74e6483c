//! Blocked batch prediction.
//!
//! Samples are cut into blocks of `block_size` rows. Each block is
//! quantized once, then every tree in ensemble order computes its leaf
//! indexes with one [`kernels::calc_indexes`] call per level and adds its
//! leaf rows into a per-block `f64` accumulator. Because indexes are
//! integers and the per-sample tree order never changes, raw outputs are
//! bit-identical for every backend, block size and worker count.

use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kernels::{self, Backend};
use crate::model::{Ensemble, ObliviousTree};
use crate::profiler::{names, ProfileReport, Profiler};
use crate::quantize::{binarize_block_into, QuantizedBlock, RawBlock};

pub const DEFAULT_BLOCK_SIZE: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum OutputTransform {
    #[default]
    RawValue,
    /// Probability of the positive class; needs `n_dims == 1`.
    Sigmoid,
    /// Index of the largest raw score; needs `n_dims >= 2`.
    SoftmaxArgmax,
}

impl OutputTransform {
    pub fn check_dims(self, n_dims: usize) -> Result<()> {
        let ok = match self {
            OutputTransform::RawValue => true,
            OutputTransform::Sigmoid => n_dims == 1,
            OutputTransform::SoftmaxArgmax => n_dims >= 2,
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "transform {self} is not defined for a model with {n_dims} output dimension(s)"
            )))
        }
    }
}

impl std::fmt::Display for OutputTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            OutputTransform::RawValue => "raw",
            OutputTransform::Sigmoid => "sigmoid",
            OutputTransform::SoftmaxArgmax => "softmax-argmax",
        })
    }
}

impl FromStr for OutputTransform {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "raw" => Ok(OutputTransform::RawValue),
            "sigmoid" => Ok(OutputTransform::Sigmoid),
            "softmax-argmax" => Ok(OutputTransform::SoftmaxArgmax),
            other => Err(Error::InvalidParameter(format!(
                "unknown transform '{other}', expected raw, sigmoid or softmax-argmax"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Transformed {
    Probabilities(Vec<f64>),
    Labels(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    n_samples: usize,
    n_dims: usize,
    raw: Vec<f64>,
    transformed: Option<Transformed>,
}

impl PredictionMatrix {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    /// Sample-major `n_samples x n_dims` raw scores.
    pub fn raw(&self) -> &[f64] {
        &self.raw
    }

    pub fn raw_row(&self, sample: usize) -> &[f64] {
        &self.raw[sample * self.n_dims..(sample + 1) * self.n_dims]
    }

    pub fn transformed(&self) -> Option<&Transformed> {
        self.transformed.as_ref()
    }

    pub fn labels(&self) -> Option<&[usize]> {
        match &self.transformed {
            Some(Transformed::Labels(l)) => Some(l),
            _ => None,
        }
    }

    pub fn probabilities(&self) -> Option<&[f64]> {
        match &self.transformed {
            Some(Transformed::Probabilities(p)) => Some(p),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PredictOptions {
    pub backend: Backend,
    pub workers: usize,
    pub block_size: usize,
    pub transform: OutputTransform,
    pub profile: bool,
}

impl Default for PredictOptions {
    fn default() -> Self {
        Self {
            backend: Backend::Scalar,
            workers: 1,
            block_size: DEFAULT_BLOCK_SIZE,
            transform: OutputTransform::RawValue,
            profile: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchPrediction {
    pub predictions: PredictionMatrix,
    /// Present when profiling was requested.
    pub profile: Option<ProfileReport>,
    /// Raw NaN inputs, all routed to bin 0.
    pub nan_count: usize,
}

/// Leaf index of every sample of `block` in `tree`.
pub fn calc_leaf_indexes(block: &QuantizedBlock, tree: &ObliviousTree, backend: Backend) -> Vec<u32> {
    let mut indexes = vec![0; block.n_samples()];
    calc_leaf_indexes_into(block, tree, backend, &mut indexes);
    indexes
}

#[inline]
fn calc_leaf_indexes_into(block: &QuantizedBlock, tree: &ObliviousTree, backend: Backend, indexes: &mut [u32]) {
    indexes.fill(0);
    for (level, split) in tree.splits().iter().enumerate() {
        kernels::calc_indexes(
            backend,
            block.feature_bins(split.feature),
            split.border_bin,
            level as u32,
            indexes,
        );
    }
}

/// Adds the leaf row selected by each index into the matching row of `acc`
/// (`indexes.len() x n_dims`, sample-major).
#[inline]
pub fn accumulate_leaf_values(indexes: &[u32], tree: &ObliviousTree, acc: &mut [f64]) {
    let leaves = tree.leaf_values();
    let n_dims = tree.n_dims();
    debug_assert_eq!(acc.len(), indexes.len() * n_dims);
    if n_dims == 1 {
        for (a, &index) in acc.iter_mut().zip(indexes) {
            *a += leaves[index as usize];
        }
    } else {
        for (row, &index) in acc.chunks_exact_mut(n_dims).zip(indexes) {
            let leaf = &leaves[index as usize * n_dims..(index as usize + 1) * n_dims];
            for (a, v) in row.iter_mut().zip(leaf) {
                *a += v;
            }
        }
    }
}

#[derive(Default)]
struct BlockBuffers {
    quantized: QuantizedBlock,
    column: Vec<f32>,
    indexes: Vec<u32>,
    acc: Vec<f64>,
}

struct BlockContext<'a> {
    ensemble: &'a Ensemble,
    schema: Vec<&'a [f32]>,
    backend: Backend,
    leaf_scope: &'static str,
}

impl BlockContext<'_> {
    fn run(&self, values: &[f32], out: &mut [f64], buffers: &mut BlockBuffers, profiler: &mut Profiler) -> Result<usize> {
        let ensemble = self.ensemble;
        let raw = RawBlock::new(values, ensemble.n_features())?;
        let BlockBuffers {
            quantized,
            column,
            indexes,
            acc,
        } = buffers;
        binarize_block_into(&raw, &self.schema, self.backend, profiler, quantized, column)?;

        let n = raw.n_samples();
        let n_dims = ensemble.n_dims();
        indexes.clear();
        indexes.resize(n, 0);
        acc.clear();
        acc.resize(n * n_dims, 0.0);

        let backend = self.backend;
        let leaf_scope = self.leaf_scope;
        profiler.scope(names::CALC_TREES, |p| {
            for tree in ensemble.trees() {
                p.scope(names::CALC_INDEXES, |_| {
                    calc_leaf_indexes_into(quantized, tree, backend, indexes)
                });
                p.scope(leaf_scope, |_| accumulate_leaf_values(indexes, tree, acc));
            }
        });

        let scale = ensemble.scale();
        for (out_row, acc_row) in out.chunks_exact_mut(n_dims).zip(acc.chunks_exact(n_dims)) {
            for ((o, a), b) in out_row.iter_mut().zip(acc_row).zip(ensemble.bias()) {
                *o = scale * a + b;
            }
        }
        Ok(quantized.nan_count())
    }
}

/// Predicts `samples` (sample-major, `n_features` columns).
pub fn predict_batch(ensemble: &Ensemble, samples: &[f32], options: &PredictOptions) -> Result<BatchPrediction> {
    let mut profiler = Profiler::new(options.profile);
    let mut out = predict_batch_profiled(ensemble, samples, options, &mut profiler)?;
    if options.profile {
        out.profile = Some(profiler.report()?);
    }
    Ok(out)
}

/// Like [`predict_batch`], but records into a caller-owned profiler
/// (`options.profile` is ignored and no report is attached).
pub fn predict_batch_profiled(
    ensemble: &Ensemble,
    samples: &[f32],
    options: &PredictOptions,
    profiler: &mut Profiler,
) -> Result<BatchPrediction> {
    let n_features = ensemble.n_features();
    let n_dims = ensemble.n_dims();
    options.transform.check_dims(n_dims)?;
    if options.block_size == 0 {
        return Err(Error::InvalidParameter("block size must be positive".into()));
    }
    if options.workers == 0 {
        return Err(Error::InvalidParameter("worker count must be positive".into()));
    }
    let n_samples = if n_features == 0 {
        0
    } else {
        if !samples.len().is_multiple_of(n_features) {
            return Err(Error::DimensionMismatch(format!(
                "{} values is not a whole number of {n_features}-feature rows",
                samples.len()
            )));
        }
        samples.len() / n_features
    };

    let context = BlockContext {
        ensemble,
        schema: ensemble.dense_borders(),
        backend: options.backend,
        leaf_scope: if n_dims == 1 {
            names::LEAF_VALUES
        } else {
            names::LEAF_VALUES_MULTI
        },
    };
    let mut raw = vec![0.0; n_samples * n_dims];
    let profile = profiler.is_enabled();

    let nan_count = if n_samples == 0 {
        0
    } else {
        let jobs: Vec<(&[f32], &mut [f64])> = samples
            .chunks(options.block_size * n_features)
            .zip(raw.chunks_mut(options.block_size * n_dims))
            .collect();
        profiler.scope(names::APPLY_MODEL, |profiler| {
            run_jobs(&context, jobs, options.workers, profile, profiler)
        })?
    };

    let transformed = match options.transform {
        OutputTransform::RawValue => None,
        OutputTransform::Sigmoid => Some(Transformed::Probabilities(
            raw.iter().map(|&x| 1.0 / (1.0 + (-x).exp())).collect(),
        )),
        OutputTransform::SoftmaxArgmax => Some(Transformed::Labels(
            raw.chunks_exact(n_dims).map(argmax).collect(),
        )),
    };
    Ok(BatchPrediction {
        predictions: PredictionMatrix {
            n_samples,
            n_dims,
            raw,
            transformed,
        },
        profile: None,
        nan_count,
    })
}

fn run_jobs(
    context: &BlockContext<'_>,
    jobs: Vec<(&[f32], &mut [f64])>,
    workers: usize,
    profile: bool,
    profiler: &mut Profiler,
) -> Result<usize> {
    let workers = workers.min(jobs.len());
    if workers <= 1 {
        let mut buffers = BlockBuffers::default();
        let mut nan_count = 0;
        for (values, out) in jobs {
            nan_count += context.run(values, out, &mut buffers, profiler)?;
        }
        return Ok(nan_count);
    }

    // Contiguous runs of blocks per worker; each owns its output rows.
    let per_worker = jobs.len().div_ceil(workers);
    let mut groups: Vec<Vec<(&[f32], &mut [f64])>> = Vec::with_capacity(workers);
    for job in jobs {
        match groups.last_mut() {
            Some(g) if g.len() < per_worker => g.push(job),
            _ => groups.push(vec![job]),
        }
    }

    let results: Vec<(Result<usize>, Profiler)> = std::thread::scope(|s| {
        let handles: Vec<_> = groups
            .into_iter()
            .map(|group| {
                s.spawn(move || {
                    let mut local = Profiler::new(profile);
                    let mut buffers = BlockBuffers::default();
                    let mut nan_count = 0;
                    for (values, out) in group {
                        match context.run(values, out, &mut buffers, &mut local) {
                            Ok(n) => nan_count += n,
                            Err(e) => return (Err(e), local),
                        }
                    }
                    (Ok(nan_count), local)
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().expect("prediction worker panicked"))
            .collect()
    });

    let mut nan_count = 0;
    for (result, local) in results {
        profiler.absorb(local);
        nan_count += result?;
    }
    Ok(nan_count)
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Reference prediction for one sample by walking each tree from the root.
///
/// Each level re-bins the raw value by scanning the borders, branches
/// right on `bin >= border_bin`, and records the branch as bit `level` of
/// the leaf position. Accumulation order matches [`predict_batch`], so the
/// results agree exactly.
///
/// # Panics
///
/// If `sample.len() != ensemble.n_features()`.
pub fn predict_oracle(ensemble: &Ensemble, sample: &[f32]) -> Vec<f64> {
    assert_eq!(sample.len(), ensemble.n_features(), "sample width");
    let mut acc = vec![0.0f64; ensemble.n_dims()];
    for tree in ensemble.trees() {
        let mut leaf = 0usize;
        for (level, split) in tree.splits().iter().enumerate() {
            let value = sample[split.feature];
            let mut bin = 0usize;
            for &border in ensemble.feature_borders(split.feature) {
                if value > border {
                    bin += 1;
                }
            }
            let go_right = bin >= usize::from(split.border_bin);
            if go_right {
                leaf += 1 << level;
            }
        }
        for (a, v) in acc.iter_mut().zip(tree.leaf(leaf)) {
            *a += v;
        }
    }
    acc.iter()
        .zip(ensemble.bias())
        .map(|(a, b)| ensemble.scale() * a + b)
        .collect()
}
