//! Float features to 8-bit bins.
//!
//! A value's bin is the number of borders it strictly exceeds, so a value
//! equal to a border lands in the lower bin and NaN lands in bin 0.
//! Quantized blocks are feature-major: the bins of one feature across all
//! samples of the block are contiguous, which is the access pattern of the
//! leaf-index kernel.

use crate::error::{Error, Result};
use crate::kernels::{self, Backend};
use crate::profiler::{names, Profiler};

/// Bin of a single value against ascending `borders`.
#[inline]
pub fn bin_index(value: f32, borders: &[f32]) -> u8 {
    borders.partition_point(|&b| value > b) as u8
}

/// Borrowed sample-major block of raw feature values.
#[derive(Debug, Clone, Copy)]
pub struct RawBlock<'a> {
    n_samples: usize,
    n_features: usize,
    values: &'a [f32],
}

impl<'a> RawBlock<'a> {
    pub fn new(values: &'a [f32], n_features: usize) -> Result<Self> {
        if n_features == 0 {
            if !values.is_empty() {
                return Err(Error::DimensionMismatch(
                    "values given for a block with zero features".into(),
                ));
            }
            return Ok(Self {
                n_samples: 0,
                n_features,
                values,
            });
        }
        if !values.len().is_multiple_of(n_features) {
            return Err(Error::DimensionMismatch(format!(
                "{} values is not a whole number of {n_features}-feature rows",
                values.len()
            )));
        }
        Ok(Self {
            n_samples: values.len() / n_features,
            n_features,
            values,
        })
    }

    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn values(&self) -> &'a [f32] {
        self.values
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct QuantizedBlock {
    n_samples: usize,
    n_features: usize,
    bins: Vec<u8>,
    nan_count: usize,
}

impl QuantizedBlock {
    pub fn n_samples(&self) -> usize {
        self.n_samples
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    /// Bins of `feature` for every sample of the block.
    #[inline]
    pub fn feature_bins(&self, feature: usize) -> &[u8] {
        &self.bins[feature * self.n_samples..(feature + 1) * self.n_samples]
    }

    pub fn bin(&self, feature: usize, sample: usize) -> u8 {
        self.feature_bins(feature)[sample]
    }

    /// NaN inputs seen while quantizing; each was mapped to bin 0.
    pub fn nan_count(&self) -> usize {
        self.nan_count
    }
}

/// Quantizes every feature of `raw` against `schema`, which holds one
/// ascending border list per feature.
pub fn binarize_block(raw: &RawBlock<'_>, schema: &[&[f32]], backend: Backend) -> Result<QuantizedBlock> {
    let mut out = QuantizedBlock::default();
    let mut scratch = Vec::new();
    binarize_block_into(
        raw,
        schema,
        backend,
        &mut Profiler::disabled(),
        &mut out,
        &mut scratch,
    )?;
    Ok(out)
}

/// Buffer-reusing form of [`binarize_block`], timed under the binarization scopes.
pub(crate) fn binarize_block_into(
    raw: &RawBlock<'_>,
    schema: &[&[f32]],
    backend: Backend,
    profiler: &mut Profiler,
    out: &mut QuantizedBlock,
    column: &mut Vec<f32>,
) -> Result<()> {
    if schema.len() != raw.n_features {
        return Err(Error::DimensionMismatch(format!(
            "block has {} features, border schema covers {}",
            raw.n_features,
            schema.len()
        )));
    }
    let n = raw.n_samples;
    out.n_samples = n;
    out.n_features = raw.n_features;
    out.nan_count = 0;
    out.bins.clear();
    out.bins.resize(n * raw.n_features, 0);
    column.clear();
    column.resize(n, 0.0);

    let mut nan_count = 0;
    profiler.scope(names::BINARIZE_FEATURES, |profiler| {
        for (feature, borders) in schema.iter().enumerate() {
            for (s, slot) in column.iter_mut().enumerate() {
                let v = raw.values[s * raw.n_features + feature];
                nan_count += usize::from(v.is_nan());
                *slot = v;
            }
            let bins = &mut out.bins[feature * n..(feature + 1) * n];
            profiler.scope(names::BINARIZE_FLOATS, |_| {
                kernels::binarize(backend, column, borders, bins);
            });
        }
    });
    out.nan_count = nan_count;
    Ok(())
}
