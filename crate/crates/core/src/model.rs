//! Oblivious-tree ensemble: data model, JSON persistence and a seeded generator.
//!
//! An oblivious tree of depth `d` applies the same `(feature, border_bin)`
//! condition to every node of a level, so the path to a leaf is a `d`-bit
//! integer and the tree stores exactly `2^d` leaf rows of `n_dims` values.
//!
//! The on-disk format is a single JSON document:
//!
//! ```json
//! {
//!   "n_features": 1, "n_dims": 1, "scale": 1.0, "bias": [0.0],
//!   "borders": [{"feature": 0, "values": [0.0]}],
//!   "trees": [{"depth": 1,
//!              "splits": [{"feature": 0, "border_bin": 1}],
//!              "leaf_values": [-1.0, 1.0]}]
//! }
//! ```
//!
//! `leaf_values` is row-major, `2^depth` rows by `n_dims` columns.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, ModelError, Result};

pub const MAX_DEPTH: usize = 16;
pub const MAX_BORDERS: usize = 255;

/// Value range the synthetic generators draw borders and samples from.
pub const SYNTHETIC_FEATURE_RANGE: (f32, f32) = (-2.0, 2.0);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FloatFeatureBorders {
    #[serde(rename = "feature")]
    pub feature_index: usize,
    #[serde(rename = "values")]
    pub borders: Vec<f32>,
}

/// The condition shared by every node on one level: `bin(feature) >= border_bin`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub feature: usize,
    pub border_bin: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObliviousTree {
    depth: usize,
    splits: Vec<Split>,
    leaf_values: Vec<f64>,
}

impl ObliviousTree {
    /// Builds a tree whose depth is the number of splits. Shape is checked
    /// when the tree is placed in an [`Ensemble`].
    pub fn new(splits: Vec<Split>, leaf_values: Vec<f64>) -> Self {
        Self {
            depth: splits.len(),
            splits,
            leaf_values,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    /// Level conditions, root level first.
    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    pub fn leaf_count(&self) -> usize {
        1 << self.depth
    }

    /// Row-major `2^depth x n_dims` leaf matrix.
    pub fn leaf_values(&self) -> &[f64] {
        &self.leaf_values
    }

    pub fn n_dims(&self) -> usize {
        self.leaf_values.len() >> self.depth
    }

    pub fn leaf(&self, index: usize) -> &[f64] {
        let n_dims = self.n_dims();
        &self.leaf_values[index * n_dims..(index + 1) * n_dims]
    }
}

fn default_scale() -> f64 {
    1.0
}

/// An immutable, validated oblivious-tree ensemble.
///
/// Raw prediction for a sample is `scale * sum_t leaf_t(sample) + bias`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ensemble {
    n_features: usize,
    n_dims: usize,
    #[serde(default = "default_scale")]
    scale: f64,
    #[serde(default)]
    bias: Vec<f64>,
    borders: Vec<FloatFeatureBorders>,
    trees: Vec<ObliviousTree>,
}

impl Ensemble {
    pub fn new(
        n_features: usize,
        n_dims: usize,
        borders: Vec<FloatFeatureBorders>,
        trees: Vec<ObliviousTree>,
    ) -> Result<Self, ModelError> {
        Self::with_affine(n_features, n_dims, borders, trees, 1.0, vec![0.0; n_dims])
    }

    pub fn with_affine(
        n_features: usize,
        n_dims: usize,
        borders: Vec<FloatFeatureBorders>,
        trees: Vec<ObliviousTree>,
        scale: f64,
        bias: Vec<f64>,
    ) -> Result<Self, ModelError> {
        let mut ensemble = Self {
            n_features,
            n_dims,
            scale,
            bias,
            borders,
            trees,
        };
        ensemble.normalize_and_validate()?;
        Ok(ensemble)
    }

    fn normalize_and_validate(&mut self) -> Result<(), ModelError> {
        if self.n_dims == 0 {
            return Err(ModelError::ZeroDims);
        }
        if self.bias.is_empty() {
            self.bias = vec![0.0; self.n_dims];
        }
        if self.bias.len() != self.n_dims {
            return Err(ModelError::BiasLength {
                expected: self.n_dims,
                found: self.bias.len(),
            });
        }
        if !self.scale.is_finite() {
            return Err(ModelError::NonFiniteScale(self.scale));
        }

        self.borders.sort_by_key(|b| b.feature_index);
        for (i, entry) in self.borders.iter().enumerate() {
            let feature = entry.feature_index;
            if feature >= self.n_features {
                return Err(ModelError::BorderFeatureOutOfRange {
                    feature,
                    n_features: self.n_features,
                });
            }
            if i > 0 && self.borders[i - 1].feature_index == feature {
                return Err(ModelError::DuplicateBorderFeature { feature });
            }
            if entry.borders.len() > MAX_BORDERS {
                return Err(ModelError::TooManyBorders {
                    feature,
                    count: entry.borders.len(),
                });
            }
            if let Some(position) = entry.borders.iter().position(|b| b.is_nan()) {
                return Err(ModelError::NanBorder { feature, position });
            }
            if let Some(position) = entry.borders.windows(2).position(|w| w[0] >= w[1]) {
                return Err(ModelError::BordersNotAscending {
                    feature,
                    position: position + 1,
                });
            }
        }

        for (t, tree) in self.trees.iter().enumerate() {
            if tree.depth == 0 || tree.depth > MAX_DEPTH {
                return Err(ModelError::DepthOutOfRange {
                    tree: t,
                    depth: tree.depth,
                });
            }
            if tree.splits.len() != tree.depth {
                return Err(ModelError::SplitCountMismatch {
                    tree: t,
                    depth: tree.depth,
                    found: tree.splits.len(),
                });
            }
            for (level, split) in tree.splits.iter().enumerate() {
                if split.feature >= self.n_features {
                    return Err(ModelError::SplitFeatureOutOfRange {
                        tree: t,
                        level,
                        feature: split.feature,
                        n_features: self.n_features,
                    });
                }
                let n_borders = self.feature_borders(split.feature).len();
                if usize::from(split.border_bin) > n_borders {
                    return Err(ModelError::SplitBinOutOfRange {
                        tree: t,
                        level,
                        feature: split.feature,
                        border_bin: split.border_bin,
                        n_borders,
                    });
                }
            }
            let expected = (1usize << tree.depth) * self.n_dims;
            if tree.leaf_values.len() != expected {
                return Err(ModelError::LeafCountMismatch {
                    tree: t,
                    expected,
                    found: tree.leaf_values.len(),
                });
            }
        }
        Ok(())
    }

    pub fn n_features(&self) -> usize {
        self.n_features
    }

    pub fn n_dims(&self) -> usize {
        self.n_dims
    }

    pub fn scale(&self) -> f64 {
        self.scale
    }

    pub fn bias(&self) -> &[f64] {
        &self.bias
    }

    pub fn trees(&self) -> &[ObliviousTree] {
        &self.trees
    }

    /// Border schema, sorted by feature index.
    pub fn borders(&self) -> &[FloatFeatureBorders] {
        &self.borders
    }

    /// Borders of `feature`; empty when the schema has no entry for it.
    pub fn feature_borders(&self, feature: usize) -> &[f32] {
        self.borders
            .binary_search_by_key(&feature, |b| b.feature_index)
            .map(|i| self.borders[i].borders.as_slice())
            .unwrap_or(&[])
    }

    /// Dense per-feature border lists for `0..n_features`.
    pub fn dense_borders(&self) -> Vec<&[f32]> {
        (0..self.n_features)
            .map(|f| self.feature_borders(f))
            .collect()
    }
}

pub fn load_model(path: impl AsRef<Path>) -> Result<Ensemble> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut ensemble: Ensemble =
        serde_json::from_reader(BufReader::new(file)).map_err(|source| Error::Parse {
            path: path.to_path_buf(),
            source,
        })?;
    ensemble.normalize_and_validate()?;
    Ok(ensemble)
}

pub fn save_model(ensemble: &Ensemble, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = BufWriter::new(file);
    serde_json::to_writer(&mut writer, ensemble).map_err(|e| Error::io(path, e.into()))?;
    writer
        .write_all(b"\n")
        .and_then(|_| writer.flush())
        .map_err(|e| Error::io(path, e))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticModelParams {
    pub seed: u64,
    pub n_features: usize,
    pub n_trees: usize,
    pub depth: usize,
    pub n_dims: usize,
    pub borders_per_feature: usize,
}

impl Default for SyntheticModelParams {
    /// A 90-feature, 1000-tree, depth-6 regression model.
    fn default() -> Self {
        Self {
            seed: 7,
            n_features: 90,
            n_trees: 1000,
            depth: 6,
            n_dims: 1,
            borders_per_feature: 32,
        }
    }
}

/// Generates a random but valid ensemble, deterministic in `params.seed`.
///
/// Borders are jittered points on an even grid over
/// [`SYNTHETIC_FEATURE_RANGE`], so they are strictly ascending by
/// construction. Every split threshold is in `1..=borders_per_feature`.
pub fn gen_synthetic_model(params: &SyntheticModelParams) -> Result<Ensemble> {
    let SyntheticModelParams {
        seed,
        n_features,
        n_trees,
        depth,
        n_dims,
        borders_per_feature,
    } = *params;
    if n_features == 0 {
        return Err(Error::InvalidParameter("n_features must be positive".into()));
    }
    if depth == 0 || depth > MAX_DEPTH {
        return Err(Error::InvalidParameter(format!(
            "depth {depth} outside [1, {MAX_DEPTH}]"
        )));
    }
    if n_dims == 0 {
        return Err(Error::InvalidParameter("n_dims must be positive".into()));
    }
    if borders_per_feature == 0 || borders_per_feature > MAX_BORDERS {
        return Err(Error::InvalidParameter(format!(
            "borders_per_feature {borders_per_feature} outside [1, {MAX_BORDERS}]"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (lo, hi) = SYNTHETIC_FEATURE_RANGE;
    let step = (hi - lo) / borders_per_feature as f32;

    let borders = (0..n_features)
        .map(|feature_index| FloatFeatureBorders {
            feature_index,
            borders: (0..borders_per_feature)
                .map(|i| lo + (i as f32 + rng.random_range(0.1f32..0.9)) * step)
                .collect(),
        })
        .collect();

    let trees = (0..n_trees)
        .map(|_| {
            let splits = (0..depth)
                .map(|_| Split {
                    feature: rng.random_range(0..n_features),
                    border_bin: rng.random_range(1..=borders_per_feature) as u8,
                })
                .collect();
            let leaf_values = (0..(n_dims << depth))
                .map(|_| rng.random_range(-0.5..0.5))
                .collect();
            ObliviousTree::new(splits, leaf_values)
        })
        .collect();

    Ok(Ensemble::new(n_features, n_dims, borders, trees)?)
}
