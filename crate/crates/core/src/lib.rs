//! Batch inference for gradient-boosted oblivious decision trees.
//!
//! The prediction path is: quantize raw features into 8-bit bins
//! ([`quantize`]), compute each tree's leaf index bitwise from those bins,
//! and sum the selected leaf rows ([`predict`]). The two integer hot loops
//! and the squared-L2 distance used by the neighbour features ([`knn`])
//! have a scalar reference and a lane-parametric vectorized form
//! ([`kernels`]). A scoped [`profiler`] attributes time to each stage.

pub mod cli;
pub mod error;
pub mod kernels;
pub mod knn;
pub mod model;
pub mod predict;
pub mod profiler;
pub mod quantize;

pub use error::{Error, ModelError, Result};
pub use kernels::{Backend, Lanes};
pub use knn::{embed_features, knn_search, l2_sqr_distance, EmbeddingCorpus, Neighbor};
pub use model::{
    gen_synthetic_model, load_model, save_model, Ensemble, FloatFeatureBorders, ObliviousTree,
    Split, SyntheticModelParams,
};
pub use predict::{
    accumulate_leaf_values, calc_leaf_indexes, predict_batch, predict_oracle, BatchPrediction,
    OutputTransform, PredictOptions, PredictionMatrix, DEFAULT_BLOCK_SIZE,
};
pub use profiler::{ComparisonReport, ProfileReport, Profiler, ReportFormat, ScopeStats};
pub use quantize::{bin_index, binarize_block, QuantizedBlock, RawBlock};
