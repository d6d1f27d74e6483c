//! Brute-force nearest neighbours over an embedding corpus, and the
//! neighbour-derived feature map fed to the tree model.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, Backend};
use crate::profiler::{names, Profiler};

#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingCorpus {
    dim: usize,
    vectors: Vec<f32>,
    labels: Vec<usize>,
    n_classes: usize,
}

impl EmbeddingCorpus {
    /// `vectors` is item-major with `dim` columns; `labels` holds one class
    /// id in `0..n_classes` per item.
    pub fn new(vectors: Vec<f32>, dim: usize, labels: Vec<usize>, n_classes: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidParameter("embedding dim must be positive".into()));
        }
        if vectors.len() != labels.len() * dim {
            return Err(Error::DimensionMismatch(format!(
                "{} values for {} items of dim {dim}",
                vectors.len(),
                labels.len()
            )));
        }
        if let Some((item, &label)) = labels.iter().enumerate().find(|(_, &l)| l >= n_classes) {
            return Err(Error::InvalidParameter(format!(
                "item {item} has label {label}, outside 0..{n_classes}"
            )));
        }
        Ok(Self {
            dim,
            vectors,
            labels,
            n_classes,
        })
    }

    pub fn n_items(&self) -> usize {
        self.labels.len()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_classes(&self) -> usize {
        self.n_classes
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn item(&self, index: usize) -> &[f32] {
        &self.vectors[index * self.dim..(index + 1) * self.dim]
    }

    pub fn vectors(&self) -> &[f32] {
        &self.vectors
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor {
    pub index: usize,
    pub distance: f32,
}

pub fn l2_sqr_distance(a: &[f32], b: &[f32], backend: Backend) -> Result<f32> {
    kernels::l2_sqr(backend, a, b)
}

/// The `k` items closest to `query`, nearest first; equal distances are
/// ordered by item index.
pub fn knn_search(query: &[f32], corpus: &EmbeddingCorpus, k: usize, backend: Backend) -> Result<Vec<Neighbor>> {
    knn_search_profiled(query, corpus, k, backend, &mut Profiler::disabled())
}

fn check_query(query: &[f32], corpus: &EmbeddingCorpus, k: usize) -> Result<()> {
    if query.len() != corpus.dim {
        return Err(Error::DimensionMismatch(format!(
            "query has dim {}, corpus has dim {}",
            query.len(),
            corpus.dim
        )));
    }
    if k > corpus.n_items() {
        return Err(Error::InvalidParameter(format!(
            "k = {k} exceeds the {} corpus items",
            corpus.n_items()
        )));
    }
    Ok(())
}

fn knn_search_profiled(
    query: &[f32],
    corpus: &EmbeddingCorpus,
    k: usize,
    backend: Backend,
    profiler: &mut Profiler,
) -> Result<Vec<Neighbor>> {
    check_query(query, corpus, k)?;
    let mut all: Vec<Neighbor> = (0..corpus.n_items())
        .map(|index| {
            let item = corpus.item(index);
            let distance = profiler.scope(names::L2_DISTANCE, |_| {
                kernels::l2_sqr_unchecked(backend, query, item)
            });
            Neighbor { index, distance }
        })
        .collect();
    let order = |a: &Neighbor, b: &Neighbor| {
        a.distance
            .total_cmp(&b.distance)
            .then(a.index.cmp(&b.index))
    };
    if k == 0 {
        return Ok(Vec::new());
    }
    if k < all.len() {
        all.select_nth_unstable_by(k - 1, order);
        all.truncate(k);
    }
    all.sort_unstable_by(order);
    Ok(all)
}

/// Neighbour features of `query`: the share of each of the `n_classes`
/// classes among its `k` nearest items, followed by their mean squared
/// distance. Length is `n_classes + 1`.
pub fn embed_features(
    query: &[f32],
    corpus: &EmbeddingCorpus,
    k: usize,
    n_classes: usize,
    backend: Backend,
) -> Result<Vec<f32>> {
    embed_features_profiled(query, corpus, k, n_classes, backend, &mut Profiler::disabled())
}

fn embed_features_profiled(
    query: &[f32],
    corpus: &EmbeddingCorpus,
    k: usize,
    n_classes: usize,
    backend: Backend,
    profiler: &mut Profiler,
) -> Result<Vec<f32>> {
    if k == 0 {
        return Err(Error::InvalidParameter("k must be positive".into()));
    }
    if n_classes < corpus.n_classes {
        return Err(Error::InvalidParameter(format!(
            "{n_classes} classes requested, corpus labels span {}",
            corpus.n_classes
        )));
    }
    let neighbors = knn_search_profiled(query, corpus, k, backend, profiler)?;
    let mut counts = vec![0usize; n_classes];
    let mut distance_sum = 0.0f64;
    for n in &neighbors {
        counts[corpus.labels[n.index]] += 1;
        distance_sum += f64::from(n.distance);
    }
    let mut features: Vec<f32> = counts.iter().map(|&c| c as f32 / k as f32).collect();
    features.push((distance_sum / k as f64) as f32);
    Ok(features)
}

/// Feature rows for every query of a sample-major batch, timed under the
/// embedding scope. Returns `n_queries x (n_classes + 1)` values.
pub fn embed_features_batch(
    queries: &[f32],
    corpus: &EmbeddingCorpus,
    k: usize,
    n_classes: usize,
    backend: Backend,
    profiler: &mut Profiler,
) -> Result<Vec<f32>> {
    if !queries.len().is_multiple_of(corpus.dim) {
        return Err(Error::DimensionMismatch(format!(
            "{} query values is not a whole number of dim-{} rows",
            queries.len(),
            corpus.dim
        )));
    }
    profiler.scope(names::EMBEDDINGS, |profiler| {
        let mut out = Vec::with_capacity(queries.len() / corpus.dim * (n_classes + 1));
        for query in queries.chunks_exact(corpus.dim) {
            out.extend(embed_features_profiled(
                query, corpus, k, n_classes, backend, profiler,
            )?);
        }
        Ok(out)
    })
}

/// Clustered embeddings: one random centre per class in `[-1, 1]^dim` and
/// items scattered around their class centre. Returns the corpus and a
/// labelled query set drawn from the same centres.
pub fn gen_synthetic_embeddings(
    seed: u64,
    n_items: usize,
    n_queries: usize,
    dim: usize,
    n_classes: usize,
) -> Result<(EmbeddingCorpus, EmbeddingCorpus)> {
    if n_classes == 0 {
        return Err(Error::InvalidParameter("n_classes must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres: Vec<f32> = (0..n_classes * dim)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut draw = |count: usize| {
        let mut vectors = Vec::with_capacity(count * dim);
        let mut labels = Vec::with_capacity(count);
        for _ in 0..count {
            let class = rng.random_range(0..n_classes);
            let centre = &centres[class * dim..(class + 1) * dim];
            vectors.extend(centre.iter().map(|&c| c + rng.random_range(-0.35f32..0.35)));
            labels.push(class);
        }
        EmbeddingCorpus::new(vectors, dim, labels, n_classes)
    };
    let corpus = draw(n_items)?;
    let queries = draw(n_queries)?;
    Ok((corpus, queries))
}
