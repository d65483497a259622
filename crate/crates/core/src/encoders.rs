//! Frozen feature extractors.
//!
//! The built-in toy encoder is a seeded Gaussian random projection followed by
//! row-wise L2 normalisation; real vision-language features enter through
//! [`import_embeddings`]. Nothing here exposes trainable parameters.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, Result};
use crate::persist;
use crate::scalar::Scalar;

pub const DEFAULT_FEATURE_DIM: usize = 512;

/// Tolerance on the unit-norm invariant of normalised rows.
pub const UNIT_NORM_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingSource {
    Toy,
    Imported,
    Derived,
}

/// Row-major feature matrix with a normalisation flag.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingMatrix<T> {
    values: Array2<T>,
    normalized: bool,
    source: EmbeddingSource,
}

impl<T: Scalar> EmbeddingMatrix<T> {
    /// Validates finiteness and, when `normalized`, the unit-norm invariant.
    pub fn new(values: Array2<T>, normalized: bool, source: EmbeddingSource) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(invalid("embedding matrix contains non-finite values"));
        }
        if normalized {
            for (i, row) in values.rows().into_iter().enumerate() {
                let n = row.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(invalid(format!("row {i} has norm {n}, expected 1")));
                }
            }
        }
        Ok(Self { values, normalized, source })
    }

    /// Wraps raw, unnormalised features.
    pub fn from_raw(values: Array2<T>) -> Result<Self> {
        Self::new(values, false, EmbeddingSource::Derived)
    }

    pub fn values(&self) -> ArrayView2<'_, T> {
        self.values.view()
    }

    pub fn into_values(self) -> Array2<T> {
        self.values
    }

    pub fn rows(&self) -> usize {
        self.values.nrows()
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn source(&self) -> EmbeddingSource {
        self.source
    }

    pub(crate) fn with_source(mut self, source: EmbeddingSource) -> Self {
        self.source = source;
        self
    }

    /// Subset of rows, in the given order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self { values: self.values.select(Axis(0), indices), normalized: self.normalized, source: self.source }
    }

    /// Rows scaled to unit L2 norm; a zero row is an error.
    pub fn l2_normalized(&self) -> Result<Self> {
        let mut values = self.values.clone();
        for (i, mut row) in values.rows_mut().into_iter().enumerate() {
            let n = row.iter().fold(T::zero(), |s, v| s + *v * *v).sqrt();
            if n <= T::NORM_EPS {
                return Err(invalid(format!("row {i} has zero norm")));
            }
            row.mapv_inplace(|v| v / n);
        }
        Self::new(values, true, self.source)
    }

    pub fn cast<U: Scalar>(&self) -> EmbeddingMatrix<U> {
        EmbeddingMatrix {
            values: self.values.mapv(|v| U::from_f64_lossy(v.to_f64_lossy())),
            normalized: self.normalized,
            source: self.source,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToyEncoderConfig {
    pub seed: u64,
    pub raw_dim: usize,
    pub out_dim: usize,
}

impl ToyEncoderConfig {
    pub fn new(seed: u64, raw_dim: usize) -> Self {
        Self { seed, raw_dim, out_dim: DEFAULT_FEATURE_DIM }
    }

    fn validate(&self) -> Result<()> {
        if self.out_dim == 0 || self.raw_dim == 0 {
            return Err(invalid("toy encoder dimensions must be positive"));
        }
        Ok(())
    }

    /// `raw_dim x out_dim` Gaussian projection, a pure function of the config.
    fn projection<T: Scalar>(&self) -> Array2<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        Array2::from_shape_simple_fn((self.raw_dim, self.out_dim), || {
            let z: f64 = StandardNormal.sample(&mut rng);
            T::from_f64_lossy(z)
        })
    }
}

fn project_and_normalize<T: Scalar>(raw: ArrayView2<'_, T>, cfg: &ToyEncoderConfig) -> Result<EmbeddingMatrix<T>> {
    cfg.validate()?;
    if raw.ncols() != cfg.raw_dim {
        return Err(shape(format!("raw input has {} columns, encoder expects {}", raw.ncols(), cfg.raw_dim)));
    }
    for (i, row) in raw.rows().into_iter().enumerate() {
        if row.iter().all(|v| *v == T::zero()) {
            return Err(invalid(format!("row {i} is the zero vector")));
        }
        if row.iter().any(|v| !v.is_finite()) {
            return Err(invalid(format!("row {i} has non-finite values")));
        }
    }
    let mut out = raw.dot(&cfg.projection::<T>());
    for (i, mut row) in out.rows_mut().into_iter().enumerate() {
        let n = row.iter().map(|v| *v * *v).sum::<T>().sqrt();
        if !(n > T::zero()) {
            return Err(invalid(format!("row {i} projects to the zero vector")));
        }
        row.mapv_inplace(|v| v / n);
    }
    EmbeddingMatrix::new(out, true, EmbeddingSource::Toy)
}

/// Seeded random projection of raw image vectors, row-normalised.
pub fn toy_encode_images<T: Scalar>(
    raw_vectors: ArrayView2<'_, T>,
    cfg: &ToyEncoderConfig,
) -> Result<EmbeddingMatrix<T>> {
    project_and_normalize(raw_vectors, cfg)
}

/// Hashed bag-of-words over whitespace tokens, then the image projection.
pub fn toy_encode_texts<T: Scalar, S: AsRef<str>>(
    descriptions: &[S],
    cfg: &ToyEncoderConfig,
) -> Result<EmbeddingMatrix<T>> {
    cfg.validate()?;
    let mut counts = Array2::<T>::zeros((descriptions.len(), cfg.raw_dim));
    for (i, d) in descriptions.iter().enumerate() {
        let d = d.as_ref();
        if d.trim().is_empty() {
            return Err(invalid(format!("description {i} is empty")));
        }
        for (c, v) in counts.row_mut(i).iter_mut().zip(bag_of_words(d, cfg.raw_dim)) {
            *c = T::from_f64_lossy(v);
        }
    }
    project_and_normalize(counts.view(), cfg)
}

/// Token counts of `text` hashed into `raw_dim` buckets; the raw input of
/// [`toy_encode_texts`].
pub fn bag_of_words(text: &str, raw_dim: usize) -> Vec<f64> {
    let mut counts = vec![0.0; raw_dim];
    for tok in text.split_whitespace() {
        counts[(fnv1a(tok.as_bytes()) % raw_dim as u64) as usize] += 1.0;
    }
    counts
}

/// Loads a feature file written by [`persist::write_bank`].
pub fn import_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingMatrix<f32>> {
    Ok(persist::read_bank(path)?.with_source(EmbeddingSource::Imported))
}

pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in bytes {
        h ^= *b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}
