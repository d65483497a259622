//! k-th nearest-neighbour OOD scoring over concatenated, per-layer
//! normalised projection features.

use std::cmp::Ordering;
use std::collections::BinaryHeap;
use std::fmt::Write as _;
use std::path::Path;

use ndarray::{s, Array2, ArrayView1, ArrayView2};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoders::{EmbeddingMatrix, EmbeddingSource, UNIT_NORM_TOL};
use crate::error::{invalid, shape, Result};
use crate::head::MlpHead;
use crate::persist;
use crate::scalar::Scalar;

pub const DEFAULT_K: usize = 200;
pub const DEFAULT_TARGET_TPR: f64 = 0.95;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KnnBackend {
    /// Full scan and sort per query.
    Exact,
    /// Vantage-point tree.
    #[default]
    Indexed,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KnnConfig {
    pub k: usize,
    pub target_tpr: f64,
    pub backend: KnnBackend,
}

impl Default for KnnConfig {
    fn default() -> Self {
        Self { k: DEFAULT_K, target_tpr: DEFAULT_TARGET_TPR, backend: KnnBackend::default() }
    }
}

impl KnnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k must be at least 1"));
        }
        if !(self.target_tpr > 0.0 && self.target_tpr <= 1.0) {
            return Err(invalid("target_tpr must lie in (0, 1]"));
        }
        Ok(())
    }
}

/// Normalises each `layer_dims` segment of every row in place.
fn normalize_segments<T: Scalar>(m: &mut Array2<T>, layer_dims: &[usize]) {
    for mut row in m.rows_mut() {
        let mut start = 0;
        for &w in layer_dims {
            let mut seg = row.slice_mut(s![start..start + w]);
            let n = seg.dot(&seg).sqrt().max(T::NORM_EPS);
            seg.mapv_inplace(|v| v / n);
            start += w;
        }
    }
}

/// Per-layer-normalised concatenation of the three projection outputs. The
/// same transform is used for bank rows and queries.
pub fn embed_features<T: Scalar>(head: &MlpHead<T>, features: ArrayView2<'_, T>) -> Result<Array2<T>> {
    let layers = head.project(features)?;
    let views: Vec<_> = layers.iter().map(|l| l.view()).collect();
    let mut out = ndarray::concatenate(ndarray::Axis(1), &views)
        .map_err(|e| shape(e.to_string()))?
        .as_standard_layout()
        .into_owned();
    let dims: Vec<usize> = layers.iter().map(|l| l.ncols()).collect();
    normalize_segments(&mut out, &dims);
    Ok(out)
}

/// Untrained baseline: the encoder features repeated `copies` times, each
/// copy normalised, matching the width of a trained bank.
pub fn stack_features<T: Scalar>(features: ArrayView2<'_, T>, copies: usize) -> Array2<T> {
    let views = vec![features; copies];
    let mut out =
        ndarray::concatenate(ndarray::Axis(1), &views).expect("equal row counts").as_standard_layout().into_owned();
    normalize_segments(&mut out, &vec![features.ncols(); copies]);
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureBank<T> {
    vectors: Array2<T>,
    layer_dims: Vec<usize>,
    built_from: String,
}

impl<T: Scalar> FeatureBank<T> {
    /// Wraps already-transformed rows after checking segment norms.
    pub fn from_vectors(vectors: Array2<T>, layer_dims: Vec<usize>, built_from: impl Into<String>) -> Result<Self> {
        if layer_dims.iter().sum::<usize>() != vectors.ncols() {
            return Err(shape(format!("layer dims {layer_dims:?} do not add up to width {}", vectors.ncols())));
        }
        for (i, row) in vectors.rows().into_iter().enumerate() {
            let mut start = 0;
            for &w in &layer_dims {
                let seg = row.slice(s![start..start + w]);
                let n = seg.iter().map(|v| v.to_f64_lossy().powi(2)).sum::<f64>().sqrt();
                if (n - 1.0).abs() > UNIT_NORM_TOL {
                    return Err(invalid(format!("bank row {i} segment at {start} has norm {n}")));
                }
                start += w;
            }
        }
        let vectors = if vectors.is_standard_layout() { vectors } else { vectors.as_standard_layout().into_owned() };
        Ok(Self { vectors, layer_dims, built_from: built_from.into() })
    }

    /// Stacked, normalised encoder features without any head.
    pub fn pass_through(features: ArrayView2<'_, T>, copies: usize) -> Result<Self> {
        if features.nrows() == 0 {
            return Err(invalid("empty training set"));
        }
        Self::from_vectors(stack_features(features, copies), vec![features.ncols(); copies], "pass-through")
    }

    pub fn vectors(&self) -> ArrayView2<'_, T> {
        self.vectors.view()
    }

    pub fn rows(&self) -> usize {
        self.vectors.nrows()
    }

    pub fn width(&self) -> usize {
        self.vectors.ncols()
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn built_from(&self) -> &str {
        &self.built_from
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let m = EmbeddingMatrix::new(self.vectors.clone(), false, EmbeddingSource::Derived)?;
        persist::write_bank(&m, path)
    }

    pub fn load(path: impl AsRef<Path>, layer_dims: Vec<usize>) -> Result<FeatureBank<f32>> {
        let m = persist::read_bank(path.as_ref())?;
        FeatureBank::from_vectors(m.into_values(), layer_dims, path.as_ref().display().to_string())
    }
}

/// Forwards every training row through `head` and stores the transformed rows.
pub fn build_bank<T: Scalar>(
    head: &MlpHead<T>,
    train_features: &EmbeddingMatrix<T>,
    built_from: impl Into<String>,
) -> Result<FeatureBank<T>> {
    if train_features.rows() == 0 {
        return Err(invalid("empty training set"));
    }
    let vectors = embed_features(head, train_features.values())?;
    let dims = head.shape().hidden_dims;
    FeatureBank::from_vectors(vectors, dims, built_from)
}

const LANES: usize = 8;

#[inline]
fn squared_distance_slices<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); LANES];
    let mut ca = a.chunks_exact(LANES);
    let mut cb = b.chunks_exact(LANES);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for l in 0..LANES {
            let d = x[l] - y[l];
            acc[l] += d * d;
        }
    }
    let mut tail = T::zero();
    for (x, y) in ca.remainder().iter().zip(cb.remainder()) {
        let d = *x - *y;
        tail += d * d;
    }
    acc.iter().fold(tail, |s, v| s + *v)
}

#[inline]
pub(crate) fn euclidean<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>) -> T {
    match (a.as_slice(), b.as_slice()) {
        (Some(x), Some(y)) => squared_distance_slices(x, y).sqrt(),
        _ => {
            let mut acc = T::zero();
            for (x, y) in a.iter().zip(b.iter()) {
                let d = *x - *y;
                acc += d * d;
            }
            acc.sqrt()
        }
    }
}

fn check_query<T: Scalar>(query: &ArrayView1<'_, T>, rows: usize, width: usize, k: usize) -> Result<()> {
    if k == 0 || k > rows {
        return Err(invalid(format!("k = {k} outside 1..={rows}")));
    }
    if query.len() != width {
        return Err(shape(format!("query width {} vs bank width {width}", query.len())));
    }
    Ok(())
}

/// Distance from `query` to its k-th closest bank row by full scan.
pub fn knn_score<T: Scalar>(query: ArrayView1<'_, T>, bank: &FeatureBank<T>, k: usize) -> Result<T> {
    ExactIndex::new(bank).kth_distance(query, k)
}

pub trait NeighborIndex<T: Scalar>: Send + Sync {
    fn rows(&self) -> usize;

    fn kth_distance(&self, query: ArrayView1<'_, T>, k: usize) -> Result<T>;

    fn score_all(&self, queries: ArrayView2<'_, T>, k: usize) -> Result<Vec<T>> {
        (0..queries.nrows()).into_par_iter().map(|i| self.kth_distance(queries.row(i), k)).collect()
    }
}

pub struct ExactIndex<'a, T> {
    bank: ArrayView2<'a, T>,
}

impl<'a, T: Scalar> ExactIndex<'a, T> {
    pub fn new(bank: &'a FeatureBank<T>) -> Self {
        Self { bank: bank.vectors() }
    }
}

impl<T: Scalar> NeighborIndex<T> for ExactIndex<'_, T> {
    fn rows(&self) -> usize {
        self.bank.nrows()
    }

    fn kth_distance(&self, query: ArrayView1<'_, T>, k: usize) -> Result<T> {
        check_query(&query, self.bank.nrows(), self.bank.ncols(), k)?;
        let mut d: Vec<(T, usize)> =
            self.bank.rows().into_iter().enumerate().map(|(i, row)| (euclidean(query, row), i)).collect();
        d.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap_or(Ordering::Equal).then(a.1.cmp(&b.1)));
        Ok(d[k - 1].0)
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate<T> {
    dist: T,
    index: usize,
}

impl<T: PartialOrd> PartialEq for Candidate<T> {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl<T: PartialOrd> Eq for Candidate<T> {}

impl<T: PartialOrd> PartialOrd for Candidate<T> {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl<T: PartialOrd> Ord for Candidate<T> {
    fn cmp(&self, other: &Self) -> Ordering {
        self.dist.partial_cmp(&other.dist).unwrap_or(Ordering::Equal).then(self.index.cmp(&other.index))
    }
}

#[derive(Debug, Clone)]
struct VpNode<T> {
    point: usize,
    radius: T,
    inside: Option<usize>,
    outside: Option<usize>,
}

/// Vantage-point tree over the bank rows. Exact: subtrees are pruned only
/// when the triangle inequality rules them out.
pub struct VpTree<'a, T> {
    bank: ArrayView2<'a, T>,
    nodes: Vec<VpNode<T>>,
    root: Option<usize>,
}

impl<'a, T: Scalar> VpTree<'a, T> {
    pub fn new(bank: &'a FeatureBank<T>) -> Self {
        let mut tree = Self { bank: bank.vectors(), nodes: Vec::new(), root: None };
        let items: Vec<usize> = (0..tree.bank.nrows()).collect();
        tree.root = tree.build(items);
        tree
    }

    fn build(&mut self, mut items: Vec<usize>) -> Option<usize> {
        if items.is_empty() {
            return None;
        }
        let point = items.swap_remove(0);
        let vp = self.bank.row(point);
        let mut with_d: Vec<Candidate<T>> =
            items.iter().map(|&i| Candidate { dist: euclidean(vp, self.bank.row(i)), index: i }).collect();
        let slot = self.nodes.len();
        self.nodes.push(VpNode { point, radius: T::zero(), inside: None, outside: None });
        if with_d.is_empty() {
            return Some(slot);
        }
        with_d.sort();
        let mid = with_d.len() / 2;
        let radius = with_d[mid].dist;
        let outside: Vec<usize> = with_d[mid..].iter().map(|c| c.index).collect();
        with_d.truncate(mid);
        let inside: Vec<usize> = with_d.into_iter().map(|c| c.index).collect();
        let inside = self.build(inside);
        let outside = self.build(outside);
        self.nodes[slot] = VpNode { point, radius, inside, outside };
        Some(slot)
    }

    fn search(&self, node: usize, query: ArrayView1<'_, T>, k: usize, heap: &mut BinaryHeap<Candidate<T>>) {
        let n = &self.nodes[node];
        let d = euclidean(query, self.bank.row(n.point));
        let cand = Candidate { dist: d, index: n.point };
        if heap.len() < k {
            heap.push(cand);
        } else if cand < *heap.peek().expect("non-empty heap") {
            heap.pop();
            heap.push(cand);
        }
        let tau = |heap: &BinaryHeap<Candidate<T>>| {
            if heap.len() < k {
                T::infinity()
            } else {
                heap.peek().expect("non-empty heap").dist
            }
        };
        let slack =
            |t: T| T::epsilon() * T::from_f64_lossy(64.0) * (d + n.radius + if t.is_finite() { t } else { T::zero() });
        let visit_inside = |heap: &BinaryHeap<Candidate<T>>| {
            let t = tau(heap);
            d - t <= n.radius + slack(t)
        };
        let visit_outside = |heap: &BinaryHeap<Candidate<T>>| {
            let t = tau(heap);
            d + t + slack(t) >= n.radius
        };
        if d < n.radius {
            if let Some(c) = n.inside.filter(|_| visit_inside(heap)) {
                self.search(c, query, k, heap);
            }
            if let Some(c) = n.outside.filter(|_| visit_outside(heap)) {
                self.search(c, query, k, heap);
            }
        } else {
            if let Some(c) = n.outside.filter(|_| visit_outside(heap)) {
                self.search(c, query, k, heap);
            }
            if let Some(c) = n.inside.filter(|_| visit_inside(heap)) {
                self.search(c, query, k, heap);
            }
        }
    }
}

impl<T: Scalar> NeighborIndex<T> for VpTree<'_, T> {
    fn rows(&self) -> usize {
        self.bank.nrows()
    }

    fn kth_distance(&self, query: ArrayView1<'_, T>, k: usize) -> Result<T> {
        check_query(&query, self.bank.nrows(), self.bank.ncols(), k)?;
        let mut heap = BinaryHeap::with_capacity(k + 1);
        if let Some(root) = self.root {
            self.search(root, query, k, &mut heap);
        }
        Ok(heap.peek().expect("k <= rows").dist)
    }
}

pub fn make_index<'a, T: Scalar>(bank: &'a FeatureBank<T>, backend: KnnBackend) -> Box<dyn NeighborIndex<T> + 'a> {
    match backend {
        KnnBackend::Exact => Box::new(ExactIndex::new(bank)),
        KnnBackend::Indexed => Box::new(VpTree::new(bank)),
    }
}

/// Empirical `target_tpr` quantile of ID holdout scores, linearly
/// interpolated between order statistics at position `(n - 1) * target_tpr`.
pub fn calibrate_threshold(id_holdout_scores: &[f64], target_tpr: f64) -> Result<f64> {
    if id_holdout_scores.is_empty() {
        return Err(invalid("no holdout scores"));
    }
    if !(0.0..=1.0).contains(&target_tpr) {
        return Err(invalid(format!("target_tpr {target_tpr} outside [0, 1]")));
    }
    if id_holdout_scores.iter().any(|s| !s.is_finite()) {
        return Err(invalid("holdout scores must be finite"));
    }
    let mut sorted = id_holdout_scores.to_vec();
    sorted.sort_by(|a, b| a.total_cmp(b));
    let pos = (sorted.len() - 1) as f64 * target_tpr;
    let lo = pos.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    Ok(sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo]))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    #[serde(rename = "ID")]
    Id,
    #[serde(rename = "OOD")]
    Ood,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Id => "ID",
            Decision::Ood => "OOD",
        }
    }
}

/// OOD iff `score > threshold`.
pub fn detect(score: f64, threshold: f64) -> Decision {
    if score > threshold {
        Decision::Ood
    } else {
        Decision::Id
    }
}

/// `sample_id,score,decision` rows.
pub fn scores_csv<S: AsRef<str>>(sample_ids: &[S], scores: &[f64], threshold: f64) -> Result<String> {
    if sample_ids.len() != scores.len() {
        return Err(shape("sample ids and scores differ in length"));
    }
    let mut out = String::from("sample_id,score,decision\n");
    for (id, &s) in sample_ids.iter().zip(scores) {
        let _ = writeln!(out, "{},{},{}", id.as_ref(), s, detect(s, threshold).as_str());
    }
    Ok(out)
}
