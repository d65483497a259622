//! Seeded random instances built from public library types.
#![allow(dead_code)]

use ndarray::Array2;
use odpc::head::{HeadShape, MlpHead};
use odpc::losses::{build_negative_set, NegativeSet, TrainingBatch};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::oracles::Rows;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn gaussian_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        // Box-Muller keeps this independent of rand_distr
        let u1: f64 = rng.random_range(1e-12..1.0);
        let u2: f64 = rng.random();
        (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
    })
}

pub fn to_rows(m: &Array2<f64>) -> Rows {
    m.rows().into_iter().map(|r| r.to_vec()).collect()
}

pub struct Instance {
    pub head: MlpHead<f64>,
    pub batch: TrainingBatch<f64>,
    pub negatives: NegativeSet<f64>,
    pub peers: Vec<Array2<f64>>,
}

/// Small head (input 8, hidden 6/5/4), `n` samples over 3 classes with 2
/// peers each. Biases are randomised so ReLU kinks are not all at zero.
pub fn instance(seed: u64, n: usize) -> Instance {
    let mut r = rng(seed);
    let shape = HeadShape { input_dim: 8, hidden_dims: vec![6, 5, 4] };
    let mut head = MlpHead::<f64>::new(&shape, 3, 4, seed).unwrap();
    for (name, t) in head.tensors_mut() {
        if name.ends_with("bias") {
            for v in t.iter_mut() {
                *v = r.random_range(-0.2..0.4);
            }
        }
    }
    let classes = 3;
    let mut labels: Vec<usize> = (0..n).map(|i| i % classes).collect();
    labels.rotate_left((seed as usize) % n);
    let class_texts = gaussian_matrix(&mut r, classes, 8);
    let texts = Array2::from_shape_fn((n, 8), |(i, j)| class_texts[[labels[i], j]]);
    let images = gaussian_matrix(&mut r, n, 8);
    let peers: Vec<Array2<f64>> = (0..classes).map(|_| gaussian_matrix(&mut r, 2, 8)).collect();
    let batch = TrainingBatch { images, labels, texts };
    let negatives = build_negative_set(&batch, &peers, 0.5, &mut r).unwrap();
    Instance { head, batch, negatives, peers }
}

/// Loop-based forward pass through the three ReLU layers.
pub fn forward_oracle(head: &MlpHead<f64>, x: &Rows) -> Vec<Rows> {
    let mut outs = Vec::new();
    let mut cur = x.clone();
    for layer in head.layers() {
        let mut next = Vec::new();
        for row in &cur {
            let mut out = Vec::new();
            for o in 0..layer.out_dim() {
                let mut z = layer.bias[o];
                for i in 0..layer.in_dim() {
                    z += layer.weight[[o, i]] * row[i];
                }
                out.push(z.max(0.0));
            }
            next.push(out);
        }
        outs.push(next.clone());
        cur = next;
    }
    outs
}

pub fn logits_oracle(head: &MlpHead<f64>, top: &Rows) -> Rows {
    let c = head.classifier();
    top.iter()
        .map(|row| {
            (0..c.out_dim())
                .map(|o| c.bias[o] + (0..c.in_dim()).map(|i| c.weight[[o, i]] * row[i]).sum::<f64>())
                .collect()
        })
        .collect()
}

/// `rows x sum(dims)` Gaussian rows with each segment normalised, drawn
/// around a few shared centres so neighbourhoods are uneven.
pub fn segmented_rows(rng: &mut ChaCha8Rng, rows: usize, dims: &[usize]) -> Rows {
    let width: usize = dims.iter().sum();
    let centres = gaussian_matrix(rng, 4, width);
    let noise = gaussian_matrix(rng, rows, width);
    (0..rows)
        .map(|i| {
            let c = rng.random_range(0..4);
            let raw: Vec<f64> = (0..width).map(|j| 2.0 * centres[[c, j]] + noise[[i, j]]).collect();
            super::oracles::segment_unit(&raw, dims)
        })
        .collect()
}

pub fn from_rows(rows: &Rows) -> Array2<f64> {
    let cols = rows.first().map_or(0, Vec::len);
    Array2::from_shape_fn((rows.len(), cols), |(i, j)| rows[i][j])
}
