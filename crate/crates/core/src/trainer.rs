//! Seeded mini-batch training of the projection head: per-batch mixup
//! negatives, SGD with classical momentum and a step learning-rate schedule.

use std::fmt::Write as _;
use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, OdpcError, Result};
use crate::head::{HeadGrads, MlpHead};
use crate::losses::{build_negative_set, grad_total_loss, LossConfig, TrainingBatch};
use crate::persist;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub step_size: usize,
    pub gamma: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        Self {
            epochs: 160,
            batch_size: 32,
            lr: 1e-5,
            momentum: 0.99,
            step_size: 30,
            gamma: 0.25,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(invalid("batch_size must be at least 2"));
        }
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(invalid("lr must be finite and non-negative"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum must lie in [0, 1)"));
        }
        if self.step_size == 0 {
            return Err(invalid("step_size must be positive"));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return Err(invalid("gamma must lie in (0, 1]"));
        }
        self.loss.validate()
    }
}

/// `lr * gamma^floor(epoch / step_size)`.
pub fn lr_at(epoch: i64, cfg: &TrainingConfig) -> Result<f64> {
    if epoch < 0 {
        return Err(invalid(format!("epoch must be non-negative, got {epoch}")));
    }
    if cfg.step_size == 0 {
        return Err(invalid("step_size must be positive"));
    }
    let decays = (epoch as u64 / cfg.step_size as u64) as i32;
    Ok(cfg.lr * cfg.gamma.powi(decays))
}

/// Mean losses over the update steps of one epoch.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub total: f64,
    pub pcc: [f64; 3],
    pub ce: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingState<T> {
    pub head: MlpHead<T>,
    pub velocity: HeadGrads<T>,
    pub epoch: usize,
    pub history: Vec<EpochRecord>,
}

impl<T: Scalar> TrainingState<T> {
    pub fn new(head: MlpHead<T>) -> Self {
        let velocity = HeadGrads::zeros_like(&head);
        let epoch = head.epoch;
        Self { head, velocity, epoch, history: Vec::new() }
    }

    pub fn sgd_step(&mut self, grads: &HeadGrads<T>, lr: f64, momentum: f64) -> Result<()> {
        sgd_step(&mut self.head, &mut self.velocity, grads, lr, momentum)
    }
}

/// Classical momentum: `v <- momentum * v + g`, `theta <- theta - lr * v`.
pub fn sgd_step<T: Scalar>(
    head: &mut MlpHead<T>,
    velocity: &mut HeadGrads<T>,
    grads: &HeadGrads<T>,
    lr: f64,
    momentum: f64,
) -> Result<()> {
    let lr = T::from_f64_lossy(lr);
    let mu = T::from_f64_lossy(momentum);
    let params = head.tensors_mut();
    let vels = velocity.tensors_mut();
    let gs = grads.tensors();
    if params.len() != vels.len() || params.len() != gs.len() {
        return Err(shape("parameter, velocity and gradient sets differ"));
    }
    for (((name, p), (_, v)), (_, g)) in params.into_iter().zip(vels).zip(gs) {
        if p.len() != v.len() || p.len() != g.len() {
            return Err(shape(format!("tensor {name}: sizes {} / {} / {}", p.len(), v.len(), g.len())));
        }
        for ((pi, vi), gi) in p.iter_mut().zip(v.iter_mut()).zip(g) {
            *vi = mu * *vi + *gi;
            *pi -= lr * *vi;
        }
    }
    Ok(())
}

/// Frozen encoder outputs the trainer consumes.
#[derive(Debug, Clone, Copy)]
pub struct TrainingData<'a, T> {
    pub images: ArrayView2<'a, T>,
    pub labels: &'a [usize],
    /// Row `c` is the encoded description of ID class `c`.
    pub class_texts: ArrayView2<'a, T>,
    /// Per ID class, encoded descriptions of its peer labels.
    pub peer_texts: &'a [Array2<T>],
}

impl<T: Scalar> TrainingData<'_, T> {
    fn validate(&self, head: &MlpHead<T>) -> Result<()> {
        let n = self.labels.len();
        if self.images.nrows() != n {
            return Err(shape(format!("{} image rows for {n} labels", self.images.nrows())));
        }
        let classes = self.class_texts.nrows();
        if self.peer_texts.len() != classes {
            return Err(shape(format!("{} peer blocks for {classes} classes", self.peer_texts.len())));
        }
        if classes != head.num_id_classes() {
            return Err(shape(format!("{classes} class texts, head has {} ID classes", head.num_id_classes())));
        }
        if self.images.ncols() != head.input_dim() || self.class_texts.ncols() != head.input_dim() {
            return Err(shape("feature width does not match head input"));
        }
        let mut present = vec![false; classes];
        for &y in self.labels {
            *present.get_mut(y).ok_or_else(|| invalid(format!("label {y} out of range for {classes} classes")))? = true;
        }
        if present.iter().filter(|p| **p).count() < 2 {
            return Err(invalid("training data needs at least two classes"));
        }
        for (c, peers) in self.peer_texts.iter().enumerate() {
            if present[c] && peers.nrows() == 0 {
                return Err(OdpcError::Config(format!("class {c} has no peer text features")));
            }
        }
        Ok(())
    }
}

/// Runs `cfg.epochs` epochs of shuffled mini-batch training from `head`.
/// The final partial batch of each epoch is dropped; single-class batches are
/// skipped.
pub fn train<T: Scalar>(
    data: &TrainingData<'_, T>,
    head: MlpHead<T>,
    cfg: &TrainingConfig,
) -> Result<TrainingState<T>> {
    cfg.validate()?;
    data.validate(&head)?;
    let n = data.labels.len();
    if cfg.epochs > 0 && n < cfg.batch_size {
        return Err(invalid(format!("{n} samples cannot fill one batch of {}", cfg.batch_size)));
    }
    let lambda = T::from_f64_lossy(cfg.loss.mix_lambda);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut state = TrainingState::new(head);
    let mut order: Vec<usize> = (0..n).collect();

    for epoch in 0..cfg.epochs {
        let lr = lr_at(epoch as i64, cfg)?;
        order.shuffle(&mut rng);
        let mut sums = [0.0f64; 5];
        let mut steps = 0usize;
        for (b, idx) in order.chunks_exact(cfg.batch_size).enumerate() {
            let labels: Vec<usize> = idx.iter().map(|&i| data.labels[i]).collect();
            if labels.iter().all(|&y| y == labels[0]) {
                log::warn!("epoch {epoch} batch {b}: single-class batch skipped");
                continue;
            }
            let batch = TrainingBatch {
                images: data.images.select(Axis(0), idx),
                texts: data.class_texts.select(Axis(0), &labels),
                labels,
            };
            let negatives = build_negative_set(&batch, data.peer_texts, lambda, &mut rng)?;
            let (loss, grads) = grad_total_loss(&state.head, &batch, &negatives, &cfg.loss)?;
            if !loss.total.is_finite() {
                return Err(OdpcError::Config(format!("non-finite loss at epoch {epoch} batch {b}")));
            }
            state.sgd_step(&grads, lr, cfg.momentum)?;
            sums[0] += loss.total.to_f64_lossy();
            for (s, v) in sums[1..4].iter_mut().zip(&loss.pcc) {
                *s += v.to_f64_lossy();
            }
            sums[4] += loss.ce.to_f64_lossy();
            steps += 1;
        }
        if steps == 0 {
            return Err(OdpcError::DegenerateBatch(format!("epoch {epoch} produced no usable batch")));
        }
        let k = steps as f64;
        state.epoch += 1;
        state.head.epoch = state.epoch;
        state.history.push(EpochRecord {
            epoch,
            lr,
            total: sums[0] / k,
            pcc: [sums[1] / k, sums[2] / k, sums[3] / k],
            ce: sums[4] / k,
            steps,
        });
        log::info!("epoch {epoch}: lr {lr:.3e} loss {:.6}", sums[0] / k);
    }
    Ok(state)
}

pub fn loss_history_csv(history: &[EpochRecord]) -> String {
    let mut out = String::from("epoch,lr,total,pcc1,pcc2,pcc3,ce\n");
    for r in history {
        let _ = writeln!(out, "{},{:e},{},{},{},{},{}", r.epoch, r.lr, r.total, r.pcc[0], r.pcc[1], r.pcc[2], r.ce);
    }
    out
}

pub fn write_loss_history(history: &[EpochRecord], path: impl AsRef<Path>) -> Result<()> {
    persist::write_atomic(path, loss_history_csv(history).as_bytes())
}

/// Exact equality of every parameter of two heads.
pub fn heads_equal<T: Scalar>(a: &MlpHead<T>, b: &MlpHead<T>) -> bool {
    let (ta, tb) = (a.tensors(), b.tensors());
    ta.len() == tb.len() && ta.iter().zip(&tb).all(|((_, x), (_, y))| x == y)
}
