//! Mixup negatives, the peer-class contrastive loss, cross-entropy, and exact
//! reverse-mode gradients of their sum with respect to every head parameter.
//!
//! Per projection layer `l` the contrastive term contrasts each image anchor
//! `I_i` with its paired description `T_i` against, for every `k != i`, the
//! mixed image `I_m(k)`, the unpaired description `T_k` and the mixed text
//! `T_m(k)`. All rows are L2-normalised after projection, so similarities lie
//! in `[-1, 1]` before the temperature is applied.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, shape, OdpcError, Result};
use crate::head::{softmax_rows, HeadGrads, MlpHead, NUM_PROJECTION_LAYERS};
use crate::scalar::{log_sum_exp, Scalar};

pub const DEFAULT_TEMPERATURE: f64 = 0.005;
pub const DEFAULT_MIX_LAMBDA: f64 = 0.5;

/// How per-anchor ratios are reduced into one layer loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PccForm {
    /// `mean_i -log(pos_i / (pos_i + sum negs_i))`.
    #[default]
    Standard,
    /// `-log(mean_i pos_i / sum negs_i)`, positive absent from the denominator.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossConfig {
    pub temperature: f64,
    pub mix_lambda: f64,
    pub pcc_form: PccForm,
    /// Ablation switches.
    pub use_pcc: bool,
    pub use_ce: bool,
    pub use_mixup: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            temperature: DEFAULT_TEMPERATURE,
            mix_lambda: DEFAULT_MIX_LAMBDA,
            pcc_form: PccForm::Standard,
            use_pcc: true,
            use_ce: true,
            use_mixup: true,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(invalid(format!("temperature must be > 0, got {}", self.temperature)));
        }
        if !(0.0..=1.0).contains(&self.mix_lambda) {
            return Err(invalid(format!("mix_lambda must lie in [0, 1], got {}", self.mix_lambda)));
        }
        if !self.use_pcc && !self.use_ce {
            return Err(invalid("at least one of use_pcc / use_ce must be enabled"));
        }
        Ok(())
    }
}

/// Paired image/text encoder features for one batch. Row `i` of `texts` is
/// the encoded description of class `labels[i]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingBatch<T> {
    pub images: Array2<T>,
    pub labels: Vec<usize>,
    pub texts: Array2<T>,
}

impl<T: Scalar> TrainingBatch<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn validate(&self) -> Result<()> {
        let n = self.labels.len();
        if self.images.nrows() != n || self.texts.nrows() != n {
            return Err(shape(format!(
                "batch has {n} labels, {} images, {} texts",
                self.images.nrows(),
                self.texts.nrows()
            )));
        }
        if self.images.ncols() != self.texts.ncols() {
            return Err(shape("image and text features differ in width"));
        }
        Ok(())
    }

    fn distinct_classes(&self) -> usize {
        let mut l = self.labels.clone();
        l.sort_unstable();
        l.dedup();
        l.len()
    }
}

/// Mixed negatives for one batch, in encoder-feature space.
#[derive(Debug, Clone, PartialEq)]
pub struct NegativeSet<T> {
    pub mixed_images: Array2<T>,
    pub mixed_texts: Array2<T>,
    /// Partner image index for each anchor; always of a different class.
    pub q_indices: Vec<usize>,
    /// Row of the anchor class's peer-description matrix that was mixed in.
    pub p_choices: Vec<usize>,
}

/// `lambda * a + (1 - lambda) * b`.
pub fn mixup<T: Scalar>(a: ArrayView1<'_, T>, b: ArrayView1<'_, T>, lambda: T) -> Result<Array1<T>> {
    if a.len() != b.len() {
        return Err(shape(format!("mixup of vectors with lengths {} and {}", a.len(), b.len())));
    }
    let mut out = a.to_owned();
    Zip::from(&mut out).and(&b).for_each(|o, &bv| *o = lambda * *o + (T::one() - lambda) * bv);
    Ok(out)
}

/// Samples `q(i)` uniformly among same-batch indices of another class and
/// `p(i)` uniformly among the peers of `labels[i]`, then mixes.
pub fn build_negative_set<T: Scalar, R: Rng + ?Sized>(
    batch: &TrainingBatch<T>,
    peer_text_features: &[Array2<T>],
    lambda: T,
    rng: &mut R,
) -> Result<NegativeSet<T>> {
    batch.validate()?;
    if batch.distinct_classes() < 2 {
        return Err(OdpcError::DegenerateBatch("batch holds fewer than two classes".into()));
    }
    let n = batch.len();
    let dim = batch.images.ncols();
    let mut mixed_images = Array2::zeros((n, dim));
    let mut mixed_texts = Array2::zeros((n, dim));
    let mut q_indices = Vec::with_capacity(n);
    let mut p_choices = Vec::with_capacity(n);
    for i in 0..n {
        let y = batch.labels[i];
        let peers =
            peer_text_features.get(y).ok_or_else(|| OdpcError::Config(format!("no peer features for class {y}")))?;
        if peers.nrows() == 0 {
            return Err(OdpcError::Config(format!("class {y} has no peer descriptions")));
        }
        if peers.ncols() != dim {
            return Err(shape(format!("peer features of class {y} have width {}", peers.ncols())));
        }
        let others: Vec<usize> = (0..n).filter(|&k| batch.labels[k] != y).collect();
        let q = others[rng.random_range(0..others.len())];
        let p = rng.random_range(0..peers.nrows());
        mixed_images.row_mut(i).assign(&mixup(batch.images.row(i), batch.images.row(q), lambda)?);
        mixed_texts.row_mut(i).assign(&mixup(batch.texts.row(i), peers.row(p), lambda)?);
        q_indices.push(q);
        p_choices.push(p);
    }
    Ok(NegativeSet { mixed_images, mixed_texts, q_indices, p_choices })
}

/// One layer's projected features. `mixed_*` are `None` when the mixup
/// negatives are ablated, leaving `N - 1` negatives per anchor.
#[derive(Debug, Clone, Copy)]
pub struct PccInputs<'a, T> {
    pub images: ArrayView2<'a, T>,
    pub paired_texts: ArrayView2<'a, T>,
    pub unpaired_texts: ArrayView2<'a, T>,
    pub mixed_images: Option<ArrayView2<'a, T>>,
    pub mixed_texts: Option<ArrayView2<'a, T>>,
}

/// Gradients of a layer loss with respect to each (unnormalised) input.
#[derive(Debug, Clone, PartialEq)]
pub struct PccGrads<T> {
    pub images: Array2<T>,
    pub paired_texts: Array2<T>,
    pub unpaired_texts: Array2<T>,
    pub mixed_images: Option<Array2<T>>,
    pub mixed_texts: Option<Array2<T>>,
}

struct Normalized<T> {
    unit: Array2<T>,
    norms: Vec<T>,
}

fn normalize_rows<T: Scalar>(x: ArrayView2<'_, T>) -> Normalized<T> {
    let mut unit = x.to_owned();
    let mut norms = Vec::with_capacity(x.nrows());
    for mut row in unit.rows_mut() {
        let n = row.dot(&row).sqrt().max(T::NORM_EPS);
        row.mapv_inplace(|v| v / n);
        norms.push(n);
    }
    Normalized { unit, norms }
}

/// Pulls a gradient with respect to `x / max(|x|, eps)` back to `x`.
fn normalize_backward<T: Scalar>(g: Array2<T>, nz: &Normalized<T>) -> Array2<T> {
    let mut out = g;
    for ((mut grow, urow), &n) in out.rows_mut().into_iter().zip(nz.unit.rows()).zip(&nz.norms) {
        if n > T::NORM_EPS {
            let proj = grow.dot(&urow);
            Zip::from(&mut grow).and(&urow).for_each(|gv, &u| *gv = (*gv - u * proj) / n);
        } else {
            grow.mapv_inplace(|v| v / n);
        }
    }
    out
}

fn zero_diagonal<T: Scalar>(m: &mut Array2<T>) {
    m.diag_mut().fill(T::zero());
}

fn check_pcc_inputs<T: Scalar>(inputs: &PccInputs<'_, T>, tau: T) -> Result<usize> {
    if !(tau > T::zero()) {
        return Err(invalid(format!("temperature must be > 0, got {tau}")));
    }
    let n = inputs.images.nrows();
    if n < 2 {
        return Err(OdpcError::DegenerateBatch(format!("contrastive loss needs N >= 2, got {n}")));
    }
    let dim = inputs.images.ncols();
    let all = [Some(inputs.paired_texts), Some(inputs.unpaired_texts), inputs.mixed_images, inputs.mixed_texts];
    for m in all.iter().flatten() {
        if m.dim() != (n, dim) {
            return Err(shape(format!("pcc input is {:?}, expected {:?}", m.dim(), (n, dim))));
        }
    }
    Ok(n)
}

/// Value and input gradients of the contrastive loss for one layer.
pub fn pcc_loss_and_grad<T: Scalar>(inputs: &PccInputs<'_, T>, tau: T, form: PccForm) -> Result<(T, PccGrads<T>)> {
    let n = check_pcc_inputs(inputs, tau)?;
    let nt = T::from_usize_lossy(n);
    let a = normalize_rows(inputs.images);
    let t = normalize_rows(inputs.paired_texts);
    let u = normalize_rows(inputs.unpaired_texts);
    let m = inputs.mixed_images.map(normalize_rows);
    let tm = inputs.mixed_texts.map(normalize_rows);

    // similarity logits, already divided by tau
    let pos: Vec<T> = (0..n).map(|i| a.unit.row(i).dot(&t.unit.row(i)) / tau).collect();
    let neg_logits = |other: &Normalized<T>| -> Array2<T> { a.unit.dot(&other.unit.t()) / tau };
    let mut neg: Vec<Array2<T>> = vec![neg_logits(&u)];
    if let Some(m) = &m {
        neg.push(neg_logits(m));
    }
    if let Some(tm) = &tm {
        neg.push(neg_logits(tm));
    }

    let neg_row = |i: usize| neg.iter().flat_map(move |s| (0..n).filter(move |&k| k != i).map(move |k| s[[i, k]]));

    // alpha_i: dL/dpos_i, beta[j][i,k]: dL/dneg_j[i,k]
    let mut alpha = vec![T::zero(); n];
    let mut beta: Vec<Array2<T>> = neg.iter().map(|_| Array2::zeros((n, n))).collect();
    let loss = match form {
        PccForm::Standard => {
            let mut total = T::zero();
            for i in 0..n {
                let lse = log_sum_exp(std::iter::once(pos[i]).chain(neg_row(i)));
                total += lse - pos[i];
                alpha[i] = ((pos[i] - lse).exp() - T::one()) / nt;
                for (s, b) in neg.iter().zip(beta.iter_mut()) {
                    for k in (0..n).filter(|&k| k != i) {
                        b[[i, k]] = (s[[i, k]] - lse).exp() / nt;
                    }
                }
            }
            total / nt
        }
        PccForm::Literal => {
            let lse_neg: Vec<T> = (0..n).map(|i| log_sum_exp(neg_row(i))).collect();
            let log_ratio: Vec<T> = (0..n).map(|i| pos[i] - lse_neg[i]).collect();
            let lse_ratio = log_sum_exp(log_ratio.iter().copied());
            for i in 0..n {
                let c = (log_ratio[i] - lse_ratio).exp();
                alpha[i] = -c;
                for (s, b) in neg.iter().zip(beta.iter_mut()) {
                    for k in (0..n).filter(|&k| k != i) {
                        b[[i, k]] = c * (s[[i, k]] - lse_neg[i]).exp();
                    }
                }
            }
            nt.ln() - lse_ratio
        }
    };
    for b in beta.iter_mut() {
        zero_diagonal(b);
    }

    let alpha = Array1::from(alpha).insert_axis(Axis(1));
    let mut g_a = &t.unit * &alpha;
    g_a += &beta[0].dot(&u.unit);
    let mut next = 1;
    let mut g_m = None;
    if let Some(m) = &m {
        g_a += &beta[next].dot(&m.unit);
        g_m = Some(beta[next].t().dot(&a.unit) / tau);
        next += 1;
    }
    let mut g_tm = None;
    if let Some(tm) = &tm {
        g_a += &beta[next].dot(&tm.unit);
        g_tm = Some(beta[next].t().dot(&a.unit) / tau);
    }
    g_a /= tau;
    let g_t = &a.unit * &alpha / tau;
    let g_u = beta[0].t().dot(&a.unit) / tau;

    let grads = PccGrads {
        images: normalize_backward(g_a, &a),
        paired_texts: normalize_backward(g_t, &t),
        unpaired_texts: normalize_backward(g_u, &u),
        mixed_images: g_m.zip(m.as_ref()).map(|(g, nz)| normalize_backward(g, nz)),
        mixed_texts: g_tm.zip(tm.as_ref()).map(|(g, nz)| normalize_backward(g, nz)),
    };
    Ok((loss, grads))
}

/// Contrastive loss of one layer with all three negative families.
pub fn pcc_loss<T: Scalar>(
    layer_img: ArrayView2<'_, T>,
    layer_txt_pos: ArrayView2<'_, T>,
    layer_txt_all: ArrayView2<'_, T>,
    layer_mixed_img: ArrayView2<'_, T>,
    layer_mixed_txt: ArrayView2<'_, T>,
    tau: T,
) -> Result<T> {
    let inputs = PccInputs {
        images: layer_img,
        paired_texts: layer_txt_pos,
        unpaired_texts: layer_txt_all,
        mixed_images: Some(layer_mixed_img),
        mixed_texts: Some(layer_mixed_txt),
    };
    Ok(pcc_loss_and_grad(&inputs, tau, PccForm::Standard)?.0)
}

/// Mean cross-entropy and its gradient with respect to the logits.
pub fn ce_loss_and_grad<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[usize]) -> Result<(T, Array2<T>)> {
    if logits.nrows() != labels.len() {
        return Err(shape(format!("{} logit rows for {} labels", logits.nrows(), labels.len())));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= logits.ncols()) {
        return Err(invalid(format!("label {bad} out of range for {} outputs", logits.ncols())));
    }
    let n = labels.len();
    if n == 0 {
        return Ok((T::zero(), logits.to_owned()));
    }
    let nt = T::from_usize_lossy(n);
    let mut total = T::zero();
    for (row, &y) in logits.rows().into_iter().zip(labels) {
        total += log_sum_exp(row.iter().copied()) - row[y];
    }
    let mut grad = softmax_rows(logits);
    for (i, &y) in labels.iter().enumerate() {
        grad[[i, y]] -= T::one();
    }
    grad /= nt;
    Ok((total / nt, grad))
}

pub fn ce_loss<T: Scalar>(logits: ArrayView2<'_, T>, labels: &[usize]) -> Result<T> {
    Ok(ce_loss_and_grad(logits, labels)?.0)
}

/// Per-term loss values. `pcc` holds one entry per projection layer (zeros
/// when the contrastive term is disabled).
#[derive(Debug, Clone, PartialEq)]
pub struct LossBreakdown<T> {
    pub pcc: Vec<T>,
    pub ce: T,
    pub total: T,
}

fn evaluate<T: Scalar>(
    head: &MlpHead<T>,
    batch: &TrainingBatch<T>,
    negatives: &NegativeSet<T>,
    cfg: &LossConfig,
    want_grad: bool,
) -> Result<(LossBreakdown<T>, Option<HeadGrads<T>>)> {
    cfg.validate()?;
    batch.validate()?;
    let n = batch.len();
    let use_mix = cfg.use_pcc && cfg.use_mixup;
    if use_mix
        && (negatives.mixed_images.dim() != batch.images.dim() || negatives.mixed_texts.dim() != batch.texts.dim())
    {
        return Err(shape("negative set does not match batch shape"));
    }
    let tau = T::from_f64_lossy(cfg.temperature);

    // rows: [images; texts; mixed images; mixed texts]
    let mut blocks = vec![batch.images.view()];
    if cfg.use_pcc {
        blocks.push(batch.texts.view());
    }
    if use_mix {
        blocks.push(negatives.mixed_images.view());
        blocks.push(negatives.mixed_texts.view());
    }
    let stacked = ndarray::concatenate(Axis(0), &blocks).map_err(|e| shape(e.to_string()))?;
    let hidden = head.project(stacked.view())?;
    let block = |h: &Array2<T>, b: usize| h.slice(s![b * n..(b + 1) * n, ..]).to_owned();

    let mut d_hidden: Vec<Array2<T>> = hidden.iter().map(|h| Array2::zeros(h.dim())).collect();
    let mut pcc = vec![T::zero(); NUM_PROJECTION_LAYERS];
    if cfg.use_pcc {
        for (l, h) in hidden.iter().enumerate() {
            let (img, txt) = (block(h, 0), block(h, 1));
            let (mi, mt) = if use_mix { (Some(block(h, 2)), Some(block(h, 3))) } else { (None, None) };
            let inputs = PccInputs {
                images: img.view(),
                paired_texts: txt.view(),
                unpaired_texts: txt.view(),
                mixed_images: mi.as_ref().map(|m| m.view()),
                mixed_texts: mt.as_ref().map(|m| m.view()),
            };
            let (loss, g) = pcc_loss_and_grad(&inputs, tau, cfg.pcc_form)?;
            pcc[l] = loss;
            if want_grad {
                let d = &mut d_hidden[l];
                let mut add = |b: usize, g: &Array2<T>| {
                    let mut view = d.slice_mut(s![b * n..(b + 1) * n, ..]);
                    view += g;
                };
                add(0, &g.images);
                add(1, &g.paired_texts);
                add(1, &g.unpaired_texts);
                if let (Some(gm), Some(gt)) = (&g.mixed_images, &g.mixed_texts) {
                    add(2, gm);
                    add(3, gt);
                }
            }
        }
    }

    let top = &hidden[NUM_PROJECTION_LAYERS - 1];
    let top_images = top.slice(s![0..n, ..]);
    let mut ce = T::zero();
    let mut grads = want_grad.then(|| HeadGrads::zeros_like(head));
    if cfg.use_ce {
        let logits = head.classifier().apply(top_images);
        let (loss, d_logits) = ce_loss_and_grad(logits.view(), &batch.labels)?;
        ce = loss;
        if let Some(g) = grads.as_mut() {
            g.classifier.weight = d_logits.t().dot(&top_images);
            g.classifier.bias = d_logits.sum_axis(Axis(0));
            let mut view = d_hidden[NUM_PROJECTION_LAYERS - 1].slice_mut(s![0..n, ..]);
            view += &d_logits.dot(&head.classifier().weight);
        }
    }

    if let Some(g) = grads.as_mut() {
        for l in (0..NUM_PROJECTION_LAYERS).rev() {
            let mut dz = std::mem::replace(&mut d_hidden[l], Array2::zeros((0, 0)));
            Zip::from(&mut dz).and(&hidden[l]).for_each(|d, &h| {
                if h <= T::zero() {
                    *d = T::zero();
                }
            });
            let input = if l == 0 { stacked.view() } else { hidden[l - 1].view() };
            g.layers[l].weight = dz.t().dot(&input);
            g.layers[l].bias = dz.sum_axis(Axis(0));
            if l > 0 {
                d_hidden[l - 1] += &dz.dot(&head.layers()[l].weight);
            }
        }
    }

    let total = pcc.iter().copied().sum::<T>() + ce;
    Ok((LossBreakdown { pcc, ce, total }, grads))
}

/// Sum of the per-layer contrastive terms and the classifier cross-entropy.
pub fn total_loss<T: Scalar>(
    head: &MlpHead<T>,
    batch: &TrainingBatch<T>,
    negatives: &NegativeSet<T>,
    cfg: &LossConfig,
) -> Result<LossBreakdown<T>> {
    Ok(evaluate(head, batch, negatives, cfg, false)?.0)
}

/// Loss breakdown plus the gradient of the total for every head parameter.
/// Encoder features are constants here.
pub fn grad_total_loss<T: Scalar>(
    head: &MlpHead<T>,
    batch: &TrainingBatch<T>,
    negatives: &NegativeSet<T>,
    cfg: &LossConfig,
) -> Result<(LossBreakdown<T>, HeadGrads<T>)> {
    let (loss, grads) = evaluate(head, batch, negatives, cfg, true)?;
    Ok((loss, grads.expect("gradients requested")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn mixup_examples() {
        let a = array![2.0f64, 0.0];
        let b = array![0.0f64, 2.0];
        assert_eq!(mixup(a.view(), b.view(), 0.5).unwrap(), array![1.0, 1.0]);
        assert_eq!(mixup(a.view(), b.view(), 1.0).unwrap(), a);
        assert_eq!(mixup(a.view(), a.view(), 0.3).unwrap(), a);
        assert!(mixup(a.view(), array![1.0].view(), 0.5).is_err());
    }

    fn two_sample_batch() -> (TrainingBatch<f64>, Vec<Array2<f64>>) {
        let batch = TrainingBatch {
            images: array![[1.0, 0.0], [0.0, 1.0]],
            labels: vec![0, 1],
            texts: array![[1.0, 1.0], [1.0, -1.0]],
        };
        let peers = vec![array![[3.0, 3.0]], array![[5.0, 5.0], [7.0, 7.0]]];
        (batch, peers)
    }

    #[test]
    fn two_sample_partners_are_forced() {
        let (batch, peers) = two_sample_batch();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let neg = build_negative_set(&batch, &peers, 0.5, &mut rng).unwrap();
        assert_eq!(neg.q_indices, vec![1, 0]);
        assert_eq!(neg.mixed_images, array![[0.5, 0.5], [0.5, 0.5]]);
        assert_eq!(neg.p_choices[0], 0);
        assert_eq!(neg.mixed_texts.row(0), array![2.0, 2.0]);
    }

    #[test]
    fn single_class_batch_is_degenerate() {
        let (mut batch, peers) = two_sample_batch();
        batch.labels = vec![1, 1];
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_negative_set(&batch, &peers, 0.5, &mut rng).unwrap_err();
        assert_eq!(err.kind(), "degenerate_batch");
    }

    #[test]
    fn class_without_peers_is_config_error() {
        let (batch, mut peers) = two_sample_batch();
        peers[1] = Array2::zeros((0, 2));
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let err = build_negative_set(&batch, &peers, 0.5, &mut rng).unwrap_err();
        assert_eq!(err.kind(), "config");
    }

    #[test]
    fn negative_set_is_seed_deterministic() {
        let batch = TrainingBatch {
            images: Array2::from_shape_fn((6, 3), |(i, j)| (i * 3 + j) as f64),
            labels: vec![0, 1, 2, 0, 1, 2],
            texts: Array2::from_shape_fn((6, 3), |(i, j)| (i + j) as f64),
        };
        let peers: Vec<_> = (0..3).map(|c| Array2::from_elem((3, 3), c as f64)).collect();
        let a = build_negative_set(&batch, &peers, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        let b = build_negative_set(&batch, &peers, 0.5, &mut ChaCha8Rng::seed_from_u64(4)).unwrap();
        assert_eq!(a, b);
        for (i, &q) in a.q_indices.iter().enumerate() {
            assert_ne!(batch.labels[q], batch.labels[i]);
        }
    }

    #[test]
    fn one_matching_negative_gives_ln2() {
        // Anchor 0's unpaired text equals its positive; the other negative
        // families are absent and anchor 1 is set up identically.
        let images = array![[1.0f64, 0.0], [0.0, 1.0]];
        let paired = array![[1.0, 0.0], [0.0, 1.0]];
        let unpaired = array![[0.0, 1.0], [1.0, 0.0]];
        // unpaired[k] for anchor i != k: anchor 0 sees unpaired[1] = [1,0] = its positive
        let inputs = PccInputs {
            images: images.view(),
            paired_texts: paired.view(),
            unpaired_texts: unpaired.view(),
            mixed_images: None,
            mixed_texts: None,
        };
        let (loss, _) = pcc_loss_and_grad(&inputs, 0.005, PccForm::Standard).unwrap();
        assert!((loss - std::f64::consts::LN_2).abs() < 1e-12);
    }

    #[test]
    fn dominant_positive_gives_near_zero_loss() {
        let e = array![[1.0f64, 0.0], [1.0, 0.0]];
        let opp = array![[-1.0f64, 0.0], [-1.0, 0.0]];
        let loss = pcc_loss(e.view(), e.view(), opp.view(), opp.view(), opp.view(), 0.005).unwrap();
        assert!(loss < 1e-12);
    }

    #[test]
    fn bad_temperature_and_small_batch() {
        let e = array![[1.0f64, 0.0], [0.0, 1.0]];
        let err = pcc_loss(e.view(), e.view(), e.view(), e.view(), e.view(), 0.0).unwrap_err();
        assert_eq!(err.kind(), "invalid_argument");
        let one = array![[1.0f64, 0.0]];
        let err = pcc_loss(one.view(), one.view(), one.view(), one.view(), one.view(), 0.1).unwrap_err();
        assert_eq!(err.kind(), "degenerate_batch");
    }

    #[test]
    fn ce_examples() {
        let uniform = Array2::<f64>::zeros((3, 4));
        let v = ce_loss(uniform.view(), &[0, 1, 3]).unwrap();
        assert!((v - 4f64.ln()).abs() < 1e-12);
        let confident = array![[30.0f64, 0.0, 0.0]];
        assert!(ce_loss(confident.view(), &[0]).unwrap() < 1e-12);
        assert!(ce_loss(confident.view(), &[3]).is_err());
    }

    #[test]
    fn ce_bias_gradient_is_softmax_minus_onehot() {
        let logits = array![[0.3f64, -1.2, 2.0]];
        let (_, g) = ce_loss_and_grad(logits.view(), &[1]).unwrap();
        let p = softmax_rows(logits.view());
        assert!((g[[0, 0]] - p[[0, 0]]).abs() < 1e-15);
        assert!((g[[0, 1]] - (p[[0, 1]] - 1.0)).abs() < 1e-15);
        assert!((g[[0, 2]] - p[[0, 2]]).abs() < 1e-15);
    }

    #[test]
    fn config_validation() {
        let mut c = LossConfig::default();
        assert_eq!(c.temperature, 0.005);
        assert_eq!(c.mix_lambda, 0.5);
        c.validate().unwrap();
        c.temperature = -1.0;
        assert!(c.validate().is_err());
        c = LossConfig { mix_lambda: 1.5, ..LossConfig::default() };
        assert!(c.validate().is_err());
    }
}
