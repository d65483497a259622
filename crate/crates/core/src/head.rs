//! Trainable projection head: three shared fully connected ReLU layers and a
//! linear classifier whose width is `num_id_classes + num_peer_outputs`.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::encoders::DEFAULT_FEATURE_DIM;
use crate::error::{invalid, shape, OdpcError, Result};
use crate::persist::{self, CheckpointManifest, TensorEntry};
use crate::scalar::Scalar;

pub const NUM_PROJECTION_LAYERS: usize = 3;

/// Input width and widths of the three projection layers.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HeadShape {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
}

impl Default for HeadShape {
    fn default() -> Self {
        Self { input_dim: DEFAULT_FEATURE_DIM, hidden_dims: vec![DEFAULT_FEATURE_DIM; NUM_PROJECTION_LAYERS] }
    }
}

impl HeadShape {
    pub fn validate(&self) -> Result<()> {
        if self.hidden_dims.len() != NUM_PROJECTION_LAYERS {
            return Err(invalid(format!(
                "head needs exactly {NUM_PROJECTION_LAYERS} projection layers, got {}",
                self.hidden_dims.len()
            )));
        }
        if self.input_dim == 0 || self.hidden_dims.contains(&0) {
            return Err(invalid("layer widths must be positive"));
        }
        Ok(())
    }
}

/// Affine map `x -> x W^T + b`, weight stored `out x in`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense<T> {
    pub weight: Array2<T>,
    pub bias: Array1<T>,
}

impl<T: Scalar> Dense<T> {
    pub fn zeros(out_dim: usize, in_dim: usize) -> Self {
        Self { weight: Array2::zeros((out_dim, in_dim)), bias: Array1::zeros(out_dim) }
    }

    fn uniform_fan_in(out_dim: usize, in_dim: usize, rng: &mut ChaCha8Rng) -> Self {
        let bound = 1.0 / (in_dim as f64).sqrt();
        let weight =
            Array2::from_shape_simple_fn((out_dim, in_dim), || T::from_f64_lossy(rng.random_range(-bound..=bound)));
        Self { weight, bias: Array1::zeros(out_dim) }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }

    pub fn apply(&self, x: ArrayView2<'_, T>) -> Array2<T> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpHead<T> {
    layers: Vec<Dense<T>>,
    classifier: Dense<T>,
    num_id_classes: usize,
    num_peer_outputs: usize,
    seed: u64,
    /// Completed training epochs, persisted with checkpoints.
    pub epoch: usize,
}

/// Outputs of [`MlpHead::forward`].
#[derive(Debug, Clone, PartialEq)]
pub struct ForwardActivations<T> {
    /// Post-ReLU outputs of the three projection layers.
    pub per_layer: Vec<Array2<T>>,
    pub logits: Array2<T>,
    pub probabilities: Array2<T>,
}

/// Gradients (or any other tensor set) shaped like a head.
#[derive(Debug, Clone, PartialEq)]
pub struct HeadGrads<T> {
    pub layers: Vec<Dense<T>>,
    pub classifier: Dense<T>,
}

impl<T: Scalar> HeadGrads<T> {
    pub fn zeros_like(head: &MlpHead<T>) -> Self {
        Self {
            layers: head.layers.iter().map(|l| Dense::zeros(l.out_dim(), l.in_dim())).collect(),
            classifier: Dense::zeros(head.classifier.out_dim(), head.classifier.in_dim()),
        }
    }

    pub fn tensors(&self) -> Vec<(String, &[T])> {
        named_tensors(&self.layers, &self.classifier)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        named_tensors_mut(&mut self.layers, &mut self.classifier)
    }
}

fn tensor_names() -> Vec<String> {
    let mut names = Vec::new();
    for l in 1..=NUM_PROJECTION_LAYERS {
        names.push(format!("fc{l}.weight"));
        names.push(format!("fc{l}.bias"));
    }
    names.push("classifier.weight".into());
    names.push("classifier.bias".into());
    names
}

fn named_tensors<'a, T>(layers: &'a [Dense<T>], classifier: &'a Dense<T>) -> Vec<(String, &'a [T])> {
    let slices = layers
        .iter()
        .chain(std::iter::once(classifier))
        .flat_map(|d| [d.weight.as_slice().expect("standard layout"), d.bias.as_slice().expect("standard layout")]);
    tensor_names().into_iter().zip(slices).collect()
}

fn named_tensors_mut<'a, T>(layers: &'a mut [Dense<T>], classifier: &'a mut Dense<T>) -> Vec<(String, &'a mut [T])> {
    let slices = layers.iter_mut().chain(std::iter::once(classifier)).flat_map(|d| {
        [d.weight.as_slice_mut().expect("standard layout"), d.bias.as_slice_mut().expect("standard layout")]
    });
    tensor_names().into_iter().zip(slices).collect()
}

/// Head with the default 512-wide layers.
pub fn init_head<T: Scalar>(num_id_classes: usize, num_peer_outputs: usize, seed: u64) -> Result<MlpHead<T>> {
    MlpHead::new(&HeadShape::default(), num_id_classes, num_peer_outputs, seed)
}

impl<T: Scalar> MlpHead<T> {
    /// Weights uniform in `[-1/sqrt(fan_in), 1/sqrt(fan_in)]`, zero biases.
    pub fn new(shape: &HeadShape, num_id_classes: usize, num_peer_outputs: usize, seed: u64) -> Result<Self> {
        shape.validate()?;
        if num_id_classes < 2 {
            return Err(invalid(format!("need at least 2 ID classes, got {num_id_classes}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut layers = Vec::with_capacity(NUM_PROJECTION_LAYERS);
        let mut fan_in = shape.input_dim;
        for &width in &shape.hidden_dims {
            layers.push(Dense::uniform_fan_in(width, fan_in, &mut rng));
            fan_in = width;
        }
        let classifier = Dense::uniform_fan_in(num_id_classes + num_peer_outputs, fan_in, &mut rng);
        Ok(Self { layers, classifier, num_id_classes, num_peer_outputs, seed, epoch: 0 })
    }

    pub fn num_id_classes(&self) -> usize {
        self.num_id_classes
    }

    pub fn num_peer_outputs(&self) -> usize {
        self.num_peer_outputs
    }

    pub fn num_outputs(&self) -> usize {
        self.num_id_classes + self.num_peer_outputs
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim()
    }

    pub fn shape(&self) -> HeadShape {
        HeadShape { input_dim: self.input_dim(), hidden_dims: self.layers.iter().map(Dense::out_dim).collect() }
    }

    pub fn layers(&self) -> &[Dense<T>] {
        &self.layers
    }

    pub fn classifier(&self) -> &Dense<T> {
        &self.classifier
    }

    pub fn tensors(&self) -> Vec<(String, &[T])> {
        named_tensors(&self.layers, &self.classifier)
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut [T])> {
        named_tensors_mut(&mut self.layers, &mut self.classifier)
    }

    fn check_input(&self, x: &ArrayView2<'_, T>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(shape(format!("features have dim {}, head expects {}", x.ncols(), self.input_dim())));
        }
        Ok(())
    }

    /// Post-ReLU outputs of each projection layer. Used for images and
    /// texts alike.
    pub fn project(&self, x: ArrayView2<'_, T>) -> Result<Vec<Array2<T>>> {
        self.check_input(&x)?;
        let mut outs: Vec<Array2<T>> = Vec::with_capacity(self.layers.len());
        for layer in &self.layers {
            let prev = outs.last().map(|a| a.view()).unwrap_or(x);
            let mut h = layer.apply(prev);
            h.mapv_inplace(|v| if v > T::zero() { v } else { T::zero() });
            outs.push(h);
        }
        Ok(outs)
    }

    pub fn forward(&self, x: ArrayView2<'_, T>) -> Result<ForwardActivations<T>> {
        let per_layer = self.project(x)?;
        let logits = self.classifier.apply(per_layer[per_layer.len() - 1].view());
        let probabilities = softmax_rows(logits.view());
        Ok(ForwardActivations { per_layer, logits, probabilities })
    }

    fn manifest(&self) -> CheckpointManifest {
        let shape = self.shape();
        let tensors = self
            .tensors()
            .into_iter()
            .zip(
                self.layers
                    .iter()
                    .chain(std::iter::once(&self.classifier))
                    .flat_map(|d| [vec![d.out_dim(), d.in_dim()], vec![d.out_dim()]]),
            )
            .map(|((name, _), shape)| TensorEntry { name, shape })
            .collect();
        CheckpointManifest {
            format_version: 1,
            input_dim: shape.input_dim,
            hidden_dims: shape.hidden_dims,
            num_id_classes: self.num_id_classes,
            num_peer_outputs: self.num_peer_outputs,
            seed: self.seed,
            epoch: self.epoch,
            tensors,
        }
    }

    pub fn to_checkpoint_bytes(&self) -> Result<Vec<u8>> {
        let blob: Vec<f32> =
            self.tensors().iter().flat_map(|(_, s)| s.iter().map(|v| v.to_f64_lossy() as f32)).collect();
        persist::encode_checkpoint(&self.manifest(), &blob)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let (manifest, blob) = persist::decode_checkpoint(bytes)?;
        let shape = HeadShape { input_dim: manifest.input_dim, hidden_dims: manifest.hidden_dims.clone() };
        let mut head = Self::new(&shape, manifest.num_id_classes, manifest.num_peer_outputs, manifest.seed)
            .map_err(|e| OdpcError::Format(format!("manifest describes an invalid head: {e}")))?;
        head.epoch = manifest.epoch;
        if head.manifest().tensors != manifest.tensors {
            return Err(OdpcError::Format("tensor manifest does not match head shape".into()));
        }
        let mut offset = 0;
        for (_, dst) in head.tensors_mut() {
            for (d, s) in dst.iter_mut().zip(&blob[offset..]) {
                *d = T::from_f64_lossy(*s as f64);
            }
            offset += dst.len();
        }
        if head.tensors().iter().any(|(_, s)| s.iter().any(|v| !v.is_finite())) {
            return Err(OdpcError::Format("checkpoint holds non-finite parameters".into()));
        }
        Ok(head)
    }

    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        persist::write_atomic(path, &self.to_checkpoint_bytes()?)
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_checkpoint_bytes(&persist::read_file(path)?)
    }
}

/// Row-wise softmax with max subtraction.
pub fn softmax_rows<T: Scalar>(logits: ArrayView2<'_, T>) -> Array2<T> {
    let mut p = logits.to_owned();
    for mut row in p.axis_iter_mut(Axis(0)) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| if v > m { v } else { m });
        row.mapv_inplace(|v| (v - max).exp());
        let s = row.sum();
        row.mapv_inplace(|v| v / s);
    }
    p
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_shape() -> HeadShape {
        HeadShape { input_dim: 5, hidden_dims: vec![4, 6, 3] }
    }

    #[test]
    fn classifier_width_counts_peer_outputs() {
        let h = init_head::<f32>(6, 18, 1).unwrap();
        assert_eq!(h.classifier().out_dim(), 24);
        assert_eq!(h.num_outputs(), 24);
        assert_eq!(h.layers().len(), 3);
    }

    #[test]
    fn init_is_seed_deterministic() {
        let a = MlpHead::<f64>::new(&small_shape(), 3, 2, 9).unwrap();
        let b = MlpHead::<f64>::new(&small_shape(), 3, 2, 9).unwrap();
        assert_eq!(a, b);
        let c = MlpHead::<f64>::new(&small_shape(), 3, 2, 10).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn init_weights_respect_fan_in_bound_and_zero_bias() {
        let h = MlpHead::<f64>::new(&small_shape(), 3, 2, 4).unwrap();
        for d in h.layers().iter().chain(std::iter::once(h.classifier())) {
            let bound = 1.0 / (d.in_dim() as f64).sqrt();
            assert!(d.weight.iter().all(|w| w.abs() <= bound));
            assert!(d.bias.iter().all(|b| *b == 0.0));
        }
    }

    #[test]
    fn one_class_is_rejected() {
        assert!(init_head::<f32>(1, 0, 0).is_err());
    }

    #[test]
    fn zero_weights_give_uniform_probabilities() {
        let mut h = MlpHead::<f64>::new(&small_shape(), 3, 1, 0).unwrap();
        for (_, t) in h.tensors_mut() {
            t.fill(0.0);
        }
        let x = Array2::from_shape_fn((2, 5), |(i, j)| (i + j) as f64);
        let out = h.forward(x.view()).unwrap();
        assert!(out.per_layer.iter().all(|a| a.iter().all(|v| *v == 0.0)));
        assert!(out.probabilities.iter().all(|p| (p - 0.25).abs() < 1e-15));
    }

    #[test]
    fn empty_batch_is_fine() {
        let h = MlpHead::<f32>::new(&small_shape(), 2, 0, 0).unwrap();
        let out = h.forward(Array2::zeros((0, 5)).view()).unwrap();
        assert_eq!(out.logits.dim(), (0, 2));
        assert_eq!(out.per_layer[2].dim(), (0, 3));
    }

    #[test]
    fn wrong_input_dim_is_shape_error() {
        let h = MlpHead::<f32>::new(&small_shape(), 2, 0, 0).unwrap();
        assert_eq!(h.forward(Array2::zeros((1, 4)).view()).unwrap_err().kind(), "shape");
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let mut h = MlpHead::<f32>::new(&small_shape(), 3, 2, 5).unwrap();
        h.epoch = 17;
        let back = MlpHead::<f32>::from_checkpoint_bytes(&h.to_checkpoint_bytes().unwrap()).unwrap();
        assert_eq!(back, h);
    }

    #[test]
    fn checkpoint_file_roundtrip_and_missing_path() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("head.ck");
        let h = MlpHead::<f32>::new(&small_shape(), 2, 4, 1).unwrap();
        h.save_checkpoint(&p).unwrap();
        assert_eq!(MlpHead::<f32>::load_checkpoint(&p).unwrap(), h);
        let err = MlpHead::<f32>::load_checkpoint(dir.path().join("nope")).unwrap_err();
        assert_eq!(err.kind(), "not_found");
    }

    #[test]
    fn manifest_shape_mismatch_is_format_error() {
        let h = MlpHead::<f32>::new(&small_shape(), 2, 0, 1).unwrap();
        let mut manifest = h.manifest();
        manifest.tensors[0].shape = vec![4, 4];
        manifest.tensors[1].shape = vec![5];
        let blob: Vec<f32> = vec![0.0; manifest.tensors.iter().map(TensorEntry::len).sum()];
        let bytes = persist::encode_checkpoint(&manifest, &blob).unwrap();
        assert_eq!(MlpHead::<f32>::from_checkpoint_bytes(&bytes).unwrap_err().kind(), "format");
    }
}
