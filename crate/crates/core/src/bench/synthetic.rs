//! Seeded Gaussian-cluster dataset for desk-scale end-to-end runs.

use ndarray::Array2;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::encoders::bag_of_words;
use crate::error::{invalid, Result};
use crate::peer_gen::{DEFAULT_DESCRIPTION_TEMPLATE, DESCRIPTION_PLACEHOLDER};
use crate::scalar::Scalar;

const NAMES: [&str; 10] = ["airplane", "automobile", "bird", "cat", "deer", "dog", "frog", "horse", "ship", "truck"];

/// `n` distinct class names; CIFAR-10 names first, then `class_10`, ...
pub fn class_names(n: usize) -> Vec<String> {
    (0..n).map(|i| NAMES.get(i).map_or_else(|| format!("class_{i}"), |s| s.to_string())).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SyntheticSpec {
    pub num_classes: usize,
    pub raw_dim: usize,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Scale of the class centres.
    pub separation: f64,
    /// Within-class standard deviation per raw coordinate.
    pub noise: f64,
    /// Centre class `c` on `separation` times the hashed bag of words of its
    /// default description, so toy images sit where the toy text encoder puts
    /// their description. Otherwise centres are `separation * N(0, I)`.
    pub text_anchored: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_classes: 10,
            raw_dim: 64,
            train_per_class: 200,
            test_per_class: 100,
            separation: 5.0,
            noise: 1.0,
            text_anchored: true,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 || self.raw_dim == 0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return Err(invalid("synthetic spec needs >= 2 classes and positive sizes"));
        }
        if !(self.separation > 0.0 && self.separation.is_finite()) || !(self.noise >= 0.0 && self.noise.is_finite()) {
            return Err(invalid("synthetic separation must be positive and noise non-negative"));
        }
        Ok(())
    }

    /// Class centres in raw space.
    pub fn centres(&self, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
        let names = class_names(self.num_classes);
        names
            .iter()
            .map(|name| {
                if self.text_anchored {
                    let desc = DEFAULT_DESCRIPTION_TEMPLATE.replacen(DESCRIPTION_PLACEHOLDER, name, 1);
                    bag_of_words(&desc, self.raw_dim).into_iter().map(|b| self.separation * b).collect()
                } else {
                    (0..self.raw_dim).map(|_| self.separation * normal(rng)).collect()
                }
            })
            .collect()
    }
}

/// Raw vectors with class labels (indices into `class_names`).
#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticData<T> {
    pub class_names: Vec<String>,
    pub train: Array2<T>,
    pub train_labels: Vec<usize>,
    pub test: Array2<T>,
    pub test_labels: Vec<usize>,
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Isotropic Gaussian clusters around [`SyntheticSpec::centres`]; fully
/// determined by `(spec, seed)`.
pub fn generate<T: Scalar>(spec: &SyntheticSpec, seed: u64) -> Result<SyntheticData<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centres = spec.centres(&mut rng);
    let mut sample = |per_class: usize| {
        let mut x = Array2::zeros((spec.num_classes * per_class, spec.raw_dim));
        let mut y = Vec::with_capacity(spec.num_classes * per_class);
        for (c, centre) in centres.iter().enumerate() {
            for i in 0..per_class {
                let mut row = x.row_mut(c * per_class + i);
                for (v, m) in row.iter_mut().zip(centre) {
                    *v = T::from_f64_lossy(m + spec.noise * normal(&mut rng));
                }
                y.push(c);
            }
        }
        (x, y)
    };
    let (train, train_labels) = sample(spec.train_per_class);
    let (test, test_labels) = sample(spec.test_per_class);
    Ok(SyntheticData { class_names: class_names(spec.num_classes), train, train_labels, test, test_labels })
}
