//! Known/unknown class partitions and the openness measure.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, OdpcError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Protocol {
    Cifar10_6v4,
    CifarPlus10,
    CifarPlus50,
    Cifar100_20v80,
    Tinyimagenet20v180,
    Synthetic,
}

impl Protocol {
    pub const ALL: [Protocol; 6] = [
        Protocol::Cifar10_6v4,
        Protocol::CifarPlus10,
        Protocol::CifarPlus50,
        Protocol::Cifar100_20v80,
        Protocol::Tinyimagenet20v180,
        Protocol::Synthetic,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Cifar10_6v4 => "cifar10_6v4",
            Protocol::CifarPlus10 => "cifar_plus_10",
            Protocol::CifarPlus50 => "cifar_plus_50",
            Protocol::Cifar100_20v80 => "cifar100_20v80",
            Protocol::Tinyimagenet20v180 => "tinyimagenet_20v180",
            Protocol::Synthetic => "synthetic",
        }
    }

    /// (known, unknown) class counts.
    pub fn class_counts(self) -> (usize, usize) {
        match self {
            Protocol::Cifar10_6v4 | Protocol::Synthetic => (6, 4),
            Protocol::CifarPlus10 => (4, 10),
            Protocol::CifarPlus50 => (4, 50),
            Protocol::Cifar100_20v80 => (20, 80),
            Protocol::Tinyimagenet20v180 => (20, 180),
        }
    }

    fn is_cifar_plus(self) -> bool {
        matches!(self, Protocol::CifarPlus10 | Protocol::CifarPlus50)
    }
}

impl fmt::Display for Protocol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Protocol {
    type Err = OdpcError;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| invalid(format!("unknown protocol {s:?}")))
    }
}

/// Class names available to a protocol. For CIFAR+N, `base_classes` are the
/// CIFAR-10 classes (known pool) and the unknown pool is every animal class
/// outside the base set.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCatalog {
    pub dataset: String,
    pub classes: Vec<String>,
    pub animal_classes: Vec<String>,
    #[serde(default)]
    pub base_classes: Vec<String>,
}

#[derive(Deserialize)]
struct BuiltinClasses {
    cifar10: Vec<String>,
    cifar10_animals: Vec<String>,
    cifar100: Vec<String>,
    cifar100_animals: Vec<String>,
}

fn builtin() -> BuiltinClasses {
    serde_json::from_str(include_str!("../../data/cifar_classes.json")).expect("bundled class manifest")
}

impl ClassCatalog {
    pub fn cifar10() -> Self {
        let b = builtin();
        Self { dataset: "cifar10".into(), classes: b.cifar10, animal_classes: b.cifar10_animals, base_classes: vec![] }
    }

    pub fn cifar100() -> Self {
        let b = builtin();
        Self {
            dataset: "cifar100".into(),
            classes: b.cifar100,
            animal_classes: b.cifar100_animals,
            base_classes: vec![],
        }
    }

    /// CIFAR-10 plus CIFAR-100, as used by the CIFAR+N protocols.
    pub fn cifar_plus() -> Self {
        let b = builtin();
        let mut classes = b.cifar10.clone();
        classes.extend(b.cifar100);
        let mut animals = b.cifar10_animals;
        animals.extend(b.cifar100_animals);
        Self { dataset: "cifar_plus".into(), classes, animal_classes: animals, base_classes: b.cifar10 }
    }

    pub fn synthetic(num_classes: usize) -> Self {
        let names = crate::bench::synthetic::class_names(num_classes);
        Self { dataset: "synthetic".into(), classes: names, animal_classes: vec![], base_classes: vec![] }
    }

    /// Built-in catalog for a protocol, where one exists.
    pub fn for_protocol(protocol: Protocol) -> Option<Self> {
        match protocol {
            Protocol::Cifar10_6v4 => Some(Self::cifar10()),
            Protocol::CifarPlus10 | Protocol::CifarPlus50 => Some(Self::cifar_plus()),
            Protocol::Cifar100_20v80 => Some(Self::cifar100()),
            Protocol::Synthetic => Some(Self::synthetic(crate::bench::synthetic::SyntheticSpec::default().num_classes)),
            Protocol::Tinyimagenet20v180 => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct BenchmarkSplit {
    pub protocol: Protocol,
    pub known_classes: Vec<String>,
    pub unknown_classes: Vec<String>,
    pub seed: u64,
    pub n_train_classes: usize,
    pub n_unknown: usize,
    pub n_total_test_classes: usize,
}

impl BenchmarkSplit {
    pub fn openness(&self) -> f64 {
        openness(self.n_train_classes, self.n_total_test_classes).expect("valid split counts")
    }
}

fn sample(pool: &[String], count: usize, rng: &mut ChaCha8Rng, what: &str) -> Result<Vec<String>> {
    if pool.len() < count {
        return Err(invalid(format!("need {count} {what} classes, catalog has {}", pool.len())));
    }
    let mut pool = pool.to_vec();
    pool.shuffle(rng);
    pool.truncate(count);
    Ok(pool)
}

/// Seeded known/unknown partition for `protocol`.
pub fn make_split(protocol: Protocol, catalog: &ClassCatalog, seed: u64) -> Result<BenchmarkSplit> {
    let (n_known, n_unknown) = protocol.class_counts();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (known, unknown) = if protocol.is_cifar_plus() {
        let animals: HashSet<&str> = catalog.animal_classes.iter().map(String::as_str).collect();
        let base: HashSet<&str> = catalog.base_classes.iter().map(String::as_str).collect();
        if base.is_empty() {
            return Err(invalid("CIFAR+N protocols need base_classes in the catalog"));
        }
        let known_pool: Vec<String> =
            catalog.base_classes.iter().filter(|c| !animals.contains(c.as_str())).cloned().collect();
        let unknown_pool: Vec<String> = catalog
            .classes
            .iter()
            .filter(|c| animals.contains(c.as_str()) && !base.contains(c.as_str()))
            .cloned()
            .collect();
        (sample(&known_pool, n_known, &mut rng, "non-animal")?, sample(&unknown_pool, n_unknown, &mut rng, "animal")?)
    } else {
        let mut all = sample(&catalog.classes, n_known + n_unknown, &mut rng, "catalog")?;
        let unknown = all.split_off(n_known);
        (all, unknown)
    };
    Ok(BenchmarkSplit {
        protocol,
        n_train_classes: known.len(),
        n_unknown: unknown.len(),
        n_total_test_classes: known.len() + unknown.len(),
        known_classes: known,
        unknown_classes: unknown,
        seed,
    })
}

/// Openness in percent: `100 * (1 - sqrt(2 N_train / (N_train + N_test)))`
/// where `N_test` counts all known and unknown classes seen at test time.
pub fn openness(n_train_classes: usize, n_total_test_classes: usize) -> Result<f64> {
    if n_train_classes == 0 || n_total_test_classes < n_train_classes {
        return Err(invalid(format!(
            "openness needs test classes ({n_total_test_classes}) >= train classes ({n_train_classes}) >= 1"
        )));
    }
    let ratio = 2.0 * n_train_classes as f64 / (n_train_classes + n_total_test_classes) as f64;
    Ok(100.0 * (1.0 - ratio.sqrt()))
}

/// The formula with denominator `N_test + N_target`, in percent. Kept for
/// comparison; it does not reproduce the commonly quoted protocol values.
pub fn openness_literal(n_train_classes: usize, n_total_test_classes: usize, n_target: usize) -> Result<f64> {
    if n_train_classes == 0 || n_total_test_classes + n_target == 0 {
        return Err(invalid("openness needs positive class counts"));
    }
    let ratio = 2.0 * n_train_classes as f64 / (n_total_test_classes + n_target) as f64;
    Ok(100.0 * (1.0 - ratio.sqrt()))
}
