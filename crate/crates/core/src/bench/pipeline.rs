//! Split, train, bank, score and AUROC for one protocol over seeded repeats.

use std::borrow::Cow;
use std::collections::HashMap;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::bench::metrics::auroc;
use crate::bench::report::{EvalResult, RepeatSummary};
use crate::bench::split::{make_split, BenchmarkSplit, ClassCatalog, Protocol};
use crate::bench::synthetic::{self, SyntheticSpec};
use crate::config::PipelineConfig;
use crate::encoders::{toy_encode_images, toy_encode_texts, EmbeddingMatrix, ToyEncoderConfig};
use crate::error::{invalid, shape, OdpcError, Result};
use crate::head::MlpHead;
use crate::knn::{build_bank, calibrate_threshold, make_index, FeatureBank, NeighborIndex};
use crate::peer_gen::{generate_peer_classes, render_description, LlmProvider, PeerClassSet};
use crate::persist;
use crate::scalar::Scalar;
use crate::trainer::{train, EpochRecord, TrainingData};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleSplit {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SampleEntry {
    pub id: String,
    pub class: String,
    pub split: SampleSplit,
}

/// `labels.json`: class lists plus one entry per feature row.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelsManifest {
    pub dataset: String,
    pub classes: Vec<String>,
    pub animal_classes: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub base_classes: Vec<String>,
    pub samples: Vec<SampleEntry>,
}

impl LabelsManifest {
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        persist::read_json(path)
    }

    pub fn save(&self, path: impl AsRef<std::path::Path>) -> Result<()> {
        persist::write_json(self, path)
    }

    pub fn catalog(&self) -> ClassCatalog {
        ClassCatalog {
            dataset: self.dataset.clone(),
            classes: self.classes.clone(),
            animal_classes: self.animal_classes.clone(),
            base_classes: self.base_classes.clone(),
        }
    }
}

/// Encoded feature rows with their class and split membership.
#[derive(Debug, Clone, PartialEq)]
pub struct ProtocolData<T> {
    pub catalog: ClassCatalog,
    pub features: EmbeddingMatrix<T>,
    pub sample_ids: Vec<String>,
    pub classes: Vec<String>,
    pub splits: Vec<SampleSplit>,
}

impl<T: Scalar> ProtocolData<T> {
    /// Generates the synthetic clusters for `seed` and encodes them with the
    /// toy image encoder.
    pub fn synthetic(spec: &SyntheticSpec, seed: u64, encoder_seed: u64) -> Result<Self> {
        let data = synthetic::generate::<T>(spec, seed)?;
        let enc = ToyEncoderConfig::new(encoder_seed, spec.raw_dim);
        let raw =
            ndarray::concatenate(Axis(0), &[data.train.view(), data.test.view()]).map_err(|e| shape(e.to_string()))?;
        let features = toy_encode_images(raw.view(), &enc)?;
        let labels = data.train_labels.iter().chain(&data.test_labels);
        let classes: Vec<String> = labels.map(|&y| data.class_names[y].clone()).collect();
        let n_train = data.train_labels.len();
        let splits = (0..classes.len())
            .map(|i| if i < n_train { SampleSplit::Train } else { SampleSplit::Test })
            .collect::<Vec<_>>();
        let sample_ids = (0..classes.len())
            .map(|i| if i < n_train { format!("train_{i}") } else { format!("test_{}", i - n_train) })
            .collect();
        Ok(Self { catalog: ClassCatalog::synthetic(spec.num_classes), features, sample_ids, classes, splits })
    }

    /// Pairs imported features with a manifest describing each row.
    pub fn imported(features: EmbeddingMatrix<T>, manifest: &LabelsManifest) -> Result<Self> {
        if features.rows() != manifest.samples.len() {
            return Err(shape(format!(
                "{} feature rows for {} manifest samples",
                features.rows(),
                manifest.samples.len()
            )));
        }
        let known: std::collections::HashSet<&str> = manifest.classes.iter().map(String::as_str).collect();
        if let Some(s) = manifest.samples.iter().find(|s| !known.contains(s.class.as_str())) {
            return Err(invalid(format!("sample {} has unlisted class {:?}", s.id, s.class)));
        }
        Ok(Self {
            catalog: manifest.catalog(),
            features,
            sample_ids: manifest.samples.iter().map(|s| s.id.clone()).collect(),
            classes: manifest.samples.iter().map(|s| s.class.clone()).collect(),
            splits: manifest.samples.iter().map(|s| s.split).collect(),
        })
    }
}

/// Where per-repeat data comes from.
#[derive(Debug, Clone)]
pub enum DataSource<T> {
    /// Fresh clusters per repeat, seeded with the repeat seed.
    Synthetic {
        spec: SyntheticSpec,
        encoder_seed: u64,
    },
    Fixed(ProtocolData<T>),
}

impl<T: Scalar> DataSource<T> {
    pub fn for_seed(&self, seed: u64) -> Result<Cow<'_, ProtocolData<T>>> {
        match self {
            DataSource::Synthetic { spec, encoder_seed } => {
                Ok(Cow::Owned(ProtocolData::synthetic(spec, seed, *encoder_seed)?))
            }
            DataSource::Fixed(d) => Ok(Cow::Borrowed(d)),
        }
    }
}

/// Encodes description strings into head-input features.
#[derive(Debug, Clone)]
pub enum TextEncoder<T> {
    Toy(ToyEncoderConfig),
    /// Pre-computed rows looked up by description string.
    Imported {
        index: HashMap<String, usize>,
        features: EmbeddingMatrix<T>,
    },
}

impl<T: Scalar> TextEncoder<T> {
    pub fn imported(descriptions: Vec<String>, features: EmbeddingMatrix<T>) -> Result<Self> {
        if descriptions.len() != features.rows() {
            return Err(shape(format!("{} descriptions for {} text rows", descriptions.len(), features.rows())));
        }
        let index = descriptions.into_iter().enumerate().map(|(i, d)| (d, i)).collect();
        Ok(TextEncoder::Imported { index, features })
    }

    pub fn encode(&self, descriptions: &[String]) -> Result<Array2<T>> {
        match self {
            TextEncoder::Toy(cfg) => Ok(toy_encode_texts::<T, _>(descriptions, cfg)?.into_values()),
            TextEncoder::Imported { index, features } => {
                let rows = descriptions
                    .iter()
                    .map(|d| index.get(d).copied().ok_or_else(|| invalid(format!("no text feature for {d:?}"))))
                    .collect::<Result<Vec<_>>>()?;
                Ok(features.values().select(Axis(0), &rows))
            }
        }
    }
}

/// Everything one repeat produces.
#[derive(Debug, Clone)]
pub struct RepeatOutcome<T> {
    pub repeat: usize,
    pub seed: u64,
    pub split: BenchmarkSplit,
    pub peers: PeerClassSet,
    pub head: MlpHead<T>,
    pub history: Vec<EpochRecord>,
    pub auroc: f64,
    pub baseline_auroc: f64,
    pub threshold: Option<f64>,
    pub holdout_accept_rate: Option<f64>,
    pub id_scores: Vec<f64>,
    pub ood_scores: Vec<f64>,
}

impl<T> RepeatOutcome<T> {
    pub fn summary(&self) -> RepeatSummary {
        RepeatSummary {
            repeat: self.repeat,
            seed: self.seed,
            auroc: self.auroc,
            baseline_auroc: self.baseline_auroc,
            threshold: self.threshold,
            holdout_accept_rate: self.holdout_accept_rate,
        }
    }
}

fn scores_f64<T: Scalar>(index: &dyn NeighborIndex<T>, queries: ArrayView2<'_, T>, k: usize) -> Result<Vec<f64>> {
    Ok(index.score_all(queries, k)?.into_iter().map(|s| s.to_f64_lossy()).collect())
}

/// Scores ID and OOD queries against `bank` and returns their AUROC.
fn bank_auroc<T: Scalar>(
    bank: &FeatureBank<T>,
    cfg: &PipelineConfig,
    id: ArrayView2<'_, T>,
    ood: ArrayView2<'_, T>,
) -> Result<(f64, Vec<f64>, Vec<f64>)> {
    let index = make_index(bank, cfg.knn_backend);
    let k = cfg.knn_k.min(bank.rows());
    let id_scores = scores_f64(index.as_ref(), id, k)?;
    let ood_scores = scores_f64(index.as_ref(), ood, k)?;
    Ok((auroc(&id_scores, &ood_scores)?, id_scores, ood_scores))
}

/// Split, row assignment, peers and encoded texts for one seed, ready to train.
#[derive(Debug, Clone)]
pub struct PreparedRepeat<T> {
    pub split: BenchmarkSplit,
    pub peers: PeerClassSet,
    /// Training rows of `data`, ascending, holdout removed.
    pub train_rows: Vec<usize>,
    pub holdout_rows: Vec<usize>,
    pub id_rows: Vec<usize>,
    pub ood_rows: Vec<usize>,
    /// Known-class index of each training row.
    pub labels: Vec<usize>,
    pub class_texts: Array2<T>,
    pub peer_texts: Vec<Array2<T>>,
}

impl<T: Scalar> PreparedRepeat<T> {
    pub fn train_features(&self, data: &ProtocolData<T>) -> Array2<T> {
        data.features.values().select(Axis(0), &self.train_rows)
    }

    /// Freshly initialised head sized for this split and peer set.
    pub fn init_head(&self, cfg: &PipelineConfig, seed: u64) -> Result<MlpHead<T>> {
        MlpHead::new(&cfg.head_shape(), self.split.known_classes.len(), self.peers.distinct_peers().len(), seed)
    }

    pub fn training_data<'a>(&'a self, train_x: &'a Array2<T>) -> TrainingData<'a, T> {
        TrainingData {
            images: train_x.view(),
            labels: &self.labels,
            class_texts: self.class_texts.view(),
            peer_texts: &self.peer_texts,
        }
    }
}

/// Builds the split for `seed` and everything training needs. Peers come from
/// `peers` when given (they must cover the known classes), else from `provider`.
pub fn prepare_repeat<T: Scalar>(
    protocol: Protocol,
    data: &ProtocolData<T>,
    cfg: &PipelineConfig,
    text_encoder: &TextEncoder<T>,
    provider: &dyn LlmProvider,
    peers: Option<&PeerClassSet>,
    seed: u64,
) -> Result<PreparedRepeat<T>> {
    let split = make_split(protocol, &data.catalog, seed)?;
    let label_of: HashMap<&str, usize> = split.known_classes.iter().enumerate().map(|(i, c)| (c.as_str(), i)).collect();
    let unknown: std::collections::HashSet<&str> = split.unknown_classes.iter().map(String::as_str).collect();

    let mut train_rows = Vec::new();
    let (mut id_rows, mut ood_rows) = (Vec::new(), Vec::new());
    for (i, (class, split_kind)) in data.classes.iter().zip(&data.splits).enumerate() {
        match (split_kind, label_of.contains_key(class.as_str()), unknown.contains(class.as_str())) {
            (SampleSplit::Train, true, _) => train_rows.push(i),
            (SampleSplit::Test, true, _) => id_rows.push(i),
            (SampleSplit::Test, false, true) => ood_rows.push(i),
            _ => {}
        }
    }
    if id_rows.is_empty() || ood_rows.is_empty() {
        return Err(invalid(format!("split for seed {seed} leaves no ID or no OOD test samples")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x0068_6f6c_646f_7574);
    train_rows.shuffle(&mut rng);
    let n_holdout = (train_rows.len() as f64 * cfg.holdout_fraction).round() as usize;
    let holdout_rows = train_rows.split_off(train_rows.len() - n_holdout);
    train_rows.sort_unstable();

    let peer_cfg = cfg.peer_gen();
    let peers = match peers {
        Some(p) => {
            if let Some(c) = split.known_classes.iter().find(|c| p.peers_of(c).is_none()) {
                return Err(invalid(format!("peer file has no entry for known class {c:?}")));
            }
            p.clone()
        }
        None => generate_peer_classes(&split.known_classes, &peer_cfg, provider)?,
    };
    let class_desc =
        split.known_classes.iter().map(|c| render_description(c, &peer_cfg)).collect::<Result<Vec<_>>>()?;
    let class_texts = text_encoder.encode(&class_desc)?;
    let peer_texts = split
        .known_classes
        .iter()
        .map(|c| {
            let desc = peers
                .peers_of(c)
                .unwrap_or_default()
                .iter()
                .map(|p| render_description(p, &peer_cfg))
                .collect::<Result<Vec<_>>>()?;
            if desc.is_empty() {
                return Err(OdpcError::Config(format!("class {c:?} has no peers")));
            }
            text_encoder.encode(&desc)
        })
        .collect::<Result<Vec<_>>>()?;
    let labels = train_rows.iter().map(|&i| label_of[data.classes[i].as_str()]).collect();

    Ok(PreparedRepeat { split, peers, train_rows, holdout_rows, id_rows, ood_rows, labels, class_texts, peer_texts })
}

/// One seeded trial: split, peers, training, bank, scoring.
pub fn run_repeat<T: Scalar>(
    protocol: Protocol,
    data: &ProtocolData<T>,
    cfg: &PipelineConfig,
    text_encoder: &TextEncoder<T>,
    provider: &dyn LlmProvider,
    repeat: usize,
    seed: u64,
) -> Result<RepeatOutcome<T>> {
    let prep = prepare_repeat(protocol, data, cfg, text_encoder, provider, None, seed)?;
    let (id_rows, ood_rows, holdout_rows) = (&prep.id_rows, &prep.ood_rows, &prep.holdout_rows);
    let feats = data.features.values();
    let train_x = prep.train_features(data);
    let head = prep.init_head(cfg, seed)?;
    let state = train(&prep.training_data(&train_x), head, &cfg.training(seed))?;

    let train_m = EmbeddingMatrix::new(train_x.clone(), true, data.features.source())?;
    let bank = build_bank(&state.head, &train_m, format!("{protocol}/seed{seed}"))?;
    let embed = |rows: &[usize]| crate::knn::embed_features(&state.head, feats.select(Axis(0), rows).view());
    let (id_q, ood_q) = (embed(id_rows)?, embed(ood_rows)?);
    let (auroc_value, id_scores, ood_scores) = bank_auroc(&bank, cfg, id_q.view(), ood_q.view())?;

    let (threshold, holdout_accept_rate) = if holdout_rows.is_empty() {
        (None, None)
    } else {
        let index = make_index(&bank, cfg.knn_backend);
        let hq = embed(holdout_rows)?;
        let hs = scores_f64(index.as_ref(), hq.view(), cfg.knn_k.min(bank.rows()))?;
        let t = calibrate_threshold(&hs, cfg.target_tpr)?;
        let accepted = hs.iter().filter(|&&s| s <= t).count();
        (Some(t), Some(accepted as f64 / hs.len() as f64))
    };

    let copies = cfg.hidden_dims.len();
    let base_bank = FeatureBank::pass_through(train_x.view(), copies)?;
    let stack = |rows: &[usize]| crate::knn::stack_features(feats.select(Axis(0), rows).view(), copies);
    let (baseline_auroc, _, _) = bank_auroc(&base_bank, cfg, stack(id_rows).view(), stack(ood_rows).view())?;
    log::info!("{protocol} repeat {repeat} seed {seed}: auroc {auroc_value:.4} baseline {baseline_auroc:.4}");

    Ok(RepeatOutcome {
        repeat,
        seed,
        split: prep.split,
        peers: prep.peers,
        head: state.head,
        history: state.history,
        auroc: auroc_value,
        baseline_auroc,
        threshold,
        holdout_accept_rate,
        id_scores,
        ood_scores,
    })
}

/// Runs `cfg.repeats` trials with seeds `cfg.seed + r`, in parallel, and
/// aggregates them in repeat order.
pub fn run_benchmark_detailed<T: Scalar>(
    source: &DataSource<T>,
    cfg: &PipelineConfig,
    text_encoder: &TextEncoder<T>,
    provider: &dyn LlmProvider,
) -> Result<Vec<RepeatOutcome<T>>> {
    cfg.validate()?;
    (0..cfg.repeats)
        .into_par_iter()
        .map(|r| {
            let seed = cfg.seed.wrapping_add(r as u64);
            let data = source.for_seed(seed)?;
            run_repeat(cfg.protocol, &data, cfg, text_encoder, provider, r, seed)
        })
        .collect()
}

pub fn run_benchmark<T: Scalar>(
    source: &DataSource<T>,
    cfg: &PipelineConfig,
    text_encoder: &TextEncoder<T>,
    provider: &dyn LlmProvider,
) -> Result<EvalResult> {
    let outcomes = run_benchmark_detailed(source, cfg, text_encoder, provider)?;
    let (n_known, n_unknown) = cfg.protocol.class_counts();
    EvalResult::from_repeats(cfg.protocol, n_known, n_known + n_unknown, outcomes.iter().map(|o| o.summary()).collect())
}
