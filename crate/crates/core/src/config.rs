//! Flat JSON configuration covering every pipeline stage.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::bench::split::Protocol;
use crate::bench::synthetic::SyntheticSpec;
use crate::error::{OdpcError, Result};
use crate::head::HeadShape;
use crate::knn::{KnnBackend, KnnConfig, DEFAULT_K, DEFAULT_TARGET_TPR};
use crate::losses::{LossConfig, PccForm, DEFAULT_MIX_LAMBDA, DEFAULT_TEMPERATURE};
use crate::peer_gen::{
    PeerGenConfig, ProviderKind, DEFAULT_DESCRIPTION_TEMPLATE, DEFAULT_MAX_REQUERY_ATTEMPTS, DEFAULT_PEERS_PER_CLASS,
    DEFAULT_PROMPT_TEMPLATE,
};
use crate::trainer::TrainingConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub protocol: Protocol,
    pub repeats: usize,

    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub step_size: usize,
    pub gamma: f64,

    pub temperature: f64,
    pub mix_lambda: f64,
    pub pcc_form: PccForm,
    pub use_pcc: bool,
    pub use_ce: bool,
    pub use_mixup: bool,

    pub knn_k: usize,
    pub target_tpr: f64,
    pub knn_backend: KnnBackend,
    /// Fraction of ID training rows held out for threshold calibration.
    pub holdout_fraction: f64,

    pub peers_per_class: usize,
    pub prompt_template: String,
    pub description_template: String,
    pub provider: ProviderKind,
    pub max_requery_attempts: usize,
    pub offline: bool,
    pub llm_endpoint: String,
    pub llm_model: String,

    pub hidden_dims: Vec<usize>,
    /// Seed of the toy encoder projection, shared by images and texts.
    pub encoder_seed: u64,
    /// Hash buckets of the toy text encoder.
    pub text_raw_dim: usize,

    pub synthetic_separation: f64,
    pub synthetic_noise: f64,
    pub synthetic_text_anchored: bool,
    pub synthetic_train_per_class: usize,
    pub synthetic_test_per_class: usize,

    pub out_dir: PathBuf,
    pub llm_cache: Option<PathBuf>,
    /// Imported image features (bank format), rows aligned with `labels_manifest`.
    pub image_features: Option<PathBuf>,
    pub labels_manifest: Option<PathBuf>,
    /// Imported text features with a JSON list of the description strings per row.
    pub text_features: Option<PathBuf>,
    pub text_index: Option<PathBuf>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        let synth = SyntheticSpec::default();
        Self {
            seed: 0,
            protocol: Protocol::Synthetic,
            repeats: 5,
            epochs: 160,
            batch_size: 32,
            lr: 1e-5,
            momentum: 0.99,
            step_size: 30,
            gamma: 0.25,
            temperature: DEFAULT_TEMPERATURE,
            mix_lambda: DEFAULT_MIX_LAMBDA,
            pcc_form: PccForm::Standard,
            use_pcc: true,
            use_ce: true,
            use_mixup: true,
            knn_k: DEFAULT_K,
            target_tpr: DEFAULT_TARGET_TPR,
            knn_backend: KnnBackend::default(),
            holdout_fraction: 0.1,
            peers_per_class: DEFAULT_PEERS_PER_CLASS,
            prompt_template: DEFAULT_PROMPT_TEMPLATE.into(),
            description_template: DEFAULT_DESCRIPTION_TEMPLATE.into(),
            provider: ProviderKind::Stub,
            max_requery_attempts: DEFAULT_MAX_REQUERY_ATTEMPTS,
            offline: false,
            llm_endpoint: PeerGenConfig::default().llm_endpoint,
            llm_model: PeerGenConfig::default().llm_model,
            hidden_dims: HeadShape::default().hidden_dims,
            encoder_seed: 0,
            text_raw_dim: synth.raw_dim,
            synthetic_separation: synth.separation,
            synthetic_noise: synth.noise,
            synthetic_text_anchored: synth.text_anchored,
            synthetic_train_per_class: synth.train_per_class,
            synthetic_test_per_class: synth.test_per_class,
            out_dir: PathBuf::from("out"),
            llm_cache: None,
            image_features: None,
            labels_manifest: None,
            text_features: None,
            text_index: None,
        }
    }
}

/// ID training rows behind the default `knn_k` (six CIFAR-10 classes of 5000 images).
pub const REFERENCE_BANK_ROWS: usize = 30_000;

/// Epochs of the built-in synthetic preset.
pub const SYNTHETIC_EPOCHS: usize = 20;

/// Keeps the ratio `DEFAULT_K / REFERENCE_BANK_ROWS` for a bank of `bank_rows`.
pub fn scaled_k(bank_rows: usize) -> usize {
    ((DEFAULT_K * bank_rows) as f64 / REFERENCE_BANK_ROWS as f64).round().max(1.0) as usize
}

impl PipelineConfig {
    /// Defaults sized for the synthetic protocol: short training and `knn_k` scaled to its bank.
    pub fn synthetic_preset() -> Self {
        let base = Self::default();
        let (known, _) = Protocol::Synthetic.class_counts();
        let train = known * base.synthetic_train_per_class;
        let bank = train - (base.holdout_fraction * train as f64).round() as usize;
        Self { epochs: SYNTHETIC_EPOCHS, knn_k: scaled_k(bank), ..base }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = crate::persist::read_file(path.as_ref())?;
        let cfg: Self = serde_json::from_slice(&text)
            .map_err(|e| OdpcError::Config(format!("{}: {e}", path.as_ref().display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let wrap = |e: OdpcError| match e {
            OdpcError::Config(_) => e,
            other => OdpcError::Config(other.to_string()),
        };
        if self.repeats == 0 {
            return Err(OdpcError::Config("repeats must be at least 1".into()));
        }
        if !(0.0..1.0).contains(&self.holdout_fraction) {
            return Err(OdpcError::Config("holdout_fraction must lie in [0, 1)".into()));
        }
        if self.text_raw_dim == 0 {
            return Err(OdpcError::Config("text_raw_dim must be positive".into()));
        }
        if self.text_features.is_some() != self.text_index.is_some() {
            return Err(OdpcError::Config("text_features and text_index must be given together".into()));
        }
        self.training(self.seed).validate().map_err(wrap)?;
        self.knn().validate().map_err(wrap)?;
        self.peer_gen().validate().map_err(wrap)?;
        self.head_shape().validate().map_err(wrap)?;
        self.synthetic().validate().map_err(wrap)?;
        Ok(())
    }

    pub fn loss(&self) -> LossConfig {
        LossConfig {
            temperature: self.temperature,
            mix_lambda: self.mix_lambda,
            pcc_form: self.pcc_form,
            use_pcc: self.use_pcc,
            use_ce: self.use_ce,
            use_mixup: self.use_mixup,
        }
    }

    pub fn training(&self, seed: u64) -> TrainingConfig {
        TrainingConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            lr: self.lr,
            momentum: self.momentum,
            step_size: self.step_size,
            gamma: self.gamma,
            seed,
            loss: self.loss(),
        }
    }

    pub fn knn(&self) -> KnnConfig {
        KnnConfig { k: self.knn_k, target_tpr: self.target_tpr, backend: self.knn_backend }
    }

    pub fn peer_gen(&self) -> PeerGenConfig {
        PeerGenConfig {
            peers_per_class: self.peers_per_class,
            prompt_template: self.prompt_template.clone(),
            description_template: self.description_template.clone(),
            provider_kind: self.provider,
            max_requery_attempts: self.max_requery_attempts,
            offline: self.offline,
            stub_seed: self.seed,
            llm_endpoint: self.llm_endpoint.clone(),
            llm_model: self.llm_model.clone(),
        }
    }

    pub fn head_shape(&self) -> HeadShape {
        HeadShape { input_dim: crate::encoders::DEFAULT_FEATURE_DIM, hidden_dims: self.hidden_dims.clone() }
    }

    pub fn synthetic(&self) -> SyntheticSpec {
        SyntheticSpec {
            separation: self.synthetic_separation,
            noise: self.synthetic_noise,
            text_anchored: self.synthetic_text_anchored,
            train_per_class: self.synthetic_train_per_class,
            test_per_class: self.synthetic_test_per_class,
            ..SyntheticSpec::default()
        }
    }

    pub fn llm_cache_path(&self) -> PathBuf {
        self.llm_cache.clone().unwrap_or_else(|| self.out_dir.join("llm_cache.json"))
    }
}
