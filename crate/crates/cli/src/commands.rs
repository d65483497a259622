use std::path::{Path, PathBuf};

use odpc::bench::{
    export_projection, make_split, parse_results_csv, prepare_repeat, results_csv, run_benchmark, table_markdown,
    ClassCatalog, DataSource, LabelsManifest, Protocol, ProtocolData, SampleEntry, SampleSplit, TextEncoder,
};
use odpc::config::PipelineConfig;
use odpc::encoders::{import_embeddings, EmbeddingSource, ToyEncoderConfig};
use odpc::knn::{build_bank, embed_features};
use odpc::peer_gen::{
    generate_peer_classes, render_description, CachedProvider, HttpLlmProvider, LlmProvider, PeerClassSet, PeersFile,
    ProviderKind, StubProvider,
};
use odpc::trainer::{train as train_head, write_loss_history};
use odpc::{persist, EmbeddingMatrix32, MlpHead32, OdpcError, Result};

use crate::Global;

pub const PEERS_FILE: &str = "peers.json";
pub const IMAGE_FEATURES_FILE: &str = "image_features.bin";
pub const LABELS_FILE: &str = "labels.json";
pub const TEXT_FEATURES_FILE: &str = "text_features.bin";
pub const TEXT_INDEX_FILE: &str = "text_index.json";
pub const CHECKPOINT_FILE: &str = "head.ckpt";
pub const LOSS_HISTORY_FILE: &str = "loss_history.csv";
pub const BANK_FILE: &str = "bank.bin";
pub const RESULTS_FILE: &str = "results.csv";
pub const TABLE_FILE: &str = "table.md";
pub const PROJECTION_FILE: &str = "proj.csv";

fn config_error(e: OdpcError) -> OdpcError {
    match e {
        OdpcError::Config(_) | OdpcError::NotFound(_) => e,
        other => OdpcError::Config(other.to_string()),
    }
}

/// Config file (or the built-in defaults) with flag overrides applied. Without
/// a file, the synthetic protocol starts from its preset.
pub fn resolve_config(g: &Global) -> Result<PipelineConfig> {
    let mut cfg = match &g.config {
        Some(path) => PipelineConfig::load(path)?,
        None if g.protocol.unwrap_or(Protocol::Synthetic) == Protocol::Synthetic => PipelineConfig::synthetic_preset(),
        None => PipelineConfig::default(),
    };
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(v) = g.protocol {
        cfg.protocol = v;
    }
    if let Some(v) = g.repeats {
        cfg.repeats = v;
    }
    if g.offline {
        cfg.offline = true;
    }
    if let Some(v) = g.provider {
        cfg.provider = v.into();
    }
    if let Some(v) = &g.out {
        cfg.out_dir = v.clone();
    }
    if let Some(v) = g.epochs {
        cfg.epochs = v;
    }
    if let Some(v) = g.knn_k {
        cfg.knn_k = v;
    }
    cfg.validate()?;
    std::fs::create_dir_all(&cfg.out_dir)?;
    Ok(cfg)
}

fn data_source(cfg: &PipelineConfig) -> Result<DataSource<f32>> {
    match (&cfg.image_features, &cfg.labels_manifest) {
        (Some(features), Some(labels)) => {
            let m = import_embeddings(features)?;
            let m = if m.is_normalized() { m } else { m.l2_normalized()? };
            let manifest = LabelsManifest::load(labels)?;
            Ok(DataSource::Fixed(ProtocolData::imported(m, &manifest)?))
        }
        (None, None) if cfg.protocol == Protocol::Synthetic => {
            Ok(DataSource::Synthetic { spec: cfg.synthetic(), encoder_seed: cfg.encoder_seed })
        }
        (None, None) => Err(OdpcError::Config(format!(
            "protocol {} needs image_features and labels_manifest in the config",
            cfg.protocol
        ))),
        _ => Err(OdpcError::Config("image_features and labels_manifest must be given together".into())),
    }
}

fn text_encoder(cfg: &PipelineConfig) -> Result<TextEncoder<f32>> {
    match (&cfg.text_features, &cfg.text_index) {
        (Some(features), Some(index)) => {
            let m = import_embeddings(features)?;
            let m = if m.is_normalized() { m } else { m.l2_normalized()? };
            let descriptions: Vec<String> = persist::read_json(index)?;
            TextEncoder::imported(descriptions, m)
        }
        _ => Ok(TextEncoder::Toy(ToyEncoderConfig::new(cfg.encoder_seed, cfg.text_raw_dim))),
    }
}

fn provider(cfg: &PipelineConfig) -> Result<Box<dyn LlmProvider>> {
    Ok(match cfg.provider {
        ProviderKind::Stub => Box::new(StubProvider::new(cfg.seed)),
        ProviderKind::HttpLlm => Box::new(CachedProvider::open(
            HttpLlmProvider::new(&cfg.llm_endpoint, &cfg.llm_model)?,
            cfg.llm_cache_path(),
            cfg.offline,
        )?),
    })
}

fn load_peers(path: &Path) -> Result<PeerClassSet> {
    PeersFile::load(path)?.into_set()
}

fn wrote(path: &Path, what: &str) {
    println!("wrote {} ({what})", path.display());
}

fn read_class_list(path: &Path) -> Result<Vec<String>> {
    let bytes = persist::read_file(path)?;
    let text = String::from_utf8(bytes).map_err(|e| OdpcError::Format(e.to_string()))?;
    if text.trim_start().starts_with('[') {
        return Ok(serde_json::from_str(&text)?);
    }
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

fn catalog(cfg: &PipelineConfig) -> Result<ClassCatalog> {
    if let Some(labels) = &cfg.labels_manifest {
        return Ok(LabelsManifest::load(labels)?.catalog());
    }
    if cfg.protocol == Protocol::Synthetic {
        return Ok(ClassCatalog::synthetic(cfg.synthetic().num_classes));
    }
    ClassCatalog::for_protocol(cfg.protocol)
        .ok_or_else(|| OdpcError::Config(format!("protocol {} needs labels_manifest in the config", cfg.protocol)))
}

pub fn gen_peers(g: &Global, classes: Vec<String>, classes_file: Option<PathBuf>, n: Option<usize>) -> Result<()> {
    let mut cfg = resolve_config(g)?;
    if let Some(n) = n {
        cfg.peers_per_class = n;
        cfg.validate()?;
    }
    let classes = match classes_file {
        Some(path) => read_class_list(&path).map_err(config_error)?,
        None if !classes.is_empty() => classes,
        None => make_split(cfg.protocol, &catalog(&cfg)?, cfg.seed)?.known_classes,
    };
    let provider = provider(&cfg)?;
    let peer_cfg = cfg.peer_gen();
    let set = generate_peer_classes(&classes, &peer_cfg, provider.as_ref())?;
    let path = cfg.out_dir.join(PEERS_FILE);
    PeersFile::from_set(&set, &peer_cfg).save(&path)?;
    let total: usize = set.peers.values().map(Vec::len).sum();
    wrote(&path, &format!("{total} peers for {} classes", classes.len()));
    Ok(())
}

pub fn encode(g: &Global, peers: Option<PathBuf>) -> Result<()> {
    let cfg = resolve_config(g)?;
    let data = data_source(&cfg)?.for_seed(cfg.seed)?.into_owned();
    let image_path = cfg.out_dir.join(IMAGE_FEATURES_FILE);
    persist::write_bank(&data.features, &image_path)?;
    wrote(&image_path, &format!("{} x {}", data.features.rows(), data.features.dim()));

    let manifest = LabelsManifest {
        dataset: data.catalog.dataset.clone(),
        classes: data.catalog.classes.clone(),
        animal_classes: data.catalog.animal_classes.clone(),
        base_classes: data.catalog.base_classes.clone(),
        samples: data
            .sample_ids
            .iter()
            .zip(&data.classes)
            .zip(&data.splits)
            .map(|((id, class), split)| SampleEntry { id: id.clone(), class: class.clone(), split: *split })
            .collect(),
    };
    let labels_path = cfg.out_dir.join(LABELS_FILE);
    manifest.save(&labels_path)?;
    wrote(&labels_path, &format!("{} samples", manifest.samples.len()));

    let mut labels = data.catalog.classes.clone();
    if let Some(path) = peers {
        let set = load_peers(&path).map_err(config_error)?;
        labels.extend(set.distinct_peers());
    }
    let peer_cfg = cfg.peer_gen();
    let mut descriptions = Vec::new();
    for l in &labels {
        let d = render_description(l, &peer_cfg)?;
        if !descriptions.contains(&d) {
            descriptions.push(d);
        }
    }
    let texts = text_encoder(&cfg)?.encode(&descriptions)?;
    let texts = EmbeddingMatrix32::new(texts, true, EmbeddingSource::Toy)?;
    let text_path = cfg.out_dir.join(TEXT_FEATURES_FILE);
    persist::write_bank(&texts, &text_path)?;
    let index_path = cfg.out_dir.join(TEXT_INDEX_FILE);
    persist::write_json(&descriptions, &index_path)?;
    wrote(&text_path, &format!("{} descriptions", descriptions.len()));
    Ok(())
}

pub fn train(g: &Global, peers: Option<PathBuf>) -> Result<()> {
    let cfg = resolve_config(g)?;
    let peers = peers.map(|p| load_peers(&p).map_err(config_error)).transpose()?;
    let source = data_source(&cfg)?;
    let data = source.for_seed(cfg.seed)?;
    let provider = provider(&cfg)?;
    let prep =
        prepare_repeat(cfg.protocol, &data, &cfg, &text_encoder(&cfg)?, provider.as_ref(), peers.as_ref(), cfg.seed)?;
    if peers.is_none() {
        let path = cfg.out_dir.join(PEERS_FILE);
        PeersFile::from_set(&prep.peers, &cfg.peer_gen()).save(&path)?;
        wrote(&path, "generated peers");
    }
    let train_x = prep.train_features(&data);
    let head = prep.init_head(&cfg, cfg.seed)?;
    let state = train_head(&prep.training_data(&train_x), head, &cfg.training(cfg.seed))?;

    let ckpt = cfg.out_dir.join(CHECKPOINT_FILE);
    state.head.save_checkpoint(&ckpt)?;
    wrote(&ckpt, &format!("{} epochs", state.history.len()));
    let history = cfg.out_dir.join(LOSS_HISTORY_FILE);
    write_loss_history(&state.history, &history)?;
    wrote(&history, "loss history");

    let train_m = EmbeddingMatrix32::new(train_x, true, data.features.source())?;
    let bank = build_bank(&state.head, &train_m, format!("{}/seed{}", cfg.protocol, cfg.seed))?;
    let bank_path = cfg.out_dir.join(BANK_FILE);
    bank.save(&bank_path)?;
    wrote(&bank_path, &format!("{} x {}", bank.rows(), bank.width()));
    Ok(())
}

pub fn eval(g: &Global) -> Result<()> {
    let cfg = resolve_config(g)?;
    let result = run_benchmark(&data_source(&cfg)?, &cfg, &text_encoder(&cfg)?, provider(&cfg)?.as_ref())?;
    let path = cfg.out_dir.join(RESULTS_FILE);
    persist::write_atomic(&path, results_csv(std::slice::from_ref(&result)).as_bytes())?;
    println!(
        "{}: auroc {:.4} ± {:.4} over {} repeats (openness {:.2}%)",
        result.protocol,
        result.mean,
        result.std,
        result.repeats.len(),
        result.openness
    );
    wrote(&path, "per-repeat AUROC");
    Ok(())
}

pub fn report(g: &Global, results: Option<PathBuf>) -> Result<()> {
    let cfg = resolve_config(g)?;
    let src = results.unwrap_or_else(|| cfg.out_dir.join(RESULTS_FILE));
    let text = String::from_utf8(persist::read_file(&src)?).map_err(|e| OdpcError::Format(e.to_string()))?;
    let table = table_markdown(&parse_results_csv(&text)?)?;
    let path = cfg.out_dir.join(TABLE_FILE);
    persist::write_atomic(&path, table.as_bytes())?;
    wrote(&path, "summary table");
    Ok(())
}

pub fn project(g: &Global, checkpoint: Option<PathBuf>, raw: bool) -> Result<()> {
    let cfg = resolve_config(g)?;
    let source = data_source(&cfg)?;
    let data = source.for_seed(cfg.seed)?;
    let split = make_split(cfg.protocol, &data.catalog, cfg.seed)?;
    let (mut rows, mut is_ood) = (Vec::new(), Vec::new());
    for (i, (class, s)) in data.classes.iter().zip(&data.splits).enumerate() {
        if *s != SampleSplit::Test {
            continue;
        }
        if split.known_classes.contains(class) {
            rows.push(i);
            is_ood.push(false);
        } else if split.unknown_classes.contains(class) {
            rows.push(i);
            is_ood.push(true);
        }
    }
    let features = data.features.select(&rows).into_values();
    let features = if raw {
        features
    } else {
        let ckpt = checkpoint.unwrap_or_else(|| cfg.out_dir.join(CHECKPOINT_FILE));
        let head = MlpHead32::load_checkpoint(&ckpt)?;
        embed_features(&head, features.view())?
    };
    let ids: Vec<&str> = rows.iter().map(|&i| data.sample_ids[i].as_str()).collect();
    let labels: Vec<&str> = rows.iter().map(|&i| data.classes[i].as_str()).collect();
    let path = cfg.out_dir.join(PROJECTION_FILE);
    let proj = export_projection(features.view(), &ids, &labels, &is_ood, &path)?;
    wrote(&path, &format!("{} points, variances {:.4} {:.4}", ids.len(), proj.variances[0], proj.variances[1]));
    Ok(())
}
