use ndarray::{Array2, Axis};
use odpc::bench::{run_benchmark, DataSource, ProtocolData, SampleSplit, SyntheticSpec, TextEncoder};
use odpc::config::PipelineConfig;
use odpc::encoders::{toy_encode_texts, ToyEncoderConfig};
use odpc::head::{init_head, MlpHead};
use odpc::peer_gen::StubProvider;
use odpc::trainer::{heads_equal, loss_history_csv, train, TrainingConfig, TrainingData};

struct Fixture {
    images: Array2<f64>,
    labels: Vec<usize>,
    class_texts: Array2<f64>,
    peer_texts: Vec<Array2<f64>>,
}

/// Six synthetic classes with toy-encoded descriptions and two peers each.
fn fixture(seed: u64) -> Fixture {
    let data = ProtocolData::<f64>::synthetic(&SyntheticSpec::default(), seed, 0).unwrap();
    let rows: Vec<usize> = (0..data.classes.len())
        .filter(|&i| data.splits[i] == SampleSplit::Train)
        .filter(|&i| data.catalog.classes[..6].contains(&data.classes[i]))
        .collect();
    let labels =
        rows.iter().map(|&i| data.catalog.classes.iter().position(|c| *c == data.classes[i]).unwrap()).collect();
    let enc = ToyEncoderConfig::new(0, 64);
    let names = &data.catalog.classes[..6];
    let desc: Vec<String> = names.iter().map(|c| format!("This is a photo of a {c}")).collect();
    let peer_texts = names
        .iter()
        .map(|c| {
            let p = [format!("This is a photo of a toy {c}"), format!("This is a photo of a giant {c}")];
            toy_encode_texts::<f64, _>(&p, &enc).unwrap().into_values()
        })
        .collect();
    Fixture {
        images: data.features.values().select(Axis(0), &rows),
        labels,
        class_texts: toy_encode_texts::<f64, _>(&desc, &enc).unwrap().into_values(),
        peer_texts,
    }
}

fn data(f: &Fixture) -> TrainingData<'_, f64> {
    TrainingData {
        images: f.images.view(),
        labels: &f.labels,
        class_texts: f.class_texts.view(),
        peer_texts: &f.peer_texts,
    }
}

fn head(seed: u64) -> MlpHead<f64> {
    init_head(6, 12, seed).unwrap()
}

#[test]
fn identical_seeds_give_identical_runs() {
    let f = fixture(1);
    let cfg = TrainingConfig { epochs: 2, seed: 5, ..Default::default() };
    let a = train(&data(&f), head(3), &cfg).unwrap();
    let b = train(&data(&f), head(3), &cfg).unwrap();
    assert_eq!(a.history, b.history);
    assert!(heads_equal(&a.head, &b.head));
    assert_eq!(loss_history_csv(&a.history), loss_history_csv(&b.history));
    let c = train(&data(&f), head(3), &TrainingConfig { seed: 6, ..cfg }).unwrap();
    assert_ne!(a.history, c.history);
}

#[test]
fn zero_epochs_leave_head_untouched() {
    let f = fixture(2);
    let cfg = TrainingConfig { epochs: 0, ..Default::default() };
    let s = train(&data(&f), head(4), &cfg).unwrap();
    assert!(heads_equal(&s.head, &head(4)));
    assert!(s.history.is_empty());
}

#[test]
fn loss_decreases_on_synthetic_data() {
    for seed in [7u64, 8, 9] {
        let f = fixture(seed);
        let images_before = f.images.clone();
        let cfg = TrainingConfig { epochs: 5, seed, ..Default::default() };
        let s = train(&data(&f), head(seed), &cfg).unwrap();
        assert_eq!(s.history.len(), 5);
        assert!(s.history.iter().all(|r| r.total.is_finite() && r.steps == 1200 / 32));
        let (first, last) = (s.history[0].total, s.history[4].total);
        assert!(last < first, "seed {seed}: {first} -> {last}");
        assert_eq!(f.images, images_before);
    }
}

#[test]
fn benchmark_is_reproducible() {
    let cfg = PipelineConfig { epochs: 1, repeats: 2, seed: 11, knn_k: 7, ..Default::default() };
    let src = DataSource::<f32>::Synthetic { spec: cfg.synthetic(), encoder_seed: cfg.encoder_seed };
    let text = TextEncoder::Toy(ToyEncoderConfig::new(cfg.encoder_seed, cfg.text_raw_dim));
    let run = || run_benchmark(&src, &cfg, &text, &StubProvider::new(cfg.seed)).unwrap();
    let a = run();
    assert_eq!(a, run());
    assert_eq!(a.repeats.len(), 2);
    assert_eq!(a.repeats[1].seed, 12);
    assert!(a.aurocs().iter().all(|v| (0.0..=1.0).contains(v)));
    assert!((a.openness - 13.397).abs() < 1e-3);
}
