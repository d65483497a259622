use std::path::Path;
use std::process::{Command, Output};

use odpc::bench::parse_results_csv;
use odpc::config::PipelineConfig;
use odpc::peer_gen::PeersFile;
use odpc::MlpHead32;

fn odpc(args: &[&str], out: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_odpc")).args(args).arg("--out").arg(out).output().unwrap()
}

fn stderr_line(o: &Output) -> String {
    let text = String::from_utf8_lossy(&o.stderr).into_owned();
    assert_eq!(text.lines().count(), 1, "{text}");
    text
}

#[test]
fn gen_peers_with_stub_gives_n_per_class() {
    let dir = tempfile::tempdir().unwrap();
    let o = odpc(
        &["gen-peers", "--provider", "stub", "--n", "3", "--classes", "cat,dog,ship,truck,horse,frog"],
        dir.path(),
    );
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let peers = PeersFile::load(dir.path().join("peers.json")).unwrap();
    assert_eq!(peers.classes.len(), 6);
    assert_eq!(peers.classes.values().map(Vec::len).sum::<usize>(), 18);
    assert_eq!(peers.n, 3);
}

#[test]
fn gen_peers_reads_class_file_and_overwrites_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let list = dir.path().join("classes.txt");
    std::fs::write(&list, "apple\npear\n\nplum\n").unwrap();
    let out = dir.path().join("out");
    for _ in 0..2 {
        let o = odpc(&["gen-peers", "--classes-file", list.to_str().unwrap(), "--n", "2"], &out);
        assert!(o.status.success());
    }
    let names: Vec<_> = std::fs::read_dir(&out).unwrap().map(|e| e.unwrap().file_name()).collect();
    assert_eq!(names, ["peers.json"]);
    let peers = PeersFile::load(out.join("peers.json")).unwrap();
    assert_eq!(peers.classes.keys().collect::<Vec<_>>(), ["apple", "pear", "plum"]);
}

#[test]
fn zero_epoch_checkpoint_equals_initialisation() {
    let dir = tempfile::tempdir().unwrap();
    let o = odpc(&["train", "--epochs", "0", "--seed", "3"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let peers = PeersFile::load(dir.path().join("peers.json")).unwrap().into_set().unwrap();
    let init = MlpHead32::new(&PipelineConfig::default().head_shape(), 6, peers.distinct_peers().len(), 3).unwrap();
    let saved = std::fs::read(dir.path().join("head.ckpt")).unwrap();
    assert_eq!(saved, init.to_checkpoint_bytes().unwrap());
    let history = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    assert_eq!(history.lines().count(), 1);

    let o = odpc(&["train", "--epochs", "1", "--seed", "3"], dir.path());
    assert!(o.status.success());
    assert_ne!(std::fs::read(dir.path().join("head.ckpt")).unwrap(), saved);
    let history = std::fs::read_to_string(dir.path().join("loss_history.csv")).unwrap();
    assert!(history.starts_with("epoch,lr,total,pcc1,pcc2,pcc3,ce\n"));
    assert_eq!(history.lines().count(), 2);
}

#[test]
fn eval_report_and_project_chain() {
    let dir = tempfile::tempdir().unwrap();
    let o = odpc(&["eval", "--repeats", "2", "--epochs", "1", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let results = std::fs::read_to_string(dir.path().join("results.csv")).unwrap();
    let rows = parse_results_csv(&results).unwrap();
    assert_eq!(rows.len(), 2);
    assert_eq!((rows[0].seed, rows[1].seed), (5, 6));

    assert!(odpc(&["report"], dir.path()).status.success());
    let table = std::fs::read_to_string(dir.path().join("table.md")).unwrap();
    assert!(table.lines().any(|l| l.starts_with("| synthetic | 13.40% | 2 |")), "{table}");

    let o = odpc(&["project", "--raw", "--seed", "5"], dir.path());
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let proj = std::fs::read_to_string(dir.path().join("proj.csv")).unwrap();
    assert!(proj.starts_with("sample_id,x,y,label,id_or_ood\n"));
    assert_eq!(proj.lines().count(), 1 + 1000);
    assert_eq!(proj.lines().filter(|l| l.ends_with(",ood")).count(), 400);
}

#[test]
fn encoded_features_feed_back_into_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert!(odpc(&["train", "--epochs", "0", "--seed", "2"], d).status.success());
    let o = odpc(&["encode", "--seed", "2", "--peers", d.join("peers.json").to_str().unwrap()], d);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let cfg = serde_json::json!({
        "image_features": d.join("image_features.bin"),
        "labels_manifest": d.join("labels.json"),
        "text_features": d.join("text_features.bin"),
        "text_index": d.join("text_index.json"),
        "epochs": 1,
        "knn_k": 7,
        "repeats": 1,
        "seed": 2,
    });
    std::fs::write(d.join("config.json"), cfg.to_string()).unwrap();
    let o = odpc(&["eval", "--config", d.join("config.json").to_str().unwrap()], &d.join("imported"));
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));
    let rows = parse_results_csv(&std::fs::read_to_string(d.join("imported/results.csv")).unwrap()).unwrap();
    assert_eq!(rows.len(), 1);
    assert!((0.5..=1.0).contains(&rows[0].auroc));
}

#[test]
fn usage_and_config_errors_exit_with_code_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = odpc(&["eval", "--bogus"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: kind=usage msg="));

    let o = odpc(&["eval", "--config", "/definitely/missing.json"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: kind=not_found"));

    let cfg = dir.path().join("bad.json");
    std::fs::write(&cfg, r#"{"epoch": 3}"#).unwrap();
    let o = odpc(&["eval", "--config", cfg.to_str().unwrap()], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).starts_with("error: kind=config"));

    let o = odpc(&["eval", "--protocol", "cifar10_6v4"], dir.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr_line(&o).contains("labels_manifest"));

    let o = odpc(&["project"], dir.path());
    assert_eq!(o.status.code(), Some(2), "missing checkpoint");
}

#[test]
fn runtime_failures_exit_with_code_1() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("results.csv"), "not,a,results,file\n").unwrap();
    let o = odpc(&["report"], dir.path());
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr_line(&o).starts_with("error: kind=format"));
    assert!(!dir.path().join("table.md").exists());
}
