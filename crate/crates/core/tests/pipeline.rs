use std::path::Path;

use defta_core::config::{ConfigError, ScenarioConfig};
use defta_core::extract::extract_from_dir;
use defta_core::graph::{generate_topology, BinomialParams};
use defta_core::report::{report_tables, ReportError};
use defta_core::scenario::{read_final_models, read_manifest, run_scenario, write_run};
use serde_json::json;

fn small(name: &str, seed: u64, task: serde_json::Value) -> ScenarioConfig {
    ScenarioConfig::from_value(json!({
        "name": name,
        "seed": seed,
        "topology": {"kind": "binomial", "n_workers": 8, "n_size": 60, "n_degree": 4},
        "task": task,
        "global_epochs": 4,
        "local_epochs": 2,
        "batch_size": 16,
        "report_interval": 2
    }))
    .unwrap()
}

fn softmax() -> serde_json::Value {
    json!({"kind": "softmax_regression", "n_features": 4, "n_classes": 3, "noise": 1.0})
}

fn write(dir: &Path, cfg: &ScenarioConfig) {
    let (sc, report) = run_scenario(cfg).unwrap();
    write_run(dir, cfg, &sc, &report).unwrap();
}

#[test]
fn run_extract_report_round_trip() {
    let root = tempfile::tempdir().unwrap();
    let dirs: Vec<_> = (1..=3)
        .map(|s| {
            let d = root.path().join(format!("run{s}"));
            write(&d, &small("tiny", s, softmax()));
            d
        })
        .collect();

    let m = read_manifest(&dirs[0]).unwrap();
    assert_eq!(m.name, "tiny");
    assert_eq!(m.epochs_reached, 4);
    assert_eq!(m.config_hash, small("tiny", 1, softmax()).content_hash());
    for f in &m.files {
        assert!(dirs[0].join(f).is_file(), "{f} missing");
    }
    assert_eq!(read_final_models(&dirs[0]).unwrap().len(), 8);

    let e = extract_from_dir(&dirs[0], 2, 3, 5).unwrap();
    assert_eq!(e.groups.len(), 2);
    assert!(e.groups.iter().all(|g| g.members.len() == 3));
    let acc = e.mean_acc.unwrap();
    assert!((0.0..=1.0).contains(&acc));
    assert_eq!(e, extract_from_dir(&dirs[0], 2, 3, 5).unwrap());

    let table = report_tables(&dirs).unwrap();
    assert_eq!(table.rows.len(), 1);
    assert_eq!(table.rows[0].runs, 3);
    assert_eq!(table.rows[0].test_acc.unwrap().n, 3);
    assert!(table.to_markdown().contains("| tiny | 3 |"));
    assert_eq!(table.to_csv().lines().count(), 2);
}

#[test]
fn report_rejects_mixed_tasks() {
    let root = tempfile::tempdir().unwrap();
    let a = root.path().join("a");
    let b = root.path().join("b");
    write(&a, &small("a", 1, softmax()));
    write(&b, &small("b", 1, json!({"kind": "least_squares", "n_features": 4})));
    match report_tables(&[&a, &b]) {
        Err(ReportError::MixedTasks { other_dir, .. }) => assert_eq!(other_dir, b),
        other => panic!("expected MixedTasks, got {other:?}"),
    }
}

#[test]
fn config_file_with_overrides_and_topology_file() {
    let root = tempfile::tempdir().unwrap();
    let topo = generate_topology(6, BinomialParams { n_degree: 4, ..Default::default() }, 3, true).unwrap();
    std::fs::write(root.path().join("net.json"), topo.to_json()).unwrap();
    let path = root.path().join("exp.json");
    std::fs::write(
        &path,
        r#"{"name": "file-topo", "topology": {"kind": "file", "path": "net.json"},
            "task": {"kind": "least_squares", "n_features": 3}, "global_epochs": 2, "sample_count": 1}"#,
    )
    .unwrap();
    let cfg = ScenarioConfig::load(&path, &["seed=11".into(), "learning_rate=0.05".into()]).unwrap();
    assert_eq!(cfg.seed, 11);
    assert_eq!(cfg.learning_rate, 0.05);
    let (sc, report) = run_scenario(&cfg).unwrap();
    assert_eq!(sc.topology.out_edges, topo.out_edges);
    assert_eq!(report.epochs_reached(), 2);

    let err = ScenarioConfig::load(&path, &["global_epochs=0".into()]).unwrap_err();
    assert!(matches!(err, ConfigError::Invalid(_)), "{err}");
    let err = ScenarioConfig::load(&root.path().join("missing.json"), &[]).unwrap_err();
    assert!(matches!(err, ConfigError::Io { .. }), "{err}");
}

#[test]
fn unknown_config_keys_are_rejected() {
    let err = ScenarioConfig::from_json_str(r#"{"global_epoch": 3}"#).unwrap_err();
    assert!(matches!(err, ConfigError::Parse(_)), "{err}");
}
