use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use serde_json::Value;

use gridtopo::io::read_grid;
use gridtopo::random::{sample_hidden_set, trial_rng};

fn gridtopo(args: &[&str], dir: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_gridtopo"))
        .args(args)
        .current_dir(dir)
        .output()
        .unwrap()
}

fn ok(args: &[&str], dir: &Path) -> Output {
    let out = gridtopo(args, dir);
    assert!(
        out.status.success(),
        "{args:?}: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn error_line(out: &Output) -> Value {
    assert!(!out.status.success());
    let text = String::from_utf8_lossy(&out.stderr);
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

#[test]
fn full_pipeline() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "generate",
            "--nodes",
            "20",
            "--extra",
            "10",
            "--seed",
            "4",
            "--out",
            "grid.json",
            "--stats-out",
            "stats.json",
        ],
        d,
    );
    ok(
        &[
            "simulate",
            "--grid",
            "grid.json",
            "--samples",
            "2000",
            "--seed",
            "5",
            "--stats",
            "stats.json",
            "--out",
            "samples.csv",
        ],
        d,
    );

    let csv = fs::read_to_string(d.join("samples.csv")).unwrap();
    let mut lines = csv.lines();
    let header = lines.next().unwrap();
    assert!(header.starts_with("eps_1,") && header.contains("theta_19"));
    assert_eq!(lines.count(), 2000);

    ok(
        &[
            "learn",
            "--grid",
            "grid.json",
            "--samples",
            "samples.csv",
            "--out",
            "tree.json",
        ],
        d,
    );
    let tree = json(&d.join("tree.json"));
    assert_eq!(tree["edges"].as_array().unwrap().len(), 19);
    assert_eq!(tree["topology_error"], 0.0);

    let truth = read_grid(&d.join("grid.json")).unwrap().truth.unwrap();
    let hidden = sample_hidden_set(&truth, 2, &mut trial_rng(6, 0)).unwrap();
    let ids: Vec<String> = hidden
        .nodes()
        .iter()
        .map(|n| n.index().to_string())
        .collect();
    let ids = ids.join(",");
    let out = ok(
        &[
            "learn-missing",
            "--grid",
            "grid.json",
            "--samples",
            "samples.csv",
            "--hidden",
            &ids,
            "--stats",
            "stats.json",
            "--out",
            "missing.json",
        ],
        d,
    );
    for line in String::from_utf8_lossy(&out.stderr).lines() {
        serde_json::from_str::<Value>(line).unwrap();
    }
    assert_eq!(
        json(&d.join("missing.json"))["edges"]
            .as_array()
            .unwrap()
            .len(),
        19
    );

    ok(
        &[
            "estimate-injections",
            "--grid",
            "grid.json",
            "--tree",
            "tree.json",
            "--samples",
            "samples.csv",
            "--out",
            "est.json",
        ],
        d,
    );
    let est = json(&d.join("est.json"));
    assert_eq!(est["nodes"].as_array().unwrap().len(), 19);
    assert!(est["cross_node"]["max_abs_correlation"].as_f64().unwrap() < 0.2);

    ok(
        &[
            "simulate",
            "--grid",
            "grid.json",
            "--samples",
            "10",
            "--no-angles",
            "--out",
            "plain.csv",
        ],
        d,
    );
    assert!(!fs::read_to_string(d.join("plain.csv"))
        .unwrap()
        .contains("theta"));
}

#[test]
fn sweep_writes_tables() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("config.json"),
        r#"{"feeder": {"random": {"num_nodes": 12, "extra_edges": 10, "impedance_range": [0.01, 0.1]}},
            "sample_counts": [50, 200], "trials": 3, "seed": 1, "output_dir": "run"}"#,
    )
    .unwrap();
    ok(&["sweep", "--config", "config.json"], d);
    let results = fs::read_to_string(d.join("run/results.csv")).unwrap();
    assert_eq!(results.lines().count(), 1 + 2 * 3);
    let summary = fs::read_to_string(d.join("run/summary.csv")).unwrap();
    assert!(summary.lines().next().unwrap().starts_with("m,mean_error"));
    assert_eq!(summary.lines().count(), 3);
}

#[test]
fn bad_grid_names_the_field() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("grid.json"),
        r#"{"num_nodes": 2, "root": 0, "edges": [{"u": 0, "v": 1, "r": 0.1, "x": -0.2, "operational": true}]}"#,
    )
    .unwrap();
    let err = error_line(&gridtopo(
        &[
            "simulate",
            "--grid",
            "grid.json",
            "--samples",
            "5",
            "--out",
            "s.csv",
        ],
        d,
    ));
    assert_eq!(err["error"], "schema");
    assert_eq!(err["field"], "edges[0].x");
    assert!(err["message"].is_string());
}

#[test]
fn unknown_config_key_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    fs::write(
        d.join("config.json"),
        r#"{"feeder": {"random": {"num_nodes": 12, "extra_edges": 0, "impedance_range": [0.01, 0.1]}},
            "sample_counts": [50], "trials": 1, "seed": 1, "output_dir": "run", "colour": "blue"}"#,
    )
    .unwrap();
    let err = error_line(&gridtopo(&["sweep", "--config", "config.json"], d));
    assert!(err["message"].as_str().unwrap().contains("colour"));
}

#[test]
fn hidden_root_is_a_domain_error() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(
        &[
            "generate",
            "--nodes",
            "6",
            "--seed",
            "1",
            "--out",
            "grid.json",
            "--stats-out",
            "stats.json",
        ],
        d,
    );
    ok(
        &[
            "simulate",
            "--grid",
            "grid.json",
            "--samples",
            "20",
            "--stats",
            "stats.json",
            "--out",
            "s.csv",
        ],
        d,
    );
    let err = error_line(&gridtopo(
        &[
            "learn-missing",
            "--grid",
            "grid.json",
            "--samples",
            "s.csv",
            "--hidden",
            "0",
            "--stats",
            "stats.json",
            "--out",
            "t.json",
        ],
        d,
    ));
    assert_eq!(err["error"], "domain");
}
