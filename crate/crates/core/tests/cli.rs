use std::path::Path;
use std::process::{Command, Output};

use manifold_mix::geometry::SmoothnessSpec;
use manifold_mix::model::contraction_rate;

const BASE: &str = r#"
[manifold]
family = "two_circles"

[noise]
model = "orthonormal"
delta = 0.1

[data]
n = 80
seed = 3

[inference.gibbs]
iterations = 10
burn_in = 0

[inference.map]
k = 1
epochs = 50
restarts = 1

[eval]
n_mc = 500
predictive_samples = 123

[rate]
n_grid = [30, 60, 90]
seeds = [1, 2, 3]
heldout_n = 40
n_mc = 500
"#;

fn run(dir: &Path, config: &str, args: &[&str]) -> Output {
    std::fs::write(dir.join("config.toml"), config).unwrap();
    Command::new(env!("CARGO_BIN_EXE_manifold-mix"))
        .arg("--config")
        .arg(dir.join("config.toml"))
        .arg("--out")
        .arg(dir)
        .args(args)
        .output()
        .unwrap()
}

fn ok(dir: &Path, config: &str, args: &[&str]) {
    let out = run(dir, config, args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
}

fn json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn empty_dataset_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &BASE.replace("n = 80", "n = 0"), &["generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unknown_family_is_a_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), &BASE.replace("two_circles", "klein_bottle"), &["generate"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn fit_without_data_fails() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(dir.path(), BASE, &["fit"]);
    assert!(!out.status.success());
}

#[test]
fn gibbs_fit_and_eval() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, BASE, &["generate"]);
    ok(d, BASE, &["fit"]);
    let trace = std::fs::read_to_string(d.join("trace.ndjson")).unwrap();
    assert_eq!(trace.lines().count(), 10);
    ok(d, BASE, &["eval"]);
    let m = json(&d.join("metrics.json"));
    assert!(m["baselines"]["gaussian"]["hellinger_sq"]["value"].is_number());
    assert!(m["model"]["hellinger_sq"]["value"].is_number());
    let pred = std::fs::read_to_string(d.join("predictive.csv")).unwrap();
    assert_eq!(pred.lines().next(), Some("x1,x2"));
    assert_eq!(pred.lines().count(), 124);
}

#[test]
fn b_traces_follow_the_prior_mode() {
    let b_of = |config: &str| -> Vec<Vec<f64>> {
        let dir = tempfile::tempdir().unwrap();
        let config = config.replace("iterations = 10", "iterations = 30");
        ok(dir.path(), &config, &["generate"]);
        ok(dir.path(), &config, &["fit"]);
        std::fs::read_to_string(dir.path().join("trace.ndjson"))
            .unwrap()
            .lines()
            .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["b"].as_array().unwrap().iter().map(|v| v.as_f64().unwrap()).collect())
            .collect()
    };
    let fixed = b_of(&format!("{BASE}\n[prior]\nb = {{ mode = \"fixed\", values = [1.0, 1.0] }}\n"));
    assert!(fixed.iter().all(|b| b == &vec![1.0, 1.0]));
    let hyper = b_of(BASE);
    assert!(hyper.windows(2).any(|w| w[0] != w[1]));
}

#[test]
fn map_with_one_component() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, BASE, &["generate"]);
    ok(d, BASE, &["--backend", "map", "fit"]);
    let snap = json(&d.join("snapshot.json"));
    assert_eq!(snap["components"].as_array().unwrap().len(), 1);
    assert!(d.join("objective.csv").exists());
}

#[test]
fn seed_flag_changes_the_data() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    ok(a.path(), BASE, &["generate"]);
    ok(b.path(), BASE, &["--seed", "4", "generate"]);
    let ra = std::fs::read(a.path().join("data.csv")).unwrap();
    let rb = std::fs::read(b.path().join("data.csv")).unwrap();
    assert_ne!(ra, rb);
}

#[test]
fn rate_study_rows_and_rates() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(d, &BASE.replace("iterations = 10", "iterations = 40"), &["rate-study"]);
    let mut r = csv::Reader::from_path(d.join("rate_study.csv")).unwrap();
    assert_eq!(
        r.headers().unwrap().iter().collect::<Vec<_>>(),
        ["n", "seed", "hellinger_sq", "heldout", "epsilon_n"]
    );
    let s = SmoothnessSpec::new(2.0, 6.0, 1, 2).unwrap();
    let rows: Vec<csv::StringRecord> = r.records().map(|x| x.unwrap()).collect();
    assert_eq!(rows.len(), 9);
    for row in rows {
        let n: usize = row[0].parse().unwrap();
        let eps: f64 = row[4].parse().unwrap();
        assert_eq!(eps, contraction_rate(&s, n, 0.1).unwrap().epsilon);
    }
}

#[test]
fn approx_scan_outputs() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = format!("{BASE}\n[approx]\nsigmas = [0.3, 0.15]\ngrid = 40\nn_mc = 50\n");
    ok(dir.path(), &cfg, &["approx-scan"]);
    let text = std::fs::read_to_string(dir.path().join("approx_scan.csv")).unwrap();
    assert_eq!(text.lines().count(), 3);
    assert!(json(&dir.path().join("approx_scan.json"))["slope"].is_number());
}
