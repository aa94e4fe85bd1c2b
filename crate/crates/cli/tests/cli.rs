use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cascade_search::pool::load_pool;
use serde_json::Value;

fn bin() -> Command {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_cascade-search"));
    cmd.env_remove("CASCADE_SEARCH_WORKERS");
    cmd
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Writes a synthetic pool under `dir/name` and returns its manifest path.
fn synth(dir: &Path, name: &str, models: usize, samples: usize, seed: u64) -> PathBuf {
    let spec = dir.join(format!("{name}.spec.json"));
    fs::write(
        &spec,
        format!(
            r#"{{"name": "{name}", "num_models": {models}, "num_samples": {samples}, "num_classes": 5,
                "accuracy_range": [60.0, 90.0], "flops_range": [50.0, 1500.0], "diversity": 0.6}}"#
        ),
    )
    .unwrap();
    let out = dir.join(name);
    let o = run(&[
        "pool",
        "synth",
        p(&spec),
        p(&out),
        "--seed",
        &seed.to_string(),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    out.join("pool.json")
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
}

fn points(front: &Value) -> Vec<(f64, f64)> {
    front
        .as_array()
        .unwrap()
        .iter()
        .map(|e| {
            (
                e["mflops"].as_f64().unwrap(),
                e["accuracy_pct"].as_f64().unwrap(),
            )
        })
        .collect()
}

#[test]
fn pool_validate_and_synth() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "a", 4, 300, 1);
    assert!(dir.path().join("a/run_manifest.json").is_file());
    let o = run(&["pool", "validate", p(&manifest)]);
    assert_eq!(o.status.code(), Some(0));
    assert!(
        stdout(&o).starts_with("OK: N=4 S=300 C=5"),
        "{}",
        stdout(&o)
    );

    fs::write(dir.path().join("a/labels.bin"), b"junk").unwrap();
    let o = run(&["pool", "validate", p(&manifest)]);
    assert_eq!(o.status.code(), Some(1));
}

#[test]
fn merge_reports_label_mismatch() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 2, 100, 1);
    let b = synth(dir.path(), "b", 2, 100, 2);
    let o = run(&["pool", "merge", p(&a), p(&b), p(&dir.path().join("m"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(
        stderr(&o).to_lowercase().contains("label"),
        "{}",
        stderr(&o)
    );

    let c = synth(dir.path(), "c", 2, 100, 1);
    let o = run(&["pool", "merge", p(&a), p(&c), p(&dir.path().join("m"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    let merged = load_pool(&dir.path().join("m/pool.json")).unwrap();
    assert_eq!(merged.num_models(), 4);

    let o = run(&["pool", "merge", p(&a), p(&a), p(&dir.path().join("dup"))]);
    assert_eq!(o.status.code(), Some(1), "duplicate ids");
}

#[test]
fn split_and_csv_import() {
    let dir = tempfile::tempdir().unwrap();
    let a = synth(dir.path(), "a", 2, 100, 3);
    let o = run(&[
        "pool",
        "split",
        p(&a),
        p(&dir.path().join("s")),
        "--fraction",
        "0.3",
        "--seed",
        "4",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        load_pool(&dir.path().join("s/val/pool.json"))
            .unwrap()
            .num_samples(),
        30
    );
    assert_eq!(
        load_pool(&dir.path().join("s/test/pool.json"))
            .unwrap()
            .num_samples(),
        70
    );

    fs::write(dir.path().join("labels.csv"), "0\n1\n1\n").unwrap();
    fs::write(dir.path().join("m.csv"), "0.8,0.2\n0.3,0.7\n0.6,0.4\n").unwrap();
    let model = format!("m:12.5:{}", p(&dir.path().join("m.csv")));
    let out = dir.path().join("imp");
    let o = run(&[
        "pool",
        "import-csv",
        "--labels",
        p(&dir.path().join("labels.csv")),
        "--model",
        &model,
        "-o",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let pool = load_pool(&out.join("pool.json")).unwrap();
    assert_eq!(
        (pool.num_models(), pool.num_samples(), pool.num_classes()),
        (1, 3, 2)
    );
    assert!((pool.model_accuracy(0) - 200.0 / 3.0).abs() < 1e-9);

    let o = run(&[
        "pool",
        "import-csv",
        "--labels",
        p(&dir.path().join("labels.csv")),
        "--model",
        "m:x",
        "-o",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn search_writes_front_log_and_manifest() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth(dir.path(), "a", 6, 300, 5);
    let front = dir.path().join("front.json");
    let o = run(&[
        "search",
        p(&pool),
        "--backend",
        "mogomea",
        "--budget",
        "1500",
        "--k",
        "3",
        "--seed",
        "1",
        "--population-size",
        "40",
        "-o",
        p(&front),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));

    let pts = points(&read_json(&front));
    assert!(!pts.is_empty());
    for w in pts.windows(2) {
        assert!(w[0].0 < w[1].0 && w[0].1 < w[1].1, "not a front: {pts:?}");
    }
    let log = read_json(&dir.path().join("front.runlog.json"));
    assert_eq!(log["seed"], 1);
    assert_eq!(log["evaluations_used"], 1500);
    assert!(!log["hv_trace"].as_array().unwrap().is_empty());
    let manifest = read_json(&dir.path().join("front.manifest.json"));
    assert_eq!(manifest["seed"], 1);
    let inputs = manifest["inputs"].as_array().unwrap();
    assert_eq!(inputs.len(), 2 + 6);
    assert!(inputs
        .iter()
        .all(|i| i["sha256"].as_str().unwrap().len() == 64));

    // same invocation, same front
    let again = dir.path().join("again.json");
    let o = run(&[
        "search",
        p(&pool),
        "--backend",
        "mogomea",
        "--budget",
        "1500",
        "--k",
        "3",
        "--seed",
        "1",
        "--population-size",
        "40",
        "-o",
        p(&again),
    ]);
    assert!(o.status.success());
    assert_eq!(read_json(&front), read_json(&again));
}

#[test]
fn search_usage_errors() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth(dir.path(), "a", 3, 50, 6);
    let out = dir.path().join("f.json");
    let o = run(&["search", p(&pool), "--backend", "random", "-o", p(&out)]);
    assert_eq!(o.status.code(), Some(2), "missing seed");
    let o = run(&[
        "search",
        p(&pool),
        "--budget",
        "0",
        "--seed",
        "1",
        "-o",
        p(&out),
    ]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["search", p(&pool), "--bogus-flag"]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&[
        "search",
        p(&pool),
        "--backend",
        "exhaustive",
        "--k",
        "5",
        "-o",
        p(&out),
    ]);
    assert_eq!(
        o.status.code(),
        Some(1),
        "space too large is a domain failure"
    );
}

#[test]
fn ensemble_mode_and_baselines() {
    let dir = tempfile::tempdir().unwrap();
    let pool = synth(dir.path(), "a", 4, 200, 7);
    let out = dir.path().join("ens.json");
    let o = run(&[
        "search",
        p(&pool),
        "--mode",
        "ensemble",
        "--budget",
        "400",
        "--k",
        "3",
        "--seed",
        "2",
        "--population-size",
        "20",
        "-o",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    for e in read_json(&out).as_array().unwrap() {
        assert!(e["stage_fractions"]
            .as_array()
            .unwrap()
            .iter()
            .all(|f| f.as_f64() == Some(1.0)));
    }

    let out = dir.path().join("rand.json");
    let o = run(&[
        "search",
        p(&pool),
        "--backend",
        "random",
        "--budget",
        "300",
        "--seed",
        "3",
        "-o",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(
        read_json(&dir.path().join("rand.runlog.json"))["evaluations_used"],
        300
    );

    let out = dir.path().join("greedy.json");
    let o = run(&[
        "search",
        p(&pool),
        "--backend",
        "greedy",
        "--grid",
        "10",
        "-o",
        p(&out),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let front = read_json(&out);
    assert!(front.as_array().unwrap().iter().all(|e| e["name"]
        .as_str()
        .unwrap()
        .starts_with("GreedyCascade-style@")));
}

#[test]
fn eval_splits_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "a", 3, 200, 8);
    let pool = load_pool(&manifest).unwrap();

    let o = run(&[
        "eval",
        p(&manifest),
        "--genome",
        r#"{"models": [2, 0], "thresholds": [0.5]}"#,
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let m: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(m["accuracy_pct"].as_f64().unwrap(), pool.model_accuracy(1));
    assert_eq!(
        m["expected_mflops"].as_f64().unwrap(),
        pool.model(1).flops_m()
    );

    let o = run(&[
        "eval",
        p(&manifest),
        "--genome",
        r#"{"models": [9], "thresholds": []}"#,
    ]);
    assert_eq!(o.status.code(), Some(1));

    let o = run(&[
        "eval",
        p(&manifest),
        "--genome",
        r#"{"models": [1, 3], "thresholds": [0.6]}"#,
        "--split",
        "both",
        "--val-fraction",
        "0.5",
        "--split-seed",
        "9",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let both: Value = serde_json::from_str(&stdout(&o)).unwrap();
    assert_eq!(both["val"]["num_samples"], 100);
    assert_eq!(both["test"]["num_samples"], 100);

    let o = run(&[
        "eval",
        p(&manifest),
        "--genome",
        r#"{"models": [1], "thresholds": []}"#,
        "--split",
        "test",
    ]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn analyze_commands() {
    let dir = tempfile::tempdir().unwrap();
    let one = dir.path().join("one.json");
    fs::write(
        &one,
        r#"[{"models": [1], "thresholds": [], "accuracy_pct": 80.0, "mflops": 2000.0, "stage_fractions": [1.0]}]"#,
    )
    .unwrap();
    let o = run(&["analyze", "hv", p(&one)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stdout(&o).trim(), "0.25");

    let o = run(&["analyze", "hv", p(&one), p(&one), p(&one)]);
    let text = stdout(&o);
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines.len(), 5);
    assert_eq!(lines[3], "mean\t0.250000");
    assert_eq!(lines[4], "std\t0.000000");

    let front = dir.path().join("front.json");
    let rec = |m: f64, a: f64| {
        format!(
            r#"{{"models": [1], "thresholds": [], "accuracy_pct": {a}, "mflops": {m}, "stage_fractions": [1.0]}}"#
        )
    };
    fs::write(
        &front,
        format!(
            "[{}, {}, {}, {}]",
            rec(100.0, 96.19),
            rec(186.0, 96.21),
            rec(276.0, 96.34),
            rec(439.0, 98.23)
        ),
    )
    .unwrap();
    let o = run(&["analyze", "filter", p(&front)]);
    let kept: Value = serde_json::from_str(&stdout(&o)).unwrap();
    let acc: Vec<f64> = points(&kept).iter().map(|p| p.1).collect();
    assert_eq!(acc, vec![96.19, 96.34, 98.23]);

    let o = run(&["analyze", "representative", p(&front)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for name in ["ENCAS@100", "ENCAS@186", "ENCAS@276", "ENCAS@439"] {
        assert!(stdout(&o).contains(name), "{}", stdout(&o));
    }

    let csv = dir.path().join("front.csv");
    let o = run(&["analyze", "export-csv", p(&front), "-o", p(&csv)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = fs::read_to_string(&csv).unwrap();
    assert!(
        text.starts_with("name,mflops,accuracy_pct\n,100,96.19\n"),
        "{text}"
    );
    assert!(dir.path().join("front.manifest.json").is_file());

    let bad = dir.path().join("bad.json");
    fs::write(&bad, "not json").unwrap();
    assert_eq!(run(&["analyze", "hv", p(&bad)]).status.code(), Some(1));
}

#[test]
fn analyze_on_test_pool() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), "a", 3, 200, 10);
    let front = dir.path().join("front.json");
    let o = run(&[
        "search",
        p(&manifest),
        "--backend",
        "random",
        "--budget",
        "200",
        "--k",
        "2",
        "--seed",
        "4",
        "--val-fraction",
        "0.5",
        "--split-seed",
        "1",
        "-o",
        p(&front),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let o = run(&[
        "analyze",
        "representative",
        p(&front),
        "--test",
        p(&manifest),
        "--val-fraction",
        "0.5",
        "--split-seed",
        "1",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("test_accuracy"));
}
