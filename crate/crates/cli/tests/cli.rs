use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL_SCENARIO: &str = r#"
duration = 1800
control_duration = 600

[network]
default_arrival_rate = 0.08
seed = 3

[[attacks]]
start = 900
end = 1800
mode = "ALL_RED"
"#;

const RUN: &str = r#"
seed = 5
scenario = "scenario.toml"

[dataset]
rows = 18

[train]
epochs = 2

[xai.lime]
n_samples = 200

[xai.shap]
n_coalitions = 120

[triage.shap]
n_coalitions = 120
"#;

fn sigwatch(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sigwatch")).args(args).output().expect("spawn sigwatch")
}

fn setup(dir: &Path) -> (String, String) {
    fs::write(dir.join("scenario.toml"), SMALL_SCENARIO).unwrap();
    fs::write(dir.join("run.toml"), RUN).unwrap();
    let out = dir.join("out");
    (dir.join("run.toml").display().to_string(), out.display().to_string())
}

fn ok(o: &Output) -> String {
    assert!(o.status.success(), "stderr: {}", String::from_utf8_lossy(&o.stderr));
    String::from_utf8_lossy(&o.stdout).into_owned()
}

#[test]
fn missing_scenario_file_is_usage_error() {
    let o = sigwatch(&["simulate", "--scenario", "/definitely/not/here.toml", "--out", "/tmp/unused-sigwatch"]);
    assert_eq!(o.status.code(), Some(2));
    let o = sigwatch(&["--out", "/tmp/unused-sigwatch", "simulate"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn hour_plus_hour_scenario_record_count_and_reproducibility() {
    let dir = tempfile::tempdir().unwrap();
    let sc = dir.path().join("s.toml");
    fs::write(
        &sc,
        "duration = 7200\ncontrol_duration = 600\n[network]\nseed = 2\n[[attacks]]\nstart = 3600\nend = 7200\n",
    )
    .unwrap();
    let digest = |out: &str| {
        let stdout = ok(&sigwatch(&["simulate", "--scenario", sc.to_str().unwrap(), "--out", out]));
        assert!(stdout.contains("records           12960"), "{stdout}");
        fs::read(Path::new(out).join("records.csv")).unwrap()
    };
    let a = digest(dir.path().join("a").to_str().unwrap());
    let b = digest(dir.path().join("b").to_str().unwrap());
    assert_eq!(a, b);
}

#[test]
fn full_chain_and_integrity_checks() {
    let dir = tempfile::tempdir().unwrap();
    let (run, out) = setup(dir.path());
    let c = |args: &[&str]| {
        let mut v = vec!["--config", run.as_str(), "--out", out.as_str()];
        v.extend_from_slice(args);
        sigwatch(&v)
    };
    let s = ok(&c(&["simulate"]));
    assert!(s.contains("busiest") || s.contains("monitored intersection"));
    ok(&c(&["dataset"]));
    ok(&c(&["train"]));
    let table = ok(&c(&["eval"]));
    assert!(table.contains("Accuracy (%)") && table.contains("R=18 SINGLE [hacked+]"), "{table}");
    let again = ok(&c(&["eval"]));
    assert_eq!(table, again);

    // occlusion grid: header + 18 rows, 1 + 23 columns
    ok(&c(&["explain", "--method", "occlusion", "--samples", "0"]));
    let grid = fs::read_to_string(PathBuf::from(&out).join("explain/occlusion_0.csv")).unwrap();
    let lines: Vec<&str> = grid.lines().collect();
    assert_eq!(lines.len(), 19);
    assert!(lines.iter().all(|l| l.split(',').count() == 24));

    ok(&c(&["explain", "--method", "lime", "--samples", "1"]));
    let lime: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(PathBuf::from(&out).join("explain/lime_1.json")).unwrap()).unwrap();
    assert_eq!(lime["entries"].as_array().unwrap().len(), 10);

    let listed = ok(&c(&["explain", "--method", "shap", "--samples", "misclassified"]));
    let triage_text = ok(&c(&["triage"]));
    let triage: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(PathBuf::from(&out).join("triage.json")).unwrap()).unwrap();
    let cases = triage["counts"]["total"].as_u64().unwrap() as usize;
    assert_eq!(listed.lines().filter(|l| l.contains("shap_")).count(), cases, "{triage_text}");

    let pca = ok(&c(&["pca"]));
    assert!(pca.contains("components reach"));
    let csv = fs::read_to_string(PathBuf::from(&out).join("pca.csv")).unwrap();
    assert!(csv.lines().skip(1).any(|l| l.ends_with(",0")) && csv.lines().skip(1).any(|l| l.ends_with(",1")));
    let meta: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(PathBuf::from(&out).join("pca.json")).unwrap()).unwrap();
    assert!(!meta["explained_variance_ratio"].as_array().unwrap().is_empty());

    // usage errors
    assert_eq!(c(&["explain", "--method", "gradcam"]).status.code(), Some(2));
    assert_eq!(c(&["explain", "--method", "lime", "--samples", "x1"]).status.code(), Some(2));
    assert_eq!(c(&["explain", "--method", "lime", "--samples", "100000"]).status.code(), Some(2));

    // tampering with the test split is refused
    let test_path = PathBuf::from(&out).join("test.swds");
    let mut bytes = fs::read(&test_path).unwrap();
    let last = bytes.len() - 1;
    bytes[last] ^= 0x01;
    fs::write(&test_path, bytes).unwrap();
    let o = c(&["eval"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("digest"));
}

#[test]
fn stochastic_stage_requires_seed() {
    let dir = tempfile::tempdir().unwrap();
    let (_, out) = setup(dir.path());
    ok(&sigwatch(&["simulate", "--scenario", dir.path().join("scenario.toml").to_str().unwrap(), "--out", &out]));
    let o = sigwatch(&["dataset", "--out", &out]);
    assert_eq!(o.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&o.stderr).contains("seed"));
    ok(&sigwatch(&["dataset", "--out", &out, "--seed", "4"]));
}
