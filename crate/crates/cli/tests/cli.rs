use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_regiondroso"))
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

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, extra: &[&str]) -> PathBuf {
    let out = dir.join("data");
    let mut args = vec!["synth", "--out", s(&out), "--n-places", "12", "--width", "64", "--height", "32"];
    args.extend_from_slice(extra);
    let o = run(&args);
    assert!(o.status.success(), "{}", stderr(&o));
    out
}

fn write_config(dir: &Path, data: &Path, body: &str) -> PathBuf {
    let path = dir.join("config.json");
    let dataset = format!(
        r#""dataset": {{"reference_dir": "{}", "query_dir": "{}", "gt_file": "{}"}}"#,
        s(&data.join("reference")),
        s(&data.join("query")),
        s(&data.join("gt.csv"))
    );
    let json = if body.is_empty() {
        format!("{{{dataset}}}")
    } else {
        format!("{{{body}, {dataset}}}")
    };
    std::fs::write(&path, json).unwrap();
    path
}

const SMALL: &str = r#""grids": [[1, 1], [2, 2]], "z_per_region": 1, "k_votes": 3, "epochs": 60, "learning_rate": 0.01"#;

fn dir_contents(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut files = Vec::new();
    for sub in ["reference", "query"] {
        let mut names: Vec<_> = std::fs::read_dir(dir.join(sub))
            .unwrap()
            .map(|e| e.unwrap().path())
            .collect();
        names.sort();
        for p in names {
            files.push((p.file_name().unwrap().to_string_lossy().into_owned(), std::fs::read(&p).unwrap()));
        }
    }
    files.push(("gt.csv".into(), std::fs::read(dir.join("gt.csv")).unwrap()));
    files
}

#[test]
fn synth_writes_counts_and_is_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    for out in [&a, &b] {
        let o = run(&["synth", "--out", s(out), "--n-places", "100", "--width", "64", "--height", "32", "--seed", "4"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read_dir(a.join("reference")).unwrap().count(), 100);
    assert_eq!(std::fs::read_dir(a.join("query")).unwrap().count(), 100);
    assert_eq!(dir_contents(&a), dir_contents(&b));
}

#[test]
fn synth_brightness_shifts_mean_luma() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &["--brightness-delta", "30"]);
    let mean = |sub: &str| {
        let t = regiondroso::datasets::load_traversal(data.join(sub)).unwrap();
        t.images.iter().map(|i| i.mean()).sum::<f64>() / t.len() as f64
    };
    let delta = mean("query") - mean("reference");
    assert!((delta - 30.0).abs() < 0.5, "delta {delta}");
}

#[test]
fn synth_unwritable_dir_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let file = tmp.path().join("occupied");
    std::fs::write(&file, b"x").unwrap();
    let o = run(&["synth", "--out", s(&file.join("sub")), "--n-places", "3", "--width", "16", "--height", "8"]);
    assert!(!o.status.success());
    assert!(stderr(&o).contains("occupied"), "{}", stderr(&o));
}

#[test]
fn train_eval_time_pipeline() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let config = write_config(tmp.path(), &data, SMALL);
    let model = tmp.path().join("m.rdn");
    let o = run(&["train", "--config", s(&config), "--model", s(&model), "--threads", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("P=5 T=5"), "{}", stdout(&o));

    let results = tmp.path().join("does/not/exist/yet");
    let o = run(&["eval", "--config", s(&config), "--model", s(&model), "--results", s(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    for f in ["matches.json", "pr_curve.csv", "metrics.json", "per_region.csv"] {
        assert!(results.join(f).is_file(), "{f} missing");
    }
    let metrics: serde_json::Value = serde_json::from_slice(&std::fs::read(results.join("metrics.json")).unwrap()).unwrap();
    for key in ["auc", "ep", "r_p100", "p_r0"] {
        assert!(metrics[key].is_f64(), "{key} missing");
    }
    // Zero perturbation: every reference image is its own query.
    assert!((metrics["auc"].as_f64().unwrap() - 1.0).abs() <= 1e-9, "{metrics}");
    let matches: serde_json::Value = serde_json::from_slice(&std::fs::read(results.join("matches.json")).unwrap()).unwrap();
    assert_eq!(matches.as_array().unwrap().len(), 12);
    let per_region = std::fs::read_to_string(results.join("per_region.csv")).unwrap();
    assert_eq!(per_region.lines().next(), Some("region,grid,auc,ep"));
    assert_eq!(per_region.lines().count(), 6);

    let o = run(&["time", "--config", s(&config), "--model", s(&model), "--threads", "4"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let out = stdout(&o);
    let field = |name: &str| -> f64 {
        out.lines()
            .find(|l| l.starts_with(name))
            .and_then(|l| l.split_whitespace().nth(1))
            .and_then(|v| v.parse().ok())
            .unwrap_or_else(|| panic!("no {name} in {out}"))
    };
    let (mean, fps) = (field("mean"), field("fps"));
    assert!(field("median") <= field("p99") + 1e-9);
    assert!((fps - 1000.0 / mean).abs() / fps < 0.01, "{out}");
}

#[test]
fn training_is_deterministic_across_thread_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let config = write_config(tmp.path(), &data, SMALL);
    let a = tmp.path().join("a.rdn");
    let b = tmp.path().join("b.rdn");
    for (model, threads) in [(&a, "1"), (&b, "3")] {
        let o = run(&["train", "--config", s(&config), "--model", s(model), "--threads", threads, "--seed", "8"]);
        assert!(o.status.success(), "{}", stderr(&o));
    }
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    let c = tmp.path().join("c.rdn");
    let o = run(&["train", "--config", s(&config), "--model", s(&c), "--seed", "9"]);
    assert!(o.status.success());
    assert_ne!(std::fs::read(&a).unwrap(), std::fs::read(&c).unwrap());
}

#[test]
fn default_config_reports_totals() {
    let tmp = tempfile::tempdir().unwrap();
    let data = tmp.path().join("data");
    let o = run(&["synth", "--out", s(&data), "--n-places", "3", "--width", "64", "--height", "32"]);
    assert!(o.status.success());
    let config = write_config(tmp.path(), &data, r#""epochs": 1"#);
    let o = run(&["train", "--config", s(&config), "--model", s(&tmp.path().join("m.rdn"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("P=41 T=82"), "{}", stdout(&o));
    // One summary line per group.
    let rows = stdout(&o).lines().filter(|l| l.trim_start().starts_with(|c: char| c.is_ascii_digit())).count();
    assert_eq!(rows, 41);
}

#[test]
fn single_region_reports_one() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let config = write_config(tmp.path(), &data, r#""grids": [[1, 1]], "z_per_region": 1, "epochs": 2"#);
    let o = run(&["train", "--config", s(&config), "--model", s(&tmp.path().join("m.rdn"))]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("P=1 T=1"));
}

#[test]
fn missing_reference_dir_is_input_error() {
    let tmp = tempfile::tempdir().unwrap();
    let config = write_config(tmp.path(), &tmp.path().join("nowhere"), SMALL);
    let o = run(&["train", "--config", s(&config), "--model", s(&tmp.path().join("m.rdn"))]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("nowhere"), "{}", stderr(&o));
}

#[test]
fn bad_configs_are_input_errors() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let model = tmp.path().join("m.rdn");
    for body in [r#""k_vote": 3"#, r#""z_per_region": 0"#, r#""grids": [[0, 2]]"#, r#""d_hidden": 7"#] {
        let config = write_config(tmp.path(), &data, body);
        let o = run(&["train", "--config", s(&config), "--model", s(&model)]);
        assert_eq!(o.status.code(), Some(2), "{body}: {}", stderr(&o));
    }
    let config = tmp.path().join("broken.json");
    std::fs::write(&config, "{ not json").unwrap();
    let o = run(&["train", "--config", s(&config), "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(2));
    let o = run(&["train", "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(2), "no dataset section");
}

#[test]
fn corrupted_or_mismatched_model_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let config = write_config(tmp.path(), &data, SMALL);
    let model = tmp.path().join("m.rdn");
    assert!(run(&["train", "--config", s(&config), "--model", s(&model)]).status.success());

    let mut bytes = std::fs::read(&model).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0xff;
    let bad = tmp.path().join("bad.rdn");
    std::fs::write(&bad, &bytes).unwrap();
    let results = tmp.path().join("r");
    let o = run(&["eval", "--config", s(&config), "--model", s(&bad), "--results", s(&results)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("format error"), "{}", stderr(&o));
    // A flipped weight bit passes every structural check but not the checksum.
    let mut bytes = std::fs::read(&model).unwrap();
    let n = bytes.len();
    bytes[n - 6] ^= 0x01;
    std::fs::write(&bad, &bytes).unwrap();
    let o = run(&["eval", "--config", s(&config), "--model", s(&bad), "--results", s(&results)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("checksum"), "{}", stderr(&o));

    let other = tmp.path().join("other");
    let o = run(&["synth", "--out", s(&other), "--n-places", "7", "--width", "64", "--height", "32"]);
    assert!(o.status.success());
    let other_config = tmp.path().join("other.json");
    std::fs::write(
        &other_config,
        format!(
            r#"{{"dataset": {{"reference_dir": "{}", "query_dir": "{}"}}}}"#,
            s(&other.join("reference")),
            s(&other.join("query"))
        ),
    )
    .unwrap();
    let o = run(&["eval", "--config", s(&other_config), "--model", s(&model), "--results", s(&results)]);
    assert_eq!(o.status.code(), Some(2));
    assert!(stderr(&o).contains("12 places"), "{}", stderr(&o));
}

#[test]
fn ablate_k_and_z() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &["--noise-sigma", "8", "--shift", "2"]);
    let config = write_config(tmp.path(), &data, SMALL);
    let results = tmp.path().join("abl");
    let o = run(&["ablate", "--config", s(&config), "--axis", "k", "--values", "1,5,20", "--results", s(&results), "-v"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(results.join("ablation.csv")).unwrap();
    let lines: Vec<_> = csv.lines().collect();
    assert_eq!(lines[0], "value,auc,ep,mean_ms");
    assert_eq!(lines.len(), 4);
    assert!(lines[1].starts_with("1,") && lines[3].starts_with("20,"));
    // A single training pass for the whole K sweep.
    assert_eq!(stderr(&o).matches("training ").count(), 1, "{}", stderr(&o));

    let o = run(&["ablate", "--config", s(&config), "--axis", "z", "--values", "1,2", "--results", s(&results), "-v"]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert_eq!(stderr(&o).matches("training ").count(), 2);
    assert_eq!(std::fs::read_to_string(results.join("ablation.csv")).unwrap().lines().count(), 3);

    let o = run(&["ablate", "--config", s(&config), "--axis", "grids", "--values", "1x1,2x2+1x2", "--results", s(&results)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let csv = std::fs::read_to_string(results.join("ablation.csv")).unwrap();
    assert!(csv.contains("\n2x2+1x2,"));

    for (axis, value) in [("k", "0"), ("z", "x"), ("grids", "3by3")] {
        let o = run(&["ablate", "--config", s(&config), "--axis", axis, "--values", value, "--results", s(&results)]);
        assert_eq!(o.status.code(), Some(2), "{axis}={value}");
    }
    let o = run(&["ablate", "--config", s(&config), "--axis", "epochs", "--values", "1", "--results", s(&results)]);
    assert!(!o.status.success());
}

#[test]
fn time_with_no_queries_fails() {
    let tmp = tempfile::tempdir().unwrap();
    let data = synth(tmp.path(), &[]);
    let config = write_config(tmp.path(), &data, SMALL);
    let model = tmp.path().join("m.rdn");
    assert!(run(&["train", "--config", s(&config), "--model", s(&model)]).status.success());
    for entry in std::fs::read_dir(data.join("query")).unwrap() {
        std::fs::remove_file(entry.unwrap().path()).unwrap();
    }
    let o = run(&["time", "--config", s(&config), "--model", s(&model)]);
    assert_eq!(o.status.code(), Some(2));
}
