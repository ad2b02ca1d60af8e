//! The `zstta` binary end to end: exit codes, flag handling and
//! byte-identical reports on reruns.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use tempfile::TempDir;

fn zstta(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_zstta")).args(args).output().expect("binary runs")
}

fn code(out: &Output) -> i32 {
    out.status.code().expect("exited normally")
}

fn ok(args: &[&str]) -> String {
    let out = zstta(args);
    assert_eq!(code(&out), 0, "{args:?}\n{}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small dataset plus a config sized for quick runs.
struct Workspace {
    dir: TempDir,
    config: PathBuf,
    manifest: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("exp.json");
        fs::write(
            &config,
            r#"{
  "seed": 3,
  "synth": {"train_per_class": 8, "val_per_class": 3, "test_per_class": 10, "anchor_drift": 0.5},
  "train": {"max_epochs": 3, "batch_size": 32, "attn_dim": 8, "mlp_hidden": 16, "learning_rate": 0.001},
  "stream": {"base_rate": 0.001},
  "ablation": {"partitions": ["global"]}
}"#,
        )
        .unwrap();
        let data = dir.path().join("data");
        ok(&["synth", "--config", s(&config), "--out", s(&data)]);
        let manifest = data.join("manifest.json");
        Self { dir, config, manifest }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn train(&self, name: &str) -> PathBuf {
        let out = self.path(name);
        ok(&["train", "--config", s(&self.config), "--dataset", s(&self.manifest), "--out", s(&out)]);
        out
    }
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(code(&zstta(&[])), 2);
    assert_eq!(code(&zstta(&["synth", "--preset", "nope", "--out", "/tmp/x"])), 2);
    assert_eq!(code(&zstta(&["frobnicate"])), 2);
    let dir = tempfile::tempdir().unwrap();
    // no dataset given
    assert_eq!(code(&zstta(&["train", "--out", s(&dir.path().join("t"))])), 2);
    let bad = dir.path().join("bad.json");
    fs::write(&bad, r#"{"sead": 1}"#).unwrap();
    assert_eq!(code(&zstta(&["synth", "--config", s(&bad), "--out", s(&dir.path().join("d"))])), 2);
}

#[test]
fn refuses_to_overwrite_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("d");
    ok(&["synth", "--preset", "easy", "--out", s(&out)]);
    let again = zstta(&["synth", "--preset", "easy", "--out", s(&out)]);
    assert_eq!(code(&again), 3);
    ok(&["synth", "--preset", "easy", "--out", s(&out), "--force"]);
}

#[test]
fn corrupt_data_exits_5() {
    let ws = Workspace::new();
    let bad = ws.path("bad.bin");
    fs::write(&bad, b"XXXX\x01\x01\x00\x00\x00\x00").unwrap();
    assert_eq!(code(&zstta(&["inspect", s(&bad)])), 5);

    // truncate one feature file of a copy of the dataset
    let data = ws.manifest.parent().unwrap();
    let feature = fs::read_dir(data.join("features")).unwrap().next().unwrap().unwrap().path();
    let bytes = fs::read(&feature).unwrap();
    fs::write(&feature, &bytes[..bytes.len() - 4]).unwrap();
    let out = zstta(&["train", "--config", s(&ws.config), "--dataset", s(&ws.manifest), "--out", s(&ws.path("t"))]);
    assert_eq!(code(&out), 5, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn protocol_violation_exits_4() {
    let ws = Workspace::new();
    let params = ws.train("params");
    // declare every class seen: nothing is left for zero-shot evaluation
    let text = fs::read_to_string(&ws.manifest).unwrap();
    let mut manifest: serde_json::Value = serde_json::from_str(&text).unwrap();
    let split = manifest["split"].as_object_mut().unwrap();
    let mut all: Vec<serde_json::Value> = split["seen"].as_array().unwrap().clone();
    all.extend(split["unseen"].as_array().unwrap().iter().cloned());
    split.insert("seen".into(), all.into());
    split.insert("unseen".into(), serde_json::Value::Array(vec![]));
    let edited = ws.manifest.with_file_name("all_seen.json");
    fs::write(&edited, manifest.to_string()).unwrap();
    let out = zstta(&["run", "--dataset", s(&edited), "--params", s(&params), "--out", s(&ws.path("r"))]);
    assert_eq!(code(&out), 4, "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn max_epochs_flag_overrides_config() {
    let ws = Workspace::new();
    let stdout = ok(&[
        "train",
        "--config",
        s(&ws.config),
        "--dataset",
        s(&ws.manifest),
        "--max-epochs",
        "1",
        "--out",
        s(&ws.path("t")),
    ]);
    assert!(stdout.contains("epochs run: 1"), "{stdout}");
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(ws.path("t/train_report.json")).unwrap()).unwrap();
    assert_eq!(report["epochs_run"], 1);
    assert_eq!(report["effective_config"]["train"]["max_epochs"], 1);
}

#[test]
fn closed_gate_run_matches_frozen_run() {
    let ws = Workspace::new();
    let params = ws.train("params");
    let run = |name: &str, extra: &[&str]| {
        let out = ws.path(name);
        let mut args = vec!["run", "--config", s(&ws.config), "--dataset", s(&ws.manifest), "--params", s(&params)];
        args.extend_from_slice(extra);
        args.extend_from_slice(&["--protocol", "gzsl", "--out", s(&out)]);
        ok(&args);
        fs::read(out.join("predictions.csv")).unwrap()
    };
    let off = run("off", &["--tta", "off"]);
    let closed = run("closed", &["--tta", "full", "--conf-threshold", "1.0"]);
    assert_eq!(off, closed);
}

#[test]
fn gzsl_report_has_seen_unseen_and_harmonic() {
    let ws = Workspace::new();
    let params = ws.train("params");
    let out = ws.path("g");
    ok(&[
        "run",
        "--config",
        s(&ws.config),
        "--dataset",
        s(&ws.manifest),
        "--params",
        s(&params),
        "--protocol",
        "gzsl",
        "--out",
        s(&out),
    ]);
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    for key in ["S", "U", "H", "delta"] {
        assert!(report[key].is_f64(), "{key} missing: {report}");
    }
    assert!(out.join("calibration.csv").exists());
    let fixed = ws.path("fixed");
    ok(&[
        "run",
        "--config",
        s(&ws.config),
        "--dataset",
        s(&ws.manifest),
        "--params",
        s(&params),
        "--protocol",
        "gzsl",
        "--delta",
        "0.5",
        "--out",
        s(&fixed),
    ]);
    assert!(!fixed.join("calibration.csv").exists());
}

#[test]
fn inspect_describes_tensors_and_manifests() {
    let ws = Workspace::new();
    let text = ok(&["inspect", s(&ws.manifest)]);
    assert!(!text.is_empty());
    let anchors = ws.manifest.parent().unwrap().join("anchors.dpt");
    let line = ok(&["inspect", s(&anchors)]);
    assert!(line.contains("float32 [20, 8, 16]"), "{line}");
}

/// Every command, rerun with `--force` into the same directory, rewrites the
/// same bytes.
#[test]
fn reruns_are_byte_identical() {
    let ws = Workspace::new();
    let snapshot = |dir: &Path| -> Vec<(String, Vec<u8>)> {
        let mut files = Vec::new();
        let mut stack = vec![dir.to_path_buf()];
        while let Some(d) = stack.pop() {
            for entry in fs::read_dir(&d).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    stack.push(p);
                } else {
                    files.push((p.strip_prefix(dir).unwrap().display().to_string(), fs::read(&p).unwrap()));
                }
            }
        }
        files.sort();
        files
    };
    let params = ws.path("params");
    let commands: Vec<(PathBuf, Vec<String>)> = vec![
        (ws.path("synth"), vec!["synth".into(), "--config".into(), s(&ws.config).into()]),
        (
            params.clone(),
            vec!["train".into(), "--config".into(), s(&ws.config).into(), "--dataset".into(), s(&ws.manifest).into()],
        ),
        (
            ws.path("run"),
            [
                "run",
                "--config",
                s(&ws.config),
                "--dataset",
                s(&ws.manifest),
                "--params",
                s(&params),
                "--protocol",
                "gzsl",
            ]
            .map(String::from)
            .to_vec(),
        ),
        (
            ws.path("ablate"),
            ["ablate", "--config", s(&ws.config), "--dataset", s(&ws.manifest), "--max-epochs", "2"]
                .map(String::from)
                .to_vec(),
        ),
    ];
    for (out, args) in commands {
        let mut args: Vec<&str> = args.iter().map(String::as_str).collect();
        args.extend_from_slice(&["--out", s(&out)]);
        ok(&args);
        let first = snapshot(&out);
        assert!(!first.is_empty());
        args.push("--force");
        ok(&args);
        assert_eq!(first, snapshot(&out), "{args:?} changed its output");
    }
}
