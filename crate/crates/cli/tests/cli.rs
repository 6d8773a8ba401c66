use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn amh(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_amh"))
        .args(args)
        .output()
        .expect("spawn amh")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn synth(dir: &Path, n: usize, seed: u64) -> PathBuf {
    let out = dir.join(format!("corpus{seed}"));
    let o = amh(&[
        "synth",
        "--n",
        &n.to_string(),
        "--seed",
        &seed.to_string(),
        "--audio-dim",
        "4",
        "--video-dim",
        "5",
        "--vocab-size",
        "12",
        "--max-len",
        "5",
        "--out",
        s(&out),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    out.join("manifest.tsv")
}

const SMALL: &[&str] = &[
    "--audio-dim",
    "4",
    "--video-dim",
    "5",
    "--vocab-size",
    "12",
    "--hidden",
    "6",
    "--embed-dim",
    "3",
    "--epochs",
    "2",
    "--folds",
    "3",
    "--runs",
    "1",
    "--batch-size",
    "8",
];

fn train(manifest: &Path, out: &Path, extra: &[&str]) -> Output {
    let mut args = vec!["train", "--data", s(manifest), "--out", s(out)];
    args.extend_from_slice(SMALL);
    args.extend_from_slice(extra);
    amh(&args)
}

/// Report JSON minus the timestamp and the echoed output directory.
fn stable_json(path: &Path) -> String {
    fs::read_to_string(path)
        .unwrap()
        .lines()
        .filter(|l| {
            let l = l.trim_start();
            !l.starts_with("\"generated_at\"") && !l.starts_with("\"out\"")
        })
        .collect::<Vec<_>>()
        .join("\n")
}

#[test]
fn synth_writes_manifest_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let o = amh(&[
        "synth",
        "--n",
        "600",
        "--seed",
        "3",
        "--out",
        s(&dir.path().join("a")),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    amh(&[
        "synth",
        "--n",
        "600",
        "--seed",
        "3",
        "--out",
        s(&dir.path().join("b")),
    ]);
    let a = fs::read_to_string(dir.path().join("a/manifest.tsv")).unwrap();
    assert_eq!(a.lines().count(), 601);
    assert_eq!(
        a,
        fs::read_to_string(dir.path().join("b/manifest.tsv")).unwrap()
    );
    for f in [
        "audio/syn00001.csv",
        "video/syn00600.csv",
        "text/syn00042.txt",
        "SYNTHETIC.txt",
    ] {
        assert_eq!(
            fs::read(dir.path().join("a").join(f)).unwrap(),
            fs::read(dir.path().join("b").join(f)).unwrap()
        );
    }
}

#[test]
fn gradcheck_passes_and_catches_injected_fault() {
    let ok = amh(&["gradcheck"]);
    assert_eq!(code(&ok), 0, "{}", stderr(&ok));
    let seven = amh(&["gradcheck", "--hops", "7", "--max-entries", "20"]);
    assert_eq!(code(&seven), 0, "{}", stderr(&seven));
    let bad = amh(&["gradcheck", "--inject-fault", "flip-attention-w"]);
    assert_eq!(code(&bad), 1);
    assert!(stderr(&bad).contains("W_V"), "{}", stderr(&bad));
}

#[test]
fn zero_hops_is_a_usage_error() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 20, 1);
    let o = train(&manifest, &dir.path().join("out"), &["--hops", "0"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("hops must be"), "{}", stderr(&o));
    let g = amh(&["gradcheck", "--hops", "0"]);
    assert_eq!(code(&g), 2, "{}", stderr(&g));
}

#[test]
fn missing_data_and_unknown_config_keys_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let o = amh(&["train", "--out", s(&dir.path().join("x"))]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    let cfg = dir.path().join("bad.toml");
    fs::write(&cfg, "hiddn = 3\n").unwrap();
    let o = amh(&["train", "--config", s(&cfg)]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn bad_manifests() {
    let dir = tempfile::tempdir().unwrap();
    // A path that does not exist is a bad flag.
    let o = train(&dir.path().join("nope.tsv"), &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 2, "{}", stderr(&o));
    // A manifest that exists but cannot be loaded is a runtime failure.
    let manifest = synth(dir.path(), 10, 3);
    fs::remove_file(manifest.parent().unwrap().join("audio/syn00004.csv")).unwrap();
    let o = train(&manifest, &dir.path().join("out"), &[]);
    assert_eq!(code(&o), 1, "{}", stderr(&o));
    assert!(stderr(&o).contains("syn00004"), "{}", stderr(&o));
}

#[test]
fn train_is_deterministic_and_writes_reports() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 30, 2);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    for out in [&a, &b] {
        let o = train(&manifest, out, &["--seed", "9", "--save-checkpoints"]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        stable_json(&a.join("report.json")),
        stable_json(&b.join("report.json"))
    );
    assert_eq!(
        fs::read_to_string(a.join("confusion.csv")).unwrap(),
        fs::read_to_string(b.join("confusion.csv")).unwrap()
    );
    assert!(a.join("report.txt").exists());
    for fold in 0..3 {
        assert!(a
            .join(format!("checkpoints/fold{fold:02}_run00.amh"))
            .exists());
    }

    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(a.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["command"], "train");
    assert_eq!(report["report"]["runs"].as_array().unwrap().len(), 3);

    // Evaluate a saved checkpoint; the result is stable across invocations.
    let ckpt = a.join("checkpoints/fold00_run00.amh");
    let (e1, e2) = (dir.path().join("e1"), dir.path().join("e2"));
    for out in [&e1, &e2] {
        let o = amh(&[
            "eval",
            "--checkpoint",
            s(&ckpt),
            "--data",
            s(&manifest),
            "--out",
            s(out),
        ]);
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    assert_eq!(
        stable_json(&e1.join("eval.json")),
        stable_json(&e2.join("eval.json"))
    );
    assert!(e1.join("confusion.csv").exists());

    let trace_path = dir.path().join("trace.json");
    let o = amh(&[
        "inspect-attention",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--sample",
        "syn00003",
        "--out",
        s(&trace_path),
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let trace = fs::read_to_string(&trace_path).unwrap();
    assert!(trace.contains("syn00003") && !trace.contains("syn00004"));
    serde_json::from_str::<serde_json::Value>(&trace).unwrap();

    let o = amh(&[
        "inspect-attention",
        "--checkpoint",
        s(&ckpt),
        "--data",
        s(&manifest),
        "--sample",
        "nope",
    ]);
    assert_eq!(code(&o), 1);
}

#[test]
fn parallel_flag_does_not_change_results() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 24, 4);
    let (a, b) = (dir.path().join("a"), dir.path().join("b"));
    assert_eq!(code(&train(&manifest, &a, &["--parallel", "1"])), 0);
    assert_eq!(code(&train(&manifest, &b, &["--parallel", "3"])), 0);
    let strip = |p: &Path| {
        let mut v: serde_json::Value =
            serde_json::from_str(&fs::read_to_string(p).unwrap()).unwrap();
        v["generated_at"] = serde_json::Value::Null;
        v["config"]["parallel"] = serde_json::Value::Null;
        v["config"]["out"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&a.join("report.json")), strip(&b.join("report.json")));
}

#[test]
fn config_file_is_overridden_by_flags() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 24, 5);
    let cfg = dir.path().join("run.toml");
    fs::write(
        &cfg,
        "model = \"mdre\"\nhidden = 5\nruns = 1\nfolds = 3\nepochs = 1\nseed = 1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let o = amh(&[
        "train",
        "--config",
        s(&cfg),
        "--data",
        s(&manifest),
        "--out",
        s(&out),
        "--hidden",
        "7",
        "--audio-dim",
        "4",
        "--video-dim",
        "5",
        "--vocab-size",
        "12",
        "--embed-dim",
        "3",
    ]);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let report: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(out.join("report.json")).unwrap()).unwrap();
    let model = &report["report"]["model_config"];
    assert_eq!(model["hidden_dim"], 7, "{model}");
    assert_eq!(model["kind"]["kind"], "mdre", "{model}");
}

#[test]
fn sweep_writes_one_row_per_hop_count() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = synth(dir.path(), 24, 6);
    let out = dir.path().join("sweep");
    let mut args = vec![
        "sweep",
        "--data",
        s(&manifest),
        "--out",
        s(&out),
        "--hops",
        "1..3",
    ];
    args.extend_from_slice(SMALL);
    let o = amh(&args);
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4, "{csv}");
    assert!(out.join("sweep.json").exists() && out.join("sweep.txt").exists());
}
