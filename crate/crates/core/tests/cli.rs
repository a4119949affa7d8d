mod common;

use std::path::Path;
use std::process::{Command, Output};

use common::{fixture, snapshot};
use speechinstruct::corpus::read_manifest_file;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_speechinstruct"));
    c.env_remove("TTS_API_KEY").env_remove("TTS_ENDPOINT");
    c
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// ingest -> filter -> synth with the mock backend into `dir/corpus`.
fn mock_pipeline(dir: &Path, source: &str) {
    let unified = dir.join("unified.jsonl");
    let kept = dir.join("kept.jsonl");
    let src = fixture(source);
    ok(&["ingest", "--alpaca", s(&src), "--out", s(&unified)]);
    ok(&["filter", s(&unified), "--out", s(&kept)]);
    ok(&[
        "--seed",
        "42",
        "synth",
        s(&kept),
        "--out",
        s(&dir.join("corpus")),
    ]);
}

#[test]
fn full_mock_pipeline_then_augment() {
    let dir = tempfile::tempdir().unwrap();
    mock_pipeline(dir.path(), "pipeline10.json");
    let corpus = dir.path().join("corpus");
    let manifest = corpus.join("manifest.jsonl");
    assert_eq!(read_manifest_file(&manifest).unwrap().len(), 10);

    let augmented = corpus.join("augmented.jsonl");
    ok(&["augment", s(&manifest), "--out", s(&augmented)]);
    let entries = read_manifest_file(&augmented).unwrap();
    assert_eq!(entries.len(), 30);
    assert!(entries[1].id.ends_with("#sp0.95"));
    assert!(entries[2].id.ends_with("#sp1.05"));
    for e in &entries {
        assert!(corpus.join(&e.audio_path).is_file(), "{}", e.audio_path);
    }

    let stats = ok(&["stats", s(&augmented)]);
    let v: serde_json::Value = serde_json::from_slice(&stats.stdout).unwrap();
    assert_eq!(v["total_instances"], 30);
    assert_eq!(v["distinct_audio"], 30);

    let batches = dir.path().join("batches.jsonl");
    ok(&[
        "batches",
        s(&augmented),
        "--batch-size",
        "8",
        "--out",
        s(&batches),
    ]);
    let lines = std::fs::read_to_string(&batches).unwrap();
    assert_eq!(lines.lines().count(), 4);
    let meta: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("batches.meta.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(meta["batches"], 4);
    assert_eq!(
        meta["trainer"]["learning_rate_search"],
        serde_json::json!([1e-5, 3e-5, 1e-4])
    );
}

#[test]
fn mixed_fixture_filter_counts() {
    let dir = tempfile::tempdir().unwrap();
    let unified = dir.path().join("unified.jsonl");
    let kept = dir.path().join("kept.jsonl");
    ok(&[
        "ingest",
        "--alpaca",
        s(&fixture("mixed20.json")),
        "--out",
        s(&unified),
    ]);
    let out = ok(&["filter", s(&unified), "--out", s(&kept)]);
    let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(v["written"], 14);
    assert_eq!(v["dropped"], 6);
    let drops = std::fs::read_to_string(dir.path().join("kept.drops.jsonl")).unwrap();
    assert_eq!(drops.lines().count(), 6);
}

#[test]
fn synth_is_deterministic_and_resumable() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    mock_pipeline(a.path(), "pipeline10.json");
    mock_pipeline(b.path(), "pipeline10.json");
    let snap_a = snapshot(&a.path().join("corpus"));
    assert_eq!(snap_a, snapshot(&b.path().join("corpus")));

    // Rerun over existing output: nothing changes.
    let kept = a.path().join("kept.jsonl");
    ok(&[
        "--seed",
        "42",
        "synth",
        s(&kept),
        "--out",
        s(&a.path().join("corpus")),
    ]);
    assert_eq!(snap_a, snapshot(&a.path().join("corpus")));

    // A different seed draws different voices.
    let c = tempfile::tempdir().unwrap();
    ok(&["--seed", "7", "synth", s(&kept), "--out", s(c.path())]);
    assert_ne!(
        std::fs::read(c.path().join("manifest.jsonl")).unwrap(),
        std::fs::read(a.path().join("corpus/manifest.jsonl")).unwrap()
    );
}

#[test]
fn remote_without_key_is_config_error() {
    let dir = tempfile::tempdir().unwrap();
    let unified = dir.path().join("unified.jsonl");
    ok(&[
        "ingest",
        "--alpaca",
        s(&fixture("pipeline10.json")),
        "--out",
        s(&unified),
    ]);
    let out = run(&[
        "--backend",
        "remote",
        "synth",
        s(&unified),
        "--out",
        s(dir.path()),
    ]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["stage"], "synth");
    assert_eq!(v["error"]["kind"], "config");
    assert!(v["error"]["message"]
        .as_str()
        .unwrap()
        .contains("TTS_API_KEY"));
}

#[test]
fn unknown_config_key_fails_before_any_stage() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("cfg.json");
    std::fs::write(&cfg, r#"{"seed": 1, "sedd": 2}"#).unwrap();
    let out_file = dir.path().join("u.jsonl");
    let out = run(&[
        "--config",
        s(&cfg),
        "ingest",
        "--alpaca",
        s(&fixture("pipeline10.json")),
        "--out",
        s(&out_file),
    ]);
    assert!(!out.status.success());
    let v: serde_json::Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(v["error"]["stage"], "config");
    assert!(!out_file.exists());
}

#[test]
fn perfect_predictions_score_one() {
    for task in ["ner", "sa", "qa", "fsc", "slurp"] {
        let preds = fixture(&format!("score/{task}.preds.jsonl"));
        let refs = fixture(&format!("score/{task}.refs.jsonl"));
        let out = ok(&[
            "score",
            "--task",
            task,
            "--predictions",
            s(&preds),
            "--references",
            s(&refs),
        ]);
        let v: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let metrics = v["metrics"].as_object().unwrap();
        assert!(!metrics.is_empty());
        for (k, val) in metrics {
            let want = if k == "bleu4" { 100.0 } else { 1.0 };
            assert_eq!(val.as_f64().unwrap(), want, "{task} {k}");
        }
        assert_eq!(v["support"]["missing_predictions"], 0);
        assert_eq!(v["support"]["unparseable"], 0);
    }
}

#[test]
fn subsample_and_expand_via_cli() {
    let dir = tempfile::tempdir().unwrap();
    mock_pipeline(dir.path(), "pipeline10.json");
    let corpus = dir.path().join("corpus");
    let manifest = corpus.join("manifest.jsonl");
    let sub = corpus.join("sub.jsonl");
    ok(&[
        "subsample",
        s(&manifest),
        "--fraction",
        "0.3",
        "--out",
        s(&sub),
    ]);
    assert_eq!(read_manifest_file(&sub).unwrap().len(), 3);

    let para = dir.path().join("para.json");
    std::fs::write(
        &para,
        r#"{"Answer the question.": ["Please answer this.", "Respond to the question."]}"#,
    )
    .unwrap();
    let exp = corpus.join("expanded.jsonl");
    ok(&[
        "expand",
        s(&manifest),
        "--paraphrases",
        s(&para),
        "--out",
        s(&exp),
    ]);
    assert_eq!(read_manifest_file(&exp).unwrap().len(), 12);

    let elsewhere = dir.path().join("sub.jsonl");
    let out = run(&[
        "subsample",
        s(&manifest),
        "--fraction",
        "0.3",
        "--out",
        s(&elsewhere),
    ]);
    assert!(!out.status.success());
}
