mod common;

use std::path::Path;
use std::sync::OnceLock;

use common::{line_count, ok, p, run, stderr, stdout, Server, ToyModels};
use serde_json::{json, Value};
use vpsn_core::corpus::{read_dataset, synthetic_corpus, write_dataset, Aspect};
use vpsn_core::eval::EvalReport;
use vpsn_core::text::normalize;

fn toy() -> &'static ToyModels {
    static TOY: OnceLock<ToyModels> = OnceLock::new();
    TOY.get_or_init(|| {
        let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join("cli-toy");
        let _ = std::fs::remove_dir_all(&dir);
        common::toy_models(&dir)
    })
}

fn record_line(id: &str, language: &str, label: u8) -> String {
    let aspects = if label == 1 { r#","aspects":{"impact":"crash"}"# } else { "" };
    format!(
        r#"{{"id":"{id}","repo":"org/r","message":"m {id}","diff":"@@ -1,2 +1,2 @@\n a\n-b\n+c\n","label":{label},"language":"{language}"{aspects}}}"#
    )
}

#[test]
fn ingest_counts_languages_by_hand() {
    let dir = tempfile::tempdir().unwrap();
    // C: 2 patches + 1 other; Go: 1 + 3; PHP: 0 + 3
    let spec = [
        ("C", 1), ("C", 1), ("C", 0), ("Go", 1), ("Go", 0),
        ("Go", 0), ("Go", 0), ("PHP", 0), ("PHP", 0), ("PHP", 0),
    ];
    let text: Vec<String> = spec.iter().enumerate().map(|(i, (l, y))| record_line(&format!("r{i}"), l, *y)).collect();
    let input = dir.path().join("raw.jsonl");
    std::fs::write(&input, text.join("\n") + "\n").unwrap();
    let out = dir.path().join("clean.jsonl");
    let table = ok(&["ingest", "--in", p(&input), "--out", p(&out)]);
    let rows: Vec<Vec<&str>> = table.lines().map(|l| l.split_whitespace().collect()).collect();
    assert!(rows.contains(&vec!["C", "2", "1", "3"]), "{table}");
    assert!(rows.contains(&vec!["Go", "1", "3", "4"]), "{table}");
    assert!(rows.contains(&vec!["PHP", "0", "3", "3"]), "{table}");
    assert!(rows.contains(&vec!["total", "3", "7", "10"]), "{table}");
    let cleaned = read_dataset(&out).unwrap();
    assert_eq!(cleaned.len(), 10);
    assert!(cleaned.iter().all(|r| r.segments.total_lines() == 3));
}

#[test]
fn ingest_rejects_duplicates_and_bad_lines() {
    let dir = tempfile::tempdir().unwrap();
    let input = dir.path().join("raw.jsonl");
    let lines = [record_line("a", "C", 0), record_line("b", "C", 0), record_line("a", "C", 1)];
    std::fs::write(&input, lines.join("\n")).unwrap();
    let o = run(&["ingest", "--in", p(&input), "--out", p(&dir.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("lines 1 and 3"), "{}", stderr(&o));

    let lines = [record_line("a", "C", 0), "{oops".to_string(), record_line("c", "C", 0).replace("@@ -1,2", "@@ -x")];
    std::fs::write(&input, lines.join("\n")).unwrap();
    let o = run(&["ingest", "--in", p(&input), "--out", p(&dir.path().join("o.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    let err = stderr(&o);
    assert!(err.contains("line 2:") && err.contains("line 3:"), "{err}");
    assert!(!dir.path().join("o.jsonl").exists());
}

#[test]
fn usage_errors_exit_2() {
    assert_eq!(run(&["predict", "--bogus"]).status.code(), Some(2));
    assert_eq!(run(&["frobnicate"]).status.code(), Some(2));
    assert_eq!(run(&["train", "--task", "classify"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--dataset", "d", "--archs", "lstm", "--variants", "nope"]).status.code(), Some(2));
    assert_eq!(run(&["eval", "--dataset", "d", "--archs", "cnn"]).status.code(), Some(2));
    assert_eq!(run(&["--help"]).status.code(), Some(0));
}

#[test]
fn train_writes_checkpoint_vocab_and_history_deterministically() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    write_dataset(&synthetic_corpus(40, 4, 9), &dataset).unwrap();
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"hidden_dim": 8, "embed_dim": 8, "num_heads": 1, "seq_len": 32, "max_epochs": 3}"#).unwrap();
    let train = |out: &Path| {
        ok(&[
            "train", "--dataset", p(&dataset), "--task", "classify", "--arch", "lstm",
            "--variant", "message-only", "--config", p(&config), "--seed", "7", "--out", p(out),
        ])
    };
    let a = dir.path().join("a").join("m.ckpt");
    let b = dir.path().join("b").join("m.ckpt");
    train(&a);
    train(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(std::fs::read(a.with_file_name("vocab.txt")).unwrap(), std::fs::read(b.with_file_name("vocab.txt")).unwrap());
    let history = std::fs::read_to_string(a.with_file_name("m.history.csv")).unwrap();
    let mut lines = history.lines();
    assert_eq!(lines.next(), Some("epoch,train_loss,val_loss,seconds"));
    assert_eq!(lines.count(), 3);

    let mismatched = run(&[
        "train", "--dataset", p(&dataset), "--task", "classify", "--arch", "seq2seq", "--out", p(&a),
    ]);
    assert_eq!(mismatched.status.code(), Some(1));
    let no_aspect = run(&["train", "--dataset", p(&dataset), "--task", "generate", "--arch", "seq2seq", "--out", p(&a)]);
    assert_eq!(no_aspect.status.code(), Some(1));
    let bad_config = dir.path().join("bad.json");
    std::fs::write(&bad_config, r#"{"hiden_dim": 8}"#).unwrap();
    let o = run(&["train", "--dataset", p(&dataset), "--task", "classify", "--arch", "lstm", "--config", p(&bad_config), "--out", p(&a)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("hiden_dim"));
}

fn predict(message: &str, diff: &str, with_generators: bool) -> Value {
    let t = toy();
    let dir = tempfile::tempdir().unwrap();
    let (m, d) = (dir.path().join("msg"), dir.path().join("diff"));
    std::fs::write(&m, message).unwrap();
    std::fs::write(&d, diff).unwrap();
    let mut args = vec!["predict", "--checkpoint", p(&t.checkpoint), "--message-file", p(&m), "--diff-file", p(&d)];
    if with_generators {
        args.extend(["--generators", p(&t.generators)]);
    }
    serde_json::from_str(&ok(&args)).unwrap()
}

#[test]
fn predict_reproduces_training_record() {
    let t = toy();
    let r = &t.records[0];
    assert!(r.label.is_positive());
    let out = predict(&r.message, &r.diff, true);
    let keys: Vec<&String> = out.as_object().unwrap().keys().collect();
    assert_eq!(keys, ["aspects", "explanation", "label", "probability"]);
    assert_eq!(out["label"], 1);
    assert!(out["probability"].as_f64().unwrap() >= 0.5);
    for aspect in Aspect::ALL {
        assert_eq!(out["aspects"][aspect.name()].as_str(), r.aspect(aspect).map(normalize).as_deref());
    }
    assert!(out["explanation"].as_str().unwrap().starts_with("This is patching for"));

    let neg = t.records.iter().find(|r| !r.label.is_positive()).unwrap();
    let out = predict(&neg.message, &neg.diff, true);
    assert_eq!(out["label"], 0);
    assert_eq!(out["explanation"], Value::Null);
}

#[test]
fn predict_handles_empty_input_and_missing_files() {
    let out = predict("", "", false);
    let p0 = out["probability"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&p0));
    assert!(out["aspects"].as_object().unwrap().is_empty());

    let o = run(&["predict", "--checkpoint", "/nonexistent/m.ckpt", "--message-file", "x", "--diff-file", "y"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("does not exist"));
}

#[test]
fn eval_is_deterministic_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    ok(&["synth", "--records", "60", "--repos", "6", "--seed", "4", "--out", p(&dataset)]);
    let config = dir.path().join("c.json");
    std::fs::write(&config, r#"{"hidden_dim": 8, "embed_dim": 8, "num_heads": 1, "seq_len": 32, "max_epochs": 2, "learning_rate": 0.001}"#).unwrap();
    let eval = |out: &Path| {
        ok(&[
            "eval", "--dataset", p(&dataset), "--k", "3", "--archs", "lstm,transformer",
            "--variants", "message-only,changed-code-only", "--config", p(&config), "--out", p(out),
        ])
    };
    let (a, b) = (dir.path().join("a.csv"), dir.path().join("b.csv"));
    let table = eval(&a);
    eval(&b);
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert!(table.contains("message-only") && table.contains("changed-code-only"), "{table}");

    let report = EvalReport::read_csv(std::fs::File::open(&a).unwrap()).unwrap();
    assert_eq!(report.cells.len(), 4);
    assert!(report.cells.values().all(|c| c.folds.len() == 3));
    assert_eq!(report.to_csv_string().unwrap(), std::fs::read_to_string(&a).unwrap());
}

#[test]
fn eval_fails_with_too_few_repositories() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("d.jsonl");
    ok(&["synth", "--records", "20", "--repos", "2", "--out", p(&dataset)]);
    let o = run(&["eval", "--dataset", p(&dataset), "--k", "5", "--archs", "lstm"]);
    assert_eq!(o.status.code(), Some(1));
}

#[cfg(unix)]
#[test]
fn serve_round_trip_flushes_and_restarts() {
    let t = toy();
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("store.jsonl");
    let args = ["--checkpoint", p(&t.checkpoint), "--generators", p(&t.generators), "--store", p(&store)];

    let server = Server::start(&args);
    assert_eq!(server.get("/health"), (200, json!({"status": "ok", "model_loaded": true})));
    let r = &t.records[1];
    let (status, alert) = server.post("/v1/predict", &json!({"message": r.message, "diff": r.diff, "repo": r.repo}));
    assert_eq!(status, 200, "{alert}");
    assert_eq!(alert["label"], 1);
    let id = alert["alert_id"].as_str().unwrap().to_string();
    let (_, queue) = server.get("/v1/queue");
    assert_eq!(queue[0]["alert_id"], id.as_str());
    let verdict = json!({"alert_id": id, "verdict": "true_positive", "difficulty": 3, "usefulness": {"impact": 4}, "elapsed_ms": 1500});
    assert_eq!(server.post("/v1/verdict", &verdict).0, 200);
    let (_, stats) = server.get("/v1/stats");
    assert_eq!(stats["judged"], 1);
    assert!(server.stop(), "graceful shutdown should exit 0");
    assert_eq!(line_count(&store), 2);

    let again = Server::start(&args);
    let (_, stats_after) = again.get("/v1/stats");
    assert_eq!(stats_after, stats);
    assert_eq!(again.post("/v1/verdict", &verdict).0, 409);
    assert!(again.stop());
}

#[cfg(unix)]
#[test]
fn serve_without_model_and_busy_port() {
    let dir = tempfile::tempdir().unwrap();
    let store = dir.path().join("s.jsonl");
    let server = Server::start(&["--store", p(&store)]);
    assert_eq!(server.get("/health").1["model_loaded"], false);
    assert_eq!(server.post("/v1/predict", &json!({"message": "m", "diff": ""})).0, 503);

    let port = server.addr.port().to_string();
    let o = run(&["serve", "--port", &port, "--store", p(&dir.path().join("other.jsonl"))]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("cannot listen"), "{}", stderr(&o));
    assert!(stdout(&o).is_empty());
    assert!(server.stop());
}
