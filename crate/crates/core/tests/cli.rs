//! End-to-end checks of the `cqr` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use cqr::inference::SelectionRecord;
use cqr::jsonl::read_jsonl;
use cqr::CandidatePool;

fn cqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cqr")).args(args).output().expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = cqr(args);
    assert!(out.status.success(), "cqr {args:?} failed:\n{}", String::from_utf8_lossy(&out.stderr));
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// A small synthetic benchmark plus generated candidates and assessments.
struct Workspace {
    _tmp: tempfile::TempDir,
    dir: PathBuf,
}

impl Workspace {
    fn new() -> Self {
        let tmp = tempfile::tempdir().unwrap();
        let dir = tmp.path().to_path_buf();
        ok(&["synthesize", "--out", s(&dir), "--entities", "30", "--sessions", "24", "--train-sessions", "16"]);
        let p = |f: &str| dir.join(f);
        ok(&[
            "generate",
            "--sessions",
            s(&p("sessions_train.jsonl")),
            "--fixtures",
            s(&p("fixtures.jsonl")),
            "--out",
            s(&p("candidates.jsonl")),
        ]);
        ok(&[
            "assess",
            "--candidates",
            s(&p("candidates.jsonl")),
            "--qrels",
            s(&p("qrels.txt")),
            "--passages",
            s(&p("passages.tsv")),
            "--out",
            s(&p("assessments.jsonl")),
        ]);
        Self { _tmp: tmp, dir }
    }

    fn path(&self, f: &str) -> PathBuf {
        self.dir.join(f)
    }
}

#[test]
fn eval_prints_report_for_hand_built_run() {
    let tmp = tempfile::tempdir().unwrap();
    let run = tmp.path().join("r.trec");
    let qrels = tmp.path().join("q.txt");
    fs::write(&run, "a Q0 x1 1 3 t\na Q0 x2 2 2 t\na Q0 g 3 1 t\nb Q0 y 1 3 t\nb Q0 x 2 2 t\nb Q0 z 3 1 t\n").unwrap();
    fs::write(&qrels, "a 0 g 1\nb 0 x 2\nb 0 y 1\n").unwrap();
    let out = ok(&["eval", "--run", s(&run), "--qrels", s(&qrels)]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let per_query = report["per_query"].as_array().unwrap();
    assert_eq!(per_query[0]["ndcg"].as_f64().unwrap(), 0.5);
    assert_eq!(format!("{:.4}", per_query[1]["ndcg"].as_f64().unwrap()), "0.8597");
    assert!((per_query[0]["mrr"].as_f64().unwrap() - 1.0 / 3.0).abs() < 1e-12);
    assert_eq!(per_query[1]["mrr"].as_f64().unwrap(), 1.0);
    assert_eq!(report["query_count"], 2);

    let cut = ok(&["eval", "--run", s(&run), "--qrels", s(&qrels), "--mrr-cutoff", "2"]);
    let report: serde_json::Value = serde_json::from_slice(&cut.stdout).unwrap();
    assert_eq!(report["per_query"][0]["mrr"].as_f64().unwrap(), 0.0);
}

#[test]
fn train_is_bitwise_reproducible() {
    let ws = Workspace::new();
    let train = |out: &str| {
        ok(&[
            "train",
            "--assessments",
            s(&ws.path("assessments.jsonl")),
            "--sessions",
            s(&ws.path("sessions_train.jsonl")),
            "--out",
            s(&ws.path(out)),
            "--seed",
            "7",
            "--epochs",
            "2",
        ]);
        fs::read(ws.path(out)).unwrap()
    };
    let a = train("a.bin");
    assert!(!a.is_empty());
    assert_eq!(a, train("b.bin"));
}

#[test]
fn select_oracle_with_budget_one_picks_first_candidate() {
    let ws = Workspace::new();
    ok(&[
        "select",
        "--candidates",
        s(&ws.path("candidates.jsonl")),
        "--sessions",
        s(&ws.path("sessions_train.jsonl")),
        "--assessments",
        s(&ws.path("assessments.jsonl")),
        "--strategy",
        "oracle",
        "--budget",
        "1",
        "--out",
        s(&ws.path("sel.jsonl")),
    ]);
    let records: Vec<SelectionRecord> = read_jsonl(&ws.path("sel.jsonl")).unwrap();
    assert_eq!(records.len(), 16);
    assert!(records.iter().all(|r| r.chosen_index == Some(0) && r.budget == 1));
}

#[test]
fn select_writes_a_run_that_eval_accepts() {
    let ws = Workspace::new();
    ok(&[
        "train",
        "--assessments",
        s(&ws.path("assessments.jsonl")),
        "--sessions",
        s(&ws.path("sessions_train.jsonl")),
        "--out",
        s(&ws.path("model.bin")),
        "--epochs",
        "1",
    ]);
    ok(&[
        "select",
        "--candidates",
        s(&ws.path("candidates.jsonl")),
        "--sessions",
        s(&ws.path("sessions_train.jsonl")),
        "--model",
        s(&ws.path("model.bin")),
        "--strategy",
        "reward-argmax",
        "--out",
        s(&ws.path("sel.jsonl")),
        "--run-out",
        s(&ws.path("run.trec")),
        "--passages",
        s(&ws.path("passages.tsv")),
    ]);
    let out = ok(&["eval", "--run", s(&ws.path("run.trec")), "--qrels", s(&ws.path("qrels.txt"))]);
    let report: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["query_count"], 16);
    let mrr = report["mrr"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&mrr));
}

#[test]
fn generated_pools_are_contiguous_and_full() {
    let ws = Workspace::new();
    let pools: Vec<CandidatePool> = read_jsonl(&ws.path("candidates.jsonl")).unwrap();
    assert_eq!(pools.len(), 16);
    for p in &pools {
        assert_eq!(p.len(), 16);
        assert!(p.candidates().iter().enumerate().all(|(i, c)| c.candidate_index() == i));
    }
    assert_eq!(fs::read_to_string(ws.path("drops.jsonl")).unwrap(), "");
}

#[test]
fn index_and_embed_ingest_write_files() {
    let tmp = tempfile::tempdir().unwrap();
    let passages = tmp.path().join("p.tsv");
    fs::write(&passages, "d1\tthe dime was designed by sinnock\nd2\tthe penny shows lincoln\n").unwrap();
    let index = tmp.path().join("index.json");
    ok(&["index", "--passages", s(&passages), "--out", s(&index), "--k1", "1.2", "--b", "0.75"]);
    let ix: cqr::retrieval::SparseIndex = serde_json::from_slice(&fs::read(&index).unwrap()).unwrap();
    assert_eq!(ix.doc_count(), 2);
    assert_eq!(ix.params().k1, 1.2);

    let dense = tmp.path().join("v.bin");
    ok(&["embed-ingest", "--passages", s(&passages), "--out", s(&dense), "--dimension", "32"]);
    let d = cqr::retrieval::read_dense_file(&dense).unwrap();
    assert_eq!((d.len(), d.dimension()), (2, 32));

    let vectors = tmp.path().join("v.jsonl");
    fs::write(&vectors, "{\"passage_id\":\"a\",\"vector\":[1.0,0.0]}\n{\"passage_id\":\"b\",\"vector\":[0.5,0.5]}\n")
        .unwrap();
    ok(&["embed-ingest", "--vectors", s(&vectors), "--out", s(&dense)]);
    let d = cqr::retrieval::read_dense_file(&dense).unwrap();
    assert_eq!(d.ids(), ["a", "b"]);
}

#[test]
fn errors_exit_nonzero_and_name_the_problem() {
    let tmp = tempfile::tempdir().unwrap();
    let out = cqr(&["eval", "--run", "/nonexistent/r.trec", "--qrels", "q.txt"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/r.trec"));

    let out = cqr(&["eval", "--bogus"]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("--bogus"));

    let config = tmp.path().join("c.json");
    fs::write(&config, r#"{"inference":{"budgett":3}}"#).unwrap();
    let out = cqr(&["pipeline", "--config", s(&config)]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("budgett"));

    fs::write(&config, r#"{"retrieval":{"depth":0}}"#).unwrap();
    let out = cqr(&["pipeline", "--config", s(&config)]);
    assert!(String::from_utf8_lossy(&out.stderr).contains("retrieval.depth"));

    let sessions = tmp.path().join("s.jsonl");
    fs::write(&sessions, "{\"session_id\":\"x\",\"turn_index\":3,\"history\":[],\"current_query\":\"q\"}\n").unwrap();
    let out =
        cqr(&["generate", "--sessions", s(&sessions), "--out", s(&tmp.path().join("c.jsonl")), "--fixtures", "f"]);
    assert!(!out.status.success());
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("s.jsonl:1"), "{err}");

    let out = cqr(&["index", "--out", s(&tmp.path().join("i.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("passages"));
}
