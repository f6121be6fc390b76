//! End-to-end runs of the binary: artifact round trips, determinism, and
//! exit codes.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use topicpath_core::taxonomy::fixture_taxonomy;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_topicpath"))
}

fn run_ok(args: &[&str]) -> Output {
    let out = bin().args(args).output().expect("binary runs");
    assert!(
        out.status.success(),
        "command {:?} failed:\n{}",
        args,
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_taxonomy(dir: &Path) -> PathBuf {
    let path = dir.join("taxonomy.json");
    std::fs::write(&path, fixture_taxonomy().to_json()).unwrap();
    path
}

struct Pipeline {
    dir: tempfile::TempDir,
    taxonomy: PathBuf,
    corpus: PathBuf,
    graph: PathBuf,
    run_dir: PathBuf,
}

/// gen-corpus + build-graph + a one-epoch training run on a micro model.
fn pipeline() -> Pipeline {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = write_taxonomy(dir.path());
    let corpus = dir.path().join("corpus.jsonl");
    run_ok(&[
        "gen-corpus",
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--seed",
        "3",
        "--size",
        "24",
        "--doc-len",
        "12",
    ]);
    let graph = dir.path().join("graph.json");
    run_ok(&[
        "build-graph",
        "--corpus",
        corpus.to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--out",
        graph.to_str().unwrap(),
    ]);
    let mcfg = dir.path().join("mcfg.json");
    std::fs::write(
        &mcfg,
        r#"{"hidden": 8, "sie_layers": 1, "if_layers": 1, "heads": 2, "doc_len": 12, "dropout": 0.0}"#,
    )
    .unwrap();
    let tcfg = dir.path().join("tcfg.json");
    std::fs::write(&tcfg, r#"{"epochs": 1, "eval_every": 1, "batch_size": 8}"#).unwrap();
    let run_dir = dir.path().join("run");
    run_ok(&[
        "train",
        "--corpus",
        corpus.to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--graph",
        graph.to_str().unwrap(),
        "--model-config",
        mcfg.to_str().unwrap(),
        "--train-config",
        tcfg.to_str().unwrap(),
        "--out-dir",
        run_dir.to_str().unwrap(),
    ]);
    Pipeline {
        dir,
        taxonomy,
        corpus,
        graph,
        run_dir,
    }
}

#[test]
fn gen_corpus_is_deterministic_and_summarized() {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = write_taxonomy(dir.path());
    let out_a = dir.path().join("a.jsonl");
    let out_b = dir.path().join("b.jsonl");
    let args = |out: &Path| {
        vec![
            "gen-corpus".to_string(),
            "--taxonomy".into(),
            taxonomy.display().to_string(),
            "--out".into(),
            out.display().to_string(),
            "--seed".into(),
            "11".into(),
            "--size".into(),
            "50".into(),
            "--interdisciplinary-rate".into(),
            "0.3".into(),
        ]
    };
    let first = bin().args(args(&out_a)).output().unwrap();
    assert!(first.status.success());
    let stdout = String::from_utf8_lossy(&first.stdout);
    assert!(stdout.contains("50 proposals"), "{stdout}");
    assert!(stdout.contains("15 interdisciplinary"), "{stdout}");
    run_ok(&args(&out_b).iter().map(String::as_str).collect::<Vec<_>>());
    assert_eq!(
        std::fs::read(&out_a).unwrap(),
        std::fs::read(&out_b).unwrap(),
        "same seed must produce identical bytes"
    );
    assert!(dir.path().join("a.jsonl.manifest.json").exists());
}

#[test]
fn gen_corpus_size_zero_writes_empty_file() {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = write_taxonomy(dir.path());
    let out = dir.path().join("empty.jsonl");
    run_ok(&[
        "gen-corpus",
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--size",
        "0",
    ]);
    assert_eq!(std::fs::read_to_string(&out).unwrap(), "");
}

#[test]
fn degenerate_exponents_make_unit_weight_graph() {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = write_taxonomy(dir.path());
    let corpus = dir.path().join("corpus.jsonl");
    run_ok(&[
        "gen-corpus",
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--out",
        corpus.to_str().unwrap(),
        "--size",
        "20",
    ]);
    let graph = dir.path().join("graph.json");
    run_ok(&[
        "build-graph",
        "--corpus",
        corpus.to_str().unwrap(),
        "--taxonomy",
        taxonomy.to_str().unwrap(),
        "--alpha",
        "0",
        "--beta",
        "0",
        "--out",
        graph.to_str().unwrap(),
    ]);
    let parsed: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&graph).unwrap()).unwrap();
    let edges = parsed["edges"].as_array().unwrap();
    assert!(!edges.is_empty());
    for e in edges {
        assert_eq!(e["w"].as_f64().unwrap(), 1.0);
    }
}

#[test]
fn exit_codes_by_failure_class() {
    let dir = tempfile::tempdir().unwrap();
    let taxonomy = write_taxonomy(dir.path());

    // missing input file: I/O, exit 1
    let out = bin()
        .args([
            "build-graph",
            "--corpus",
            dir.path().join("absent.jsonl").to_str().unwrap(),
            "--taxonomy",
            taxonomy.to_str().unwrap(),
            "--out",
            dir.path().join("g.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(1));

    // invalid config: usage, exit 2
    let out = bin()
        .args([
            "gen-corpus",
            "--taxonomy",
            taxonomy.to_str().unwrap(),
            "--out",
            dir.path().join("c.jsonl").to_str().unwrap(),
            "--interdisciplinary-rate",
            "1.5",
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));

    // unknown flag: clap usage error, exit 2
    let out = bin().args(["gen-corpus", "--bogus"]).output().unwrap();
    assert_eq!(out.status.code(), Some(2));

    // malformed data: exit 3
    let bad = dir.path().join("bad.jsonl");
    std::fs::write(&bad, "{\"id\": \"x\"}\n").unwrap();
    let out = bin()
        .args([
            "build-graph",
            "--corpus",
            bad.to_str().unwrap(),
            "--taxonomy",
            taxonomy.to_str().unwrap(),
            "--out",
            dir.path().join("g.json").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn predict_given_full_depth_prefix_echoes_it() {
    let p = pipeline();
    let preds = p.dir.path().join("preds.jsonl");
    run_ok(&[
        "predict",
        "--ckpt",
        p.run_dir.to_str().unwrap(),
        "--input",
        p.corpus.to_str().unwrap(),
        "--given",
        "C010101,F030302",
        "--out",
        preds.to_str().unwrap(),
    ]);
    for line in std::fs::read_to_string(&preds).unwrap().lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let path = v["path"].as_array().unwrap();
        assert_eq!(path.len(), 4);
        assert_eq!(path[0].as_array().unwrap().len(), 2); // C and F
        let last: Vec<&str> = path[3]
            .as_array()
            .unwrap()
            .iter()
            .map(|s| s.as_str().unwrap())
            .collect();
        assert!(last.contains(&"<stop>"));
        assert!(last.contains(&"C010101"));
        assert!(last.contains(&"F030302"));
        // no model calls for covered levels
        assert!(v["probs"].as_array().unwrap().is_empty());
    }
}

#[test]
fn predict_rejects_unknown_given_code_with_exit_3() {
    let p = pipeline();
    let out = bin()
        .args([
            "predict",
            "--ckpt",
            p.run_dir.to_str().unwrap(),
            "--input",
            p.corpus.to_str().unwrap(),
            "--given",
            "Z99",
            "--out",
            p.dir.path().join("x.jsonl").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(3));
    let stderr = String::from_utf8_lossy(&out.stderr);
    assert!(stderr.contains("Z99"), "{stderr}");
}

#[test]
fn evaluate_perfect_predictions_scores_one() {
    let p = pipeline();
    // fabricate predictions equal to the truth paths
    let taxonomy = fixture_taxonomy();
    let corpus = topicpath_core::corpus::read_corpus(&p.corpus).unwrap();
    let preds = p.dir.path().join("perfect.jsonl");
    let mut lines = String::new();
    for proposal in &corpus {
        let path =
            topicpath_core::taxonomy::encode_topic_path(&proposal.labels, &taxonomy).unwrap();
        let line = serde_json::json!({
            "id": proposal.id,
            "path": path.to_code_sets(&taxonomy),
            "probs": [],
        });
        lines.push_str(&line.to_string());
        lines.push('\n');
    }
    std::fs::write(&preds, lines).unwrap();

    let report_path = p.dir.path().join("report.json");
    let out = run_ok(&[
        "evaluate",
        "--preds",
        preds.to_str().unwrap(),
        "--truth",
        p.corpus.to_str().unwrap(),
        "--taxonomy",
        p.taxonomy.to_str().unwrap(),
        "--out",
        report_path.to_str().unwrap(),
    ]);
    let stdout = String::from_utf8_lossy(&out.stdout);
    assert!(stdout.contains("micro_f1=1.0000"), "{stdout}");

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    assert_eq!(report["f1"]["micro_f1"].as_f64().unwrap(), 1.0);
    assert_eq!(report["f1"]["macro_f1"].as_f64().unwrap(), 1.0);
    assert_eq!(report["wrong_cases"]["mismatch_total"].as_u64().unwrap(), 0);
    assert_eq!(
        report["distance"]["penalties"],
        serde_json::json!([1, 10, 30, 50])
    );
    assert!(p.dir.path().join("report.csv").exists());
    assert!(p.dir.path().join("report.json.manifest.json").exists());
    let _ = &p.graph;
}

#[test]
fn predict_output_preserves_input_order() {
    let p = pipeline();
    let preds = p.dir.path().join("ordered.jsonl");
    run_ok(&[
        "predict",
        "--ckpt",
        p.run_dir.to_str().unwrap(),
        "--input",
        p.corpus.to_str().unwrap(),
        "--out",
        preds.to_str().unwrap(),
    ]);
    let input_ids: Vec<String> = std::fs::read_to_string(&p.corpus)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    let output_ids: Vec<String> = std::fs::read_to_string(&preds)
        .unwrap()
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["id"]
            .as_str()
            .unwrap()
            .to_string())
        .collect();
    assert_eq!(input_ids, output_ids);
}
