//! End-to-end runs of the `structriage` binary.

use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_structriage"))
}

fn fixture(name: &str) -> PathBuf {
    Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/fixtures")).join(name)
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).to_string()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).to_string()
}

#[test]
fn ingest_html_reports_structure_summary() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("report.tree.json");
    let output = bin()
        .args(["ingest", fixture("report.html").to_str().unwrap(), "--format", "html", "--out"])
        .arg(&out)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let line = stdout(&output);
    assert!(
        line.contains("3 sections, 1 table, 0 figures, 3 pages"),
        "unexpected summary: {line}"
    );
    // The emitted tree loads back as a valid document.
    let raw = std::fs::read_to_string(&out).unwrap();
    let tree: structriage::doc_model::StructureNode = serde_json::from_str(&raw).unwrap();
    structriage::doc_model::build_index(tree).unwrap();
}

#[test]
fn ingest_missing_file_is_a_runtime_error() {
    let output = bin()
        .args(["ingest", "/nonexistent/input.html", "--format", "html"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).starts_with("error:"), "{}", stderr(&output));
}

#[test]
fn ingest_pdf_without_extractor_is_a_usage_error() {
    let output = bin()
        .args(["ingest", fixture("report.html").to_str().unwrap(), "--format", "pdf"])
        .env_remove("STRUCTRIAGE_EXTRACT_URL")
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(
        stderr(&output).contains("unsupported format"),
        "{}",
        stderr(&output)
    );
}

#[test]
fn ingest_unknown_format_is_a_usage_error() {
    let output = bin()
        .args(["ingest", fixture("report.html").to_str().unwrap(), "--format", "docx"])
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("unknown format"), "{}", stderr(&output));
}

fn scripted(name: &str) -> String {
    format!("scripted:{}", fixture(name).display())
}

#[test]
fn ask_with_scripted_provider_prints_the_answer() {
    let output = bin()
        .args([
            "ask",
            fixture("minidoc.json").to_str().unwrap(),
            "--question",
            "What regions are listed in Table 1?",
            "--provider",
            &scripted("scripted_ask.json"),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert_eq!(
        stdout(&output).trim(),
        "Table 1 lists the North and South regions."
    );
}

#[test]
fn ask_trace_emits_a_full_record() {
    let output = bin()
        .args([
            "ask",
            fixture("minidoc.json").to_str().unwrap(),
            "--question",
            "What regions are listed in Table 1?",
            "--trace",
            "--provider",
            &scripted("scripted_ask.json"),
        ])
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    let record: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(record["strategy"], "pdf_triage");
    assert_eq!(record["turns_used"], 2);
    assert_eq!(record["turn_limit_exceeded"], false);
    let trace = record["trace"].as_array().unwrap();
    assert_eq!(trace.len(), 1);
    assert_eq!(trace[0]["ok"], true);
    assert_eq!(trace[0]["sources"][0], "table tbl-1");
    assert_eq!(record["retrieved_tokens"], trace[0]["token_count"]);
}

#[test]
fn eval_report_pipeline_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.jsonl");

    let output = bin()
        .args([
            "eval",
            fixture("demo_corpus").to_str().unwrap(),
            fixture("demo_dataset.jsonl").to_str().unwrap(),
            "--provider",
            &scripted("scripted_eval.json"),
            "--workers",
            "1",
            "--out",
        ])
        .arg(&run)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));
    assert!(stdout(&output).contains("6 records"), "{}", stdout(&output));

    let raw = std::fs::read_to_string(&run).unwrap();
    let records: Vec<serde_json::Value> = raw
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 6);
    for record in &records {
        assert_eq!(record["turn_limit_exceeded"], false);
        assert!(!record["answer"].as_str().unwrap().is_empty());
    }

    let report_path = dir.path().join("report.json");
    let csv_path = dir.path().join("report.csv");
    let output = bin()
        .args([
            "report",
            run.to_str().unwrap(),
            "--annotations",
            fixture("annotations.csv").to_str().unwrap(),
            "--dataset",
            fixture("demo_dataset.jsonl").to_str().unwrap(),
            "--out",
        ])
        .arg(&report_path)
        .arg("--csv")
        .arg(&csv_path)
        .output()
        .unwrap();
    assert!(output.status.success(), "{}", stderr(&output));

    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(&report_path).unwrap()).unwrap();
    let per_strategy = report["per_strategy"].as_object().unwrap();
    assert_eq!(per_strategy.len(), 3);
    for stats in per_strategy.values() {
        assert_eq!(stats["records"], 2);
    }
    // Mean retrieved tokens must match a recount from the run records.
    for (strategy, stats) in per_strategy {
        let tokens: Vec<f64> = records
            .iter()
            .filter(|r| r["strategy"] == strategy.as_str())
            .map(|r| r["retrieved_tokens"].as_f64().unwrap())
            .collect();
        let mean = tokens.iter().sum::<f64>() / tokens.len() as f64;
        let reported = stats["mean_retrieved_tokens"].as_f64().unwrap();
        assert!((reported - mean).abs() < 1e-9, "{strategy}: {reported} vs {mean}");
    }
    let csv = std::fs::read_to_string(&csv_path).unwrap();
    assert!(csv.lines().count() >= 4, "{csv}");
}

#[test]
fn report_names_the_corrupt_line() {
    let dir = tempfile::tempdir().unwrap();
    let run = dir.path().join("run.jsonl");
    std::fs::write(
        &run,
        "{\"question_id\":\"q1\",\"question\":\"q\",\"strategy\":\"pdf_triage\",\"answer\":\"a\",\"trace\":[],\"retrieved_tokens\":0,\"turns_used\":1,\"turn_limit_exceeded\":false}\nnot json at all\n",
    )
    .unwrap();
    let output = bin().args(["report", run.to_str().unwrap()]).output().unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("line 2"), "{}", stderr(&output));
}

#[test]
fn eval_rejects_questions_about_unknown_documents() {
    let dir = tempfile::tempdir().unwrap();
    let dataset = dir.path().join("dataset.jsonl");
    std::fs::write(
        &dataset,
        "{\"id\":\"q1\",\"document_id\":\"missing-doc\",\"text\":\"Anything?\",\"category\":\"summarization\"}\n",
    )
    .unwrap();
    let run = dir.path().join("run.jsonl");
    let output = bin()
        .args([
            "eval",
            fixture("demo_corpus").to_str().unwrap(),
            dataset.to_str().unwrap(),
            "--provider",
            &scripted("scripted_eval.json"),
            "--out",
        ])
        .arg(&run)
        .output()
        .unwrap();
    assert_eq!(output.status.code(), Some(1));
    assert!(stderr(&output).contains("missing-doc"), "{}", stderr(&output));
}
