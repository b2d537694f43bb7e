use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use serde_json::Value;

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_ie-forge"))
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().unwrap()
}

fn stats_fixture() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/stats_fixture.jsonl")
}

fn json(path: &Path) -> Value {
    serde_json::from_str(&fs::read_to_string(path).unwrap()).unwrap()
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

#[test]
fn generate_mock_writes_all_files_and_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a");
    let b = dir.path().join("b");
    for (out, jobs) in [(&a, "4"), (&b, "1")] {
        let o = run(&["generate", "--mock", "--seed", "7", "--iterations", "2", "--out", p(out), "--jobs", jobs]);
        assert!(o.status.success(), "{}", stderr(&o));
        assert!(stdout(&o).contains("survivors:"));
    }
    for f in [
        "step_01_instructions.jsonl",
        "step_02_texts.jsonl",
        "step_03_open.jsonl",
        "step_04_paraphrased.jsonl",
        "step_05_raw.jsonl",
        "survivors.jsonl",
        "report.json",
        "injections.json",
    ] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }
    let report = json(&a.join("report.json"));
    assert_eq!(report["seed"], 7);
    assert_eq!(report["completed_steps"], 5);
}

#[test]
fn usage_errors_exit_with_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("o");
    let cases: [&[&str]; 5] = [
        &["generate", "--mock", "--iterations", "1", "--out", p(&out)],
        &["generate", "--mock", "--remote", "--seed", "1", "--out", p(&out)],
        &["generate", "--seed", "1", "--out", p(&out)],
        &["no-such-command"],
        &["stats"],
    ];
    for args in cases {
        let o = run(args);
        assert_eq!(o.status.code(), Some(2), "{args:?}: {}", stderr(&o));
    }
    let o = run(&["generate", "--mock", "--out", p(&out)]);
    assert!(stderr(&o).contains("\"kind\":\"usage\""));
}

#[test]
fn domain_errors_exit_with_1_and_a_structured_message() {
    let o = run(&["stats", "--data", "/nonexistent/file.jsonl"]);
    assert_eq!(o.status.code(), Some(1));
    let line = stderr(&o).lines().find(|l| l.starts_with('{')).unwrap().to_string();
    let v: Value = serde_json::from_str(&line).unwrap();
    assert_eq!(v["error"]["kind"], "dataset");
}

#[test]
fn config_file_supplies_values_and_flags_win() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("run.toml");
    let out = dir.path().join("out");
    fs::write(
        &cfg,
        format!(
            "jobs = 2\n[generate]\nmock = true\nseed = 3\niterations = 3\ncot = false\nout = {:?}\nfaithfulness_threshold = 0.25\n",
            p(&out)
        ),
    )
    .unwrap();
    let o = run(&["--config", p(&cfg), "generate", "--iterations", "1"]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&out.join("report.json"));
    assert_eq!(report["seed"], 3);
    assert_eq!(report["instructions"]["iterations"], 1);
    assert!(report["tables"].get("cot").is_none());
    let run_config = json(&out.join("run_config.json"));
    assert_eq!(run_config["thresholds"]["faithfulness_threshold"], 0.25);

    fs::write(&cfg, "[generate]\nbogus = 1\n").unwrap();
    let o = run(&["--config", p(&cfg), "generate", "--mock", "--seed", "1"]);
    assert_eq!(o.status.code(), Some(2));
}

#[test]
fn filter_and_format_on_generated_data() {
    let dir = tempfile::tempdir().unwrap();
    let gen = dir.path().join("gen");
    let o = run(&[
        "generate",
        "--mock",
        "--seed",
        "7",
        "--iterations",
        "2",
        "--out",
        p(&gen),
        "--defect-malformed-table",
        "0.3",
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let injected = json(&gen.join("injections.json"))["malformed_table"].as_u64().unwrap();

    let refilter = dir.path().join("refilter");
    let o = run(&["filter", "--input", p(&gen.join("step_05_raw.jsonl")), "--out", p(&refilter)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&refilter.join("filter_report.json"));
    assert_eq!(report["rejected_validity"].as_u64().unwrap(), injected);
    assert_eq!(fs::read(refilter.join("survivors.jsonl")).unwrap(), fs::read(gen.join("survivors.jsonl")).unwrap());

    let again = dir.path().join("again");
    let o = run(&["filter", "--input", p(&gen.join("survivors.jsonl")), "--format", "instances", "--out", p(&again)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let report = json(&again.join("filter_report.json"));
    assert_eq!(report["survivors"], report["raw_count"]);

    let formatted = dir.path().join("train.jsonl");
    let o = run(&["format", "--data", p(&gen.join("survivors.jsonl")), "--out", p(&formatted)]);
    assert!(o.status.success(), "{}", stderr(&o));
    let lines = fs::read_to_string(&formatted).unwrap();
    let first: Value = serde_json::from_str(lines.lines().next().unwrap()).unwrap();
    assert!(first["sequence"].as_str().unwrap().starts_with("<|system|>\n"));
    let fr = json(&dir.path().join("train.report.json"));
    assert_eq!(fr["examples"].as_u64().unwrap() as usize, lines.lines().count());
}

#[test]
fn evaluate_stats_and_correlate() {
    let dir = tempfile::tempdir().unwrap();
    let gold = stats_fixture();
    let o = run(&["stats", "--data", p(&gold), "--report", p(&dir.path().join("stats.json"))]);
    assert!(o.status.success());
    assert!(stdout(&o).contains("# Instruction"));
    assert_eq!(json(&dir.path().join("stats.json"))["counts"]["domains"], 13);

    // Predictions: the gold table itself for most instances, prose for one.
    let mut preds = String::new();
    let mut ratings = String::new();
    for (i, line) in fs::read_to_string(&gold).unwrap().lines().enumerate() {
        let v: Value = serde_json::from_str(line).unwrap();
        let id = v["id"].as_str().unwrap();
        let Some(table) = v["table"].as_str() else { continue };
        let output = if i == 3 { "no idea".to_string() } else { table.to_string() };
        preds.push_str(&serde_json::json!({"id": id, "output": output}).to_string());
        preds.push('\n');
        let (h, c) = if i == 3 {
            ("C", "D")
        } else if i % 2 == 0 {
            ("A", "A")
        } else {
            ("A", "B")
        };
        for annotator in ["r1", "r2"] {
            ratings.push_str(
                &serde_json::json!({"instance_id": id, "annotator_id": annotator, "header_rating": h, "content_rating": c})
                    .to_string(),
            );
            ratings.push('\n');
        }
    }
    // The instance without a gold table is left out of the gold file.
    let gold_with_tables: String = fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"table\""))
        .map(|l| format!("{l}\n"))
        .collect();
    let gold_path = dir.path().join("gold.jsonl");
    fs::write(&gold_path, gold_with_tables).unwrap();
    let pred_path = dir.path().join("pred.jsonl");
    fs::write(&pred_path, preds).unwrap();
    let per_instance = dir.path().join("evals.jsonl");
    let o = run(&[
        "evaluate",
        "--pred",
        p(&pred_path),
        "--gold",
        p(&gold_path),
        "--embedder",
        "fallback",
        "--per-instance",
        p(&per_instance),
    ]);
    assert!(o.status.success(), "{}", stderr(&o));
    let text = stdout(&o);
    for g in ["easy", "medium", "hard", "fixed", "open", "generate", "retrieve", "overall"] {
        assert!(text.contains(g), "{g}");
    }
    let report = json(&dir.path().join("pred.eval.json"));
    assert_eq!(report["invalid_predictions"].as_array().unwrap().len(), 1);

    let ratings_path = dir.path().join("ratings.jsonl");
    fs::write(&ratings_path, ratings).unwrap();
    let corr = dir.path().join("corr.json");
    let o = run(&["correlate", "--evals", p(&per_instance), "--ratings", p(&ratings_path), "--report", p(&corr)]);
    assert!(o.status.success(), "{}", stderr(&o));
    assert!(stdout(&o).contains("fleiss kappa (header)"));
    let c = json(&corr);
    assert_eq!(c["correlation"]["metrics"].as_array().unwrap().len(), 5);
    assert_eq!(c["fleiss_kappa"]["header"], 1.0);
}

#[test]
fn evaluate_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let gold = stats_fixture();
    let gold_path = dir.path().join("gold.jsonl");
    let kept: String = fs::read_to_string(&gold)
        .unwrap()
        .lines()
        .filter(|l| l.contains("\"table\""))
        .map(|l| format!("{l}\n"))
        .collect();
    fs::write(&gold_path, kept).unwrap();
    let pred_path = dir.path().join("pred.jsonl");
    fs::write(&pred_path, "{\"id\":\"fx01\",\"output\":\"| H1 | H9 |\\n|---|---|\\n| v11 | x |\"}\n").unwrap();
    let mut reports = Vec::new();
    for name in ["r1.json", "r2.json"] {
        let path = dir.path().join(name);
        let o = run(&["evaluate", "--pred", p(&pred_path), "--gold", p(&gold_path), "--report", p(&path)]);
        assert!(o.status.success(), "{}", stderr(&o));
        reports.push(fs::read(path).unwrap());
    }
    assert_eq!(reports[0], reports[1]);
}

#[test]
fn scorer_check_reports_unreachable_service() {
    let listener = std::net::TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    drop(listener);
    let dir = tempfile::tempdir().unwrap();
    let report = dir.path().join("check.json");
    let o = run(&["scorer-check", "--url", &url, "--report", p(&report)]);
    assert_eq!(o.status.code(), Some(1));
    assert!(stdout(&o).contains("FAIL health"));
    assert_eq!(json(&report)["failed"], 4);
}
