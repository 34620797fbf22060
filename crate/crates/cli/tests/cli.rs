use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dae_core::persist::{write_jsonl, QuestionRecord};
use dae_core::policy::{Decision, Outcome};
use dae_core::questiongen::{Query, QuestionSet, VariedQuestion};
use dae_core::uncertainty::UncertaintyReport;
use serde_json::{json, Value};
use tempfile::TempDir;

fn root() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..")
}

fn scenario(name: &str) -> String {
    root()
        .join("scenarios")
        .join(format!("{name}.json"))
        .display()
        .to_string()
}

fn all_scenarios() -> Vec<String> {
    [
        "certain-paris",
        "crisco",
        "bruce-lee",
        "stalemate",
        "susceptible",
    ]
    .iter()
    .flat_map(|s| ["--scenario".to_string(), scenario(s)])
    .collect()
}

fn dae<S: AsRef<std::ffi::OsStr>>(args: &[S]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dae"))
        .args(args)
        .env("RUST_LOG", "error")
        .output()
        .unwrap()
}

fn ok(out: &Output) {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout: {}\nstderr: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn read(path: impl AsRef<Path>) -> String {
    std::fs::read_to_string(path.as_ref())
        .unwrap_or_else(|e| panic!("{}: {e}", path.as_ref().display()))
}

fn jsonl<T: serde::de::DeserializeOwned>(path: impl AsRef<Path>) -> Vec<T> {
    read(path)
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect()
}

/// First `n` demo records written to a fresh dataset file.
fn demo_subset(dir: &Path, ids: &[&str]) -> PathBuf {
    let text = read(root().join("data/demo.jsonl"));
    let lines: Vec<&str> = text
        .lines()
        .filter(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            ids.contains(&v["id"].as_str().unwrap())
        })
        .collect();
    assert_eq!(lines.len(), ids.len());
    let path = dir.join("dataset.jsonl");
    std::fs::write(&path, lines.join("\n") + "\n").unwrap();
    path
}

fn run_args(dataset: &Path, out: &Path, extra: &[&str]) -> Vec<String> {
    let mut args = vec![
        "run".to_string(),
        "--dataset".into(),
        dataset.display().to_string(),
        "--out-dir".into(),
        out.display().to_string(),
    ];
    args.extend(all_scenarios());
    args.extend(extra.iter().map(|s| s.to_string()));
    args
}

#[test]
fn generate_is_deterministic() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["certain-paris", "crisco", "bruce-lee"]);
    let mut outputs = Vec::new();
    for name in ["a", "b"] {
        let out = tmp.path().join(name);
        let mut args = vec![
            "generate".to_string(),
            "--dataset".into(),
            data.display().to_string(),
        ];
        args.extend([
            "--out-dir".into(),
            out.display().to_string(),
            "--parallel".into(),
            "3".into(),
        ]);
        args.extend(all_scenarios());
        ok(&dae(&args));
        outputs.push(read(out.join("questions.jsonl")));
    }
    assert_eq!(outputs[0], outputs[1]);
    let records: Vec<QuestionRecord> = outputs[0]
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(records.len(), 3);
    for r in &records {
        let set = r.set.as_ref().unwrap();
        assert_eq!(set.questions.len(), 5);
        set.validate().unwrap();
    }
}

#[test]
fn unreadable_dataset_is_an_input_error() {
    let tmp = TempDir::new().unwrap();
    let mut args = vec![
        "generate".to_string(),
        "--dataset".into(),
        "/nonexistent/data.jsonl".into(),
    ];
    args.extend(["--out-dir".into(), tmp.path().display().to_string()]);
    args.extend(all_scenarios());
    let out = dae(&args);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("/nonexistent/data.jsonl"));
}

#[test]
fn bad_flags_are_input_errors() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["certain-paris"]);
    for extra in [
        &["--agents", "1"][..],
        &["--policy", "strict", "--threshold", "0.5"],
        &["--policy", "custom"],
        &["--methods", "DAE,NOPE"],
        &["--parallel", "0"],
    ] {
        let out = dae(&run_args(&data, &tmp.path().join("o"), extra));
        assert_eq!(out.status.code(), Some(2), "{extra:?}");
    }
    let out = dae(&["run", "--dataset", data.to_str().unwrap()]);
    assert_eq!(out.status.code(), Some(2), "sim backend without scenarios");
}

#[test]
fn certain_query_answers_under_strict_policy() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["certain-paris"]);
    let out = tmp.path().join("o");
    ok(&dae(&run_args(
        &data,
        &out,
        &["--methods", "DAE", "--policy", "strict"],
    )));
    let decisions: Vec<Decision> = jsonl(out.join("decisions.jsonl"));
    assert_eq!(decisions.len(), 1);
    assert_eq!(decisions[0].outcome, Outcome::Answer);
    assert_eq!(decisions[0].answer.as_deref(), Some("Paris"));
    assert_eq!(decisions[0].score, 0.0);
}

#[test]
fn stalemate_abstains_under_loose_policy() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["stalemate"]);
    let out = tmp.path().join("o");
    ok(&dae(&run_args(
        &data,
        &out,
        &["--methods", "DAE", "--policy", "loose"],
    )));
    let decisions: Vec<Decision> = jsonl(out.join("decisions.jsonl"));
    assert_eq!(decisions[0].outcome, Outcome::Abstain);
    assert!(decisions[0].score > 0.950271);
}

#[test]
fn two_methods_give_two_reports_per_query() {
    let tmp = TempDir::new().unwrap();
    let ids = [
        "certain-paris",
        "crisco",
        "bruce-lee",
        "stalemate",
        "susceptible",
    ];
    let data = demo_subset(tmp.path(), &ids);
    let out = tmp.path().join("o");
    ok(&dae(&run_args(
        &data,
        &out,
        &["--methods", "DAE,SC_SE,SC_EigV"],
    )));
    let reports: Vec<UncertaintyReport> = jsonl(out.join("scores.jsonl"));
    let decisions: Vec<Decision> = jsonl(out.join("decisions.jsonl"));
    assert_eq!(reports.len(), 3 * ids.len());
    // The spectral score has no distribution, so no policy decision.
    assert_eq!(decisions.len(), 2 * ids.len());
    for id in ids {
        assert!(out.join("transcripts").join(format!("{id}.json")).exists());
    }
    assert_eq!(read(out.join("failures.jsonl")), "");

    let eval = dae(&[
        "evaluate",
        "--out-dir",
        out.to_str().unwrap(),
        "--methods",
        "DAE,SC_SE",
    ]);
    ok(&eval);
    let metrics: Vec<Value> = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
    let names: Vec<&str> = metrics
        .iter()
        .map(|m| m["method"].as_str().unwrap())
        .collect();
    assert_eq!(names, ["DAE", "SC_SE"]);
    assert!(metrics.iter().all(|m| m.get("auroc").is_some()));
    assert!(out.join("ar_DAE.csv").exists() && out.join("ar_SC_SE.csv").exists());
}

#[test]
fn runs_are_byte_identical_across_parallelism() {
    let tmp = TempDir::new().unwrap();
    let ids = [
        "certain-paris",
        "crisco",
        "bruce-lee",
        "stalemate",
        "susceptible",
    ];
    let data = demo_subset(tmp.path(), &ids);
    let methods = "DAE,DAE_NoInteraction,SC_SE,SC_Degree,GREEDY,SC3OF5,SEQ,DIVERSEQ";
    let dirs: Vec<PathBuf> = ["1", "4"]
        .iter()
        .map(|p| {
            let out = tmp.path().join(format!("p{p}"));
            ok(&dae(&run_args(
                &data,
                &out,
                &["--methods", methods, "--parallel", p, "--seed", "11"],
            )));
            out
        })
        .collect();
    let mut files = vec![
        "scores.jsonl",
        "decisions.jsonl",
        "questions.jsonl",
        "calls.json",
    ]
    .into_iter()
    .map(PathBuf::from)
    .collect::<Vec<_>>();
    files.extend(
        ids.iter()
            .map(|id| Path::new("transcripts").join(format!("{id}.json"))),
    );
    for f in files {
        assert_eq!(
            read(dirs[0].join(&f)),
            read(dirs[1].join(&f)),
            "{}",
            f.display()
        );
    }

    // Every call is charged to one of the dataset's query ids.
    let calls: Value = serde_json::from_str(&read(dirs[0].join("calls.json"))).unwrap();
    let keys: Vec<&String> = calls.as_object().unwrap().keys().collect();
    assert_eq!(keys.len(), ids.len());
    assert!(keys.iter().all(|k| ids.contains(&k.as_str())));
}

#[test]
fn questions_in_skips_generation() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["crisco", "bruce-lee"]);
    let inline = tmp.path().join("inline");
    ok(&dae(&run_args(&data, &inline, &["--methods", "DAE"])));

    let reuse = tmp.path().join("reuse");
    let qin = inline.join("questions.jsonl");
    ok(&dae(&run_args(
        &data,
        &reuse,
        &["--methods", "DAE", "--questions-in", qin.to_str().unwrap()],
    )));
    assert_eq!(
        read(inline.join("decisions.jsonl")),
        read(reuse.join("decisions.jsonl"))
    );
    let calls = read(reuse.join("calls.json"));
    for stage in ["conceptualize", "perspectives", "equivalents", "filter"] {
        assert!(
            !calls.contains(&format!("\"{stage}\"")),
            "{stage} ran: {calls}"
        );
    }
    assert!(!reuse.join("questions.jsonl").exists());

    let out = dae(&run_args(
        &data,
        &reuse,
        &["--questions-in", "/nonexistent/q.jsonl"],
    ));
    assert_eq!(out.status.code(), Some(3));
}

#[test]
fn generation_failure_is_isolated() {
    let tmp = TempDir::new().unwrap();
    let path = tmp.path().join("dataset.jsonl");
    let mut text = read(demo_subset(tmp.path(), &["certain-paris"]));
    text.push_str(&json!({"id": "unscripted", "question": "Who wrote Nothing In Particular?", "gold_answers": ["X"]}).to_string());
    text.push('\n');
    std::fs::write(&path, text).unwrap();
    let out = tmp.path().join("o");
    ok(&dae(&run_args(&path, &out, &["--methods", "DAE"])));
    let failures: Vec<Value> = jsonl(out.join("failures.jsonl"));
    assert_eq!(failures.len(), 1);
    assert_eq!(failures[0]["query_id"], "unscripted");
    let decisions: Vec<Decision> = jsonl(out.join("decisions.jsonl"));
    assert_eq!(decisions.len(), 1);
    assert_eq!(decisions[0].query_id, "certain-paris");
}

/// Ten queries answered greedily: six right, two "I don't know", two wrong.
fn greedy_fixture(dir: &Path) -> (PathBuf, PathBuf) {
    let mut responses = Vec::new();
    let mut records = Vec::new();
    for i in 0..10 {
        let text = format!("What is the value of fixture item {i}?");
        let reply = match i {
            0..=5 => format!("gold {i}"),
            6 | 7 => "I don't know".to_string(),
            _ => format!("miss {i}"),
        };
        responses.push(json!({"task": "answer", "prompt": text, "response": reply}));
        let query = Query::new(format!("f{i}"), &text, Some(vec![format!("gold {i}")])).unwrap();
        let questions = vec![
            VariedQuestion::original(&query),
            VariedQuestion::equivalent(&query, format!("Fixture item {i} has which value?")),
        ];
        let set = QuestionSet {
            query,
            questions,
            fallback_applied: false,
        };
        records.push(QuestionRecord {
            query_id: format!("f{i}"),
            set: Some(set),
            pools: None,
            error: None,
        });
    }
    let scen = dir.join("fixture.json");
    let body =
        json!({"scenario_id": "fixture", "responses": responses, "extract_passthrough": true});
    std::fs::write(&scen, body.to_string()).unwrap();
    let qpath = dir.join("questions.jsonl");
    write_jsonl(&qpath, &records).unwrap();
    (scen, qpath)
}

#[test]
fn evaluate_matches_hand_fixture() {
    let tmp = TempDir::new().unwrap();
    let (scen, qpath) = greedy_fixture(tmp.path());
    let out = tmp.path().join("o");
    let (out_s, scen_s, q_s) = (
        out.to_str().unwrap(),
        scen.to_str().unwrap(),
        qpath.to_str().unwrap(),
    );
    ok(&dae(&[
        "run",
        "--scenario",
        scen_s,
        "--questions-in",
        q_s,
        "--methods",
        "GREEDY",
        "--out-dir",
        out_s,
    ]));
    ok(&dae(&[
        "evaluate",
        "--questions-in",
        q_s,
        "--out-dir",
        out_s,
    ]));
    let metrics: Vec<Value> = serde_json::from_str(&read(out.join("metrics.json"))).unwrap();
    assert_eq!(metrics.len(), 1);
    let m = &metrics[0];
    assert_eq!(m["method"], "GREEDY");
    assert_eq!(m["n"], 10);
    let close = |k: &str, v: f64| (m[k].as_f64().unwrap() - v).abs() < 1e-12;
    assert!(
        close("accuracy", 0.75) && close("abstention_rate", 0.2),
        "{m}"
    );
    assert!(
        close("correctness", 0.6) && close("truthfulness", 0.8),
        "{m}"
    );
    let calibration = read(out.join("calibration_GREEDY.csv"));
    assert_eq!(calibration.lines().count(), 11);
    assert!(calibration.starts_with("bin_index,mean_score,correctness"));
}

#[test]
fn evaluate_without_decisions_is_missing_prerequisite() {
    let tmp = TempDir::new().unwrap();
    let out = tmp.path().to_str().unwrap();
    assert_eq!(dae(&["evaluate", "--out-dir", out]).status.code(), Some(3));
    std::fs::write(tmp.path().join("decisions.jsonl"), "").unwrap();
    assert_eq!(dae(&["evaluate", "--out-dir", out]).status.code(), Some(3));
}

#[test]
fn config_file_supplies_defaults() {
    let tmp = TempDir::new().unwrap();
    let data = demo_subset(tmp.path(), &["stalemate"]);
    let out = tmp.path().join("o");
    let cfg = tmp.path().join("dae.toml");
    let toml = format!(
        "dataset = {:?}\nscenarios = [{:?}]\nmethods = \"DAE\"\npolicy = \"custom\"\nthreshold = 2.0\nout_dir = {:?}\n",
        data.display().to_string(),
        scenario("stalemate"),
        out.display().to_string()
    );
    std::fs::write(&cfg, toml).unwrap();
    ok(&dae(&["run", "--config", cfg.to_str().unwrap()]));
    let decisions: Vec<Decision> = jsonl(out.join("decisions.jsonl"));
    // The permissive threshold lets the stalemate answer through.
    assert_eq!(decisions[0].outcome, Outcome::Answer);

    std::fs::write(&cfg, "agnets = 4\n").unwrap();
    assert_eq!(
        dae(&["run", "--config", cfg.to_str().unwrap()])
            .status
            .code(),
        Some(2)
    );
}
