//! End-to-end tests of the `drt` binary.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use drt_core::simulator::ListenerModel;
use drt_harness::formats::{word_list_to_csv, write_manifest};
use drt_harness::pipeline::{simulate_study, to_json_pretty};
use drt_harness::synthetic::{eligible_participant, study_definition, test_set, word_list, FEATURE_CLASSES};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

fn drt(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_drt"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("DRT_HARNESS_DATA")
        .output()
        .expect("drt runs")
}

fn ok(out: Output) -> String {
    assert!(out.status.success(), "drt failed: {}", String::from_utf8_lossy(&out.stderr));
    String::from_utf8(out.stdout).unwrap()
}

fn fixture(name: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures").join(name)
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Set `DRT_BLESS=1` to regenerate the fixture files from the pipeline.
#[test]
fn analyze_reproduces_golden_report() {
    let export = fixture("golden_export.json");
    if std::env::var_os("DRT_BLESS").is_some() {
        let def = study_definition("golden", "NB", 24, 6, 2024);
        let mut model = ListenerModel::new(0.85);
        model.catch_q = 0.9;
        model.digits_q = 0.95;
        let e = simulate_study(&def, &model, 3, 99).unwrap();
        std::fs::create_dir_all(export.parent().unwrap()).unwrap();
        std::fs::write(&export, serde_json::to_string(&e).unwrap()).unwrap();
        std::fs::write(fixture("golden_report.txt"), ok(drt(&["analyze", p(&export)]))).unwrap();
        std::fs::write(fixture("golden_report.json"), ok(drt(&["--format", "json", "analyze", p(&export)]))).unwrap();
    }
    let text = ok(drt(&["analyze", p(&export)]));
    assert_eq!(text, std::fs::read_to_string(fixture("golden_report.txt")).unwrap());
    let json = ok(drt(&["--format", "json", "analyze", p(&export)]));
    assert_eq!(json, std::fs::read_to_string(fixture("golden_report.json")).unwrap());

    let dir = tempfile::tempdir().unwrap();
    ok(drt(&["--out", p(dir.path()), "analyze", p(&export)]));
    assert_eq!(std::fs::read_to_string(dir.path().join("report.txt")).unwrap(), text);
    assert!(std::fs::read_to_string(dir.path().join("files.csv")).unwrap().starts_with("recording_id,pair_id,feature_class,R,W,pc\n"));
}

#[test]
fn compare_of_identical_exports_is_null() {
    let export = fixture("golden_export.json");
    let out: Value = serde_json::from_str(&ok(drt(&["--format", "json", "compare", p(&export), p(&export)]))).unwrap();
    assert_eq!(out["gap"], 0.0);
    assert_eq!(out["test"]["statistic"], 0.0);
    assert_eq!(out["test"]["p"], 1.0);
    assert_eq!(out["test"]["significant"], false);
}

/// A config whose simulation reads manifests written straight from the
/// synthetic generator (simulation needs no audio).
fn simulation_config(dir: &Path, q_first: f64, q_second: Option<f64>) -> PathBuf {
    let list = word_list(24, &FEATURE_CLASSES);
    std::fs::write(dir.join("words.csv"), word_list_to_csv(&list)).unwrap();
    write_manifest(&dir.join("wb.jsonl"), &test_set(&list, "WB", 6).recordings).unwrap();
    write_manifest(&dir.join("nb.jsonl"), &test_set(&list, "NB", 6).recordings).unwrap();
    let mut conditions = vec![json!({"manifest": "wb.jsonl", "model": ListenerModel::new(q_first)})];
    if let Some(q) = q_second {
        conditions.push(json!({"manifest": "nb.jsonl", "model": ListenerModel::new(q)}));
    }
    let config = json!({
        "version": 1,
        "study_id": "sim",
        "language": "en",
        "word_list": "words.csv",
        "output": "out",
        "condition": {"kind": "pcmu_nb"},
        "blocks": 6,
        "protocol": {"screening": {"language": "en", "min_approval_rate": 0.98}},
        "simulation": {"listeners_per_block": 5, "conditions": conditions},
        "seeds": {"blocks": 1, "catch": 2, "practice": 3, "digits": 4, "sessions": 5, "simulation": 6, "noise": 7}
    });
    let path = dir.join("study.json");
    std::fs::write(&path, to_json_pretty(&config)).unwrap();
    path
}

#[test]
fn simulate_with_perfect_listeners_scores_100() {
    let dir = tempfile::tempdir().unwrap();
    let config = simulation_config(dir.path(), 1.0, None);
    let out: Value = serde_json::from_str(&ok(drt(&["--config", p(&config), "--format", "json", "simulate"]))).unwrap();
    let report = &out["reports"][0]["report"];
    assert_eq!(report["overall"]["mean"], 100.0);
    assert_eq!(report["sessions"]["included"], 30);
    assert!(dir.path().join("out/sim/WB/export.json").exists());
}

fn tree_hashes(root: &Path) -> BTreeMap<String, String> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<String, String>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                let rel = path.strip_prefix(root).unwrap().to_string_lossy().into_owned();
                out.insert(rel, hex::encode(Sha256::digest(std::fs::read(&path).unwrap())));
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}

fn run_demo(dir: &Path, extra: &[&str]) -> BTreeMap<String, String> {
    ok(drt(&["--out", p(dir), "init-demo", "--pairs", "24", "--blocks", "6"]));
    let config = dir.join("study.json");
    for cmd in ["curate", "apply-condition", "make-blocks", "simulate"] {
        let mut args = vec!["--config", p(&config)];
        args.extend_from_slice(extra);
        args.push(cmd);
        ok(drt(&args));
    }
    tree_hashes(&dir.join("out"))
}

#[test]
fn pipeline_outputs_are_reproducible() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let c = tempfile::tempdir().unwrap();
    let first = run_demo(a.path(), &[]);
    let second = run_demo(b.path(), &[]);
    assert!(first.len() > 580, "only {} files", first.len());
    assert_eq!(first, second);
    for key in ["WB/manifest.jsonl", "NB/manifest.jsonl", "study_definition.json", "sim/comparison.json", "digits/0.wav"] {
        assert!(first.contains_key(key), "{key} missing");
    }

    let reseeded = run_demo(c.path(), &["--seed-override", "5"]);
    assert_eq!(first["WB/manifest.jsonl"], reseeded["WB/manifest.jsonl"]);
    assert_ne!(first["study_definition.json"], reseeded["study_definition.json"]);
}

#[test]
fn exit_codes_separate_validation_from_io() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(drt(&["--config", p(&missing), "curate"]).status.code(), Some(2));
    assert_eq!(drt(&["analyze", p(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"version": 1, "study_id": "x"}"#).unwrap();
    let out = drt(&["--config", p(&bad), "curate"]);
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("bad.json"));

    let wrong_version = simulation_config(dir.path(), 0.9, None);
    let text = std::fs::read_to_string(&wrong_version).unwrap().replace("\"version\": 1", "\"version\": 9");
    std::fs::write(&wrong_version, text).unwrap();
    assert_eq!(drt(&["--config", p(&wrong_version), "simulate"]).status.code(), Some(1));

    std::fs::write(dir.path().join("export.json"), "{not json").unwrap();
    assert_eq!(drt(&["analyze", p(&dir.path().join("export.json"))]).status.code(), Some(1));
    assert_eq!(drt(&["make-blocks"]).status.code(), Some(1));
}

// ---- serve ----

struct Server {
    child: Child,
    base: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

fn start_server(data: &Path, study: &Path) -> Server {
    let port = free_port();
    let child = Command::new(env!("CARGO_BIN_EXE_drt"))
        .args(["serve", "--addr", &format!("127.0.0.1:{port}"), "--data", p(data), "--study", p(study)])
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let base = format!("http://127.0.0.1:{port}");
    let deadline = Instant::now() + Duration::from_secs(20);
    while ureq::get(&format!("{base}/health")).call().is_err() {
        assert!(Instant::now() < deadline, "server did not start");
        std::thread::sleep(Duration::from_millis(50));
    }
    Server { child, base }
}

fn post(base: &str, path: &str, body: Value) -> Value {
    ureq::post(&format!("{base}{path}")).send_json(body).unwrap().into_json().unwrap()
}

fn get(base: &str, path: &str) -> Value {
    ureq::get(&format!("{base}{path}")).call().unwrap().into_json().unwrap()
}

#[test]
fn killed_server_recovers_its_sessions() {
    let dir = tempfile::tempdir().unwrap();
    let study = dir.path().join("study.json");
    std::fs::write(&study, to_json_pretty(&study_definition("live", "NB", 24, 6, 8))).unwrap();
    let data = dir.path().join("data");

    let server = start_server(&data, &study);
    let mut sessions = Vec::new();
    for i in 0..3 {
        let profile = serde_json::to_value(eligible_participant(&format!("w{i}"), "en")).unwrap();
        let created = post(&server.base, "/studies/live/sessions", profile);
        sessions.push(created["session_id"].as_str().unwrap().to_string());
    }
    let sid = &sessions[0];
    post(&server.base, &format!("/sessions/{sid}/events"), json!({"type": "consent", "given": true}));
    let answers = json!({"first_language": "en", "residency": "US", "dyslexia": false, "hearing_problems": false,
        "headphones": true, "quiet_environment": true});
    post(&server.base, &format!("/sessions/{sid}/events"), json!({"type": "questionnaire", "answers": answers}));
    let item = get(&server.base, &format!("/sessions/{sid}/next"));
    assert_eq!(item["status"], "item");
    let before = get(&server.base, "/studies/live/export");
    drop(server);

    let server = start_server(&data, &study);
    let after = get(&server.base, "/studies/live/export");
    assert_eq!(before["records"], after["records"]);
    assert_eq!(get(&server.base, &format!("/sessions/{sid}/next")), item);
    assert_eq!(get(&server.base, "/studies/live")["sessions"], 3);
}
