use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::Path;
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

fn medreply(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_medreply"))
        .args(args)
        .current_dir(cwd)
        .env_remove("MEDREPLY_ARTIFACT_DIR")
        .env_remove("MEDREPLY_BIND")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cwd: &Path) -> String {
    let out = medreply(args, cwd);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn files(dir: &Path) -> Vec<(String, Vec<u8>)> {
    let mut out: Vec<(String, Vec<u8>)> = std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect();
    out.sort();
    out
}

#[test]
fn synth_is_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    for out in ["a", "b"] {
        ok(&["synth", "--intents", "5", "--pairs", "50", "--seed", "7", "--out", out], dir.path());
    }
    let a = files(&dir.path().join("a"));
    assert_eq!(a, files(&dir.path().join("b")));
    let names: Vec<&str> = a.iter().map(|(n, _)| n.as_str()).collect();
    for expected in ["chats.jsonl", "pairs.jsonl", "embeddings.txt", "ground_truth.json", "config.toml"] {
        assert!(names.contains(&expected), "{names:?}");
    }
    ok(&["synth", "--intents", "5", "--pairs", "50", "--seed", "8", "--out", "c"], dir.path());
    assert_ne!(a, files(&dir.path().join("c")));
}

#[test]
fn usage_errors_exit_1() {
    let dir = tempfile::tempdir().unwrap();
    let out = medreply(&["synth", "--no-such-flag"], dir.path());
    assert_eq!(out.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&out.stderr).contains("Usage"));

    assert_eq!(medreply(&[], dir.path()).status.code(), Some(1));
    assert_eq!(medreply(&["frobnicate"], dir.path()).status.code(), Some(1));
    assert_eq!(
        medreply(&["synth", "--intents", "3", "--pairs", "10"], dir.path()).status.code(),
        Some(1)
    );
    assert_eq!(
        medreply(&["suggest", "hi", "--threshold", "2"], dir.path()).status.code(),
        Some(1)
    );
    // training needs embeddings from somewhere
    assert_eq!(medreply(&["train", "--pairs", "p.jsonl"], dir.path()).status.code(), Some(1));
    assert_eq!(medreply(&["--help"], dir.path()).status.code(), Some(0));
}

#[test]
fn data_errors_exit_2() {
    let dir = tempfile::tempdir().unwrap();
    let missing = medreply(&["train", "--pairs", "absent.jsonl", "--embeddings", "absent.txt"], dir.path());
    assert_eq!(missing.status.code(), Some(2));
    std::fs::write(dir.path().join("bad.jsonl"), "{not json\n").unwrap();
    ok(&["synth", "--intents", "3", "--pairs", "30", "--out", "c"], dir.path());
    let bad = medreply(&["evaluate", "--pairs", "bad.jsonl", "--config", "c/config.toml"], dir.path());
    assert_eq!(bad.status.code(), Some(2));
    assert_eq!(medreply(&["suggest", "hello", "--artifacts", "nowhere"], dir.path()).status.code(), Some(2));
    assert_eq!(medreply(&["serve", "--artifacts", "nowhere"], dir.path()).status.code(), Some(2));
}

#[test]
fn evaluate_report_has_response_columns() {
    let dir = tempfile::tempdir().unwrap();
    ok(&["synth", "--intents", "20", "--pairs", "5000", "--seed", "42", "--out", "corpus"], dir.path());
    let text = ok(
        &["evaluate", "--pairs", "corpus/pairs.jsonl", "--config", "corpus/config.toml", "--out", "eval"],
        dir.path(),
    );
    let report = std::fs::read_to_string(dir.path().join("eval/report.txt")).unwrap();
    assert_eq!(text, report);
    let header = report
        .lines()
        .find(|l| l.starts_with("method") && l.contains("precision@1"))
        .expect("response table header");
    let cols: Vec<&str> = header.split("  ").map(str::trim).filter(|c| !c.is_empty()).collect();
    assert_eq!(cols, ["method", "precision@1 (%)", "precision@3 (%)", "precision@5 (%)", "MRR"]);
    for f in ["report.json", "sweep.csv", "matrix.csv", "models/fold_0/canned_set.json"] {
        assert!(dir.path().join("eval").join(f).exists(), "{f}");
    }
}

#[test]
fn train_suggest_and_evaluate_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--intents", "6", "--pairs", "360", "--seed", "3", "--out", "corpus"], d);
    ok(&["train", "--pairs", "corpus/pairs.jsonl", "--config", "corpus/config.toml", "--out", "art"], d);
    for f in ["manifest.json", "trigger.json", "response.json", "canned_set.json", "tfidf.json"] {
        assert!(d.join("art").join(f).exists(), "{f}");
    }
    let out = ok(&["suggest", "--artifacts", "art", "--threshold", "0", "--json", "thanks"], d);
    let s: serde_json::Value = serde_json::from_str(&out).unwrap();
    assert_eq!(s["triggered"], serde_json::json!(true));
    assert_eq!(s["items"].as_array().unwrap().len(), 3);

    // the artifact directory can come from the environment
    let env_run = Command::new(env!("CARGO_BIN_EXE_medreply"))
        .args(["suggest", "--k", "2", "--threshold", "0", "--json", "thanks"])
        .current_dir(d)
        .env("MEDREPLY_ARTIFACT_DIR", d.join("art"))
        .output()
        .unwrap();
    assert!(env_run.status.success());
    let s: serde_json::Value = serde_json::from_slice(&env_run.stdout).unwrap();
    assert_eq!(s["items"].as_array().unwrap().len(), 2);

    ok(&["evaluate", "--pairs", "corpus/pairs.jsonl", "--artifacts", "art", "--out", "eval"], d);
    let report: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("eval/report.json")).unwrap()).unwrap();
    assert_eq!(report["n_folds"], serde_json::json!(1));
    ok(&["sweep", "--pairs", "corpus/pairs.jsonl", "--artifacts", "art", "--out", "sw"], d);
    let sweep = std::fs::read_to_string(d.join("sw/sweep.csv")).unwrap();
    assert_eq!(sweep.lines().count(), 22);
}

#[test]
fn clean_and_build_canned_from_chats() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--intents", "4", "--pairs", "160", "--seed", "5", "--out", "corpus"], d);
    ok(&["clean", "--chats", "corpus/chats.jsonl", "--config", "corpus/config.toml", "--out", "clean"], d);
    let pairs = std::fs::read_to_string(d.join("clean/pairs.jsonl")).unwrap();
    assert_eq!(pairs.lines().count(), 160);
    // a looser density cut keeps the noisier synthetic clusters
    let base = std::fs::read_to_string(d.join("corpus/config.toml")).unwrap();
    std::fs::write(d.join("corpus/loose.toml"), base.replace("density_threshold = 0.8", "density_threshold = 0.6")).unwrap();
    let out = ok(
        &["build-canned", "--pairs", "clean/pairs.jsonl", "--config", "corpus/loose.toml", "--k-max", "12", "--out", "canned"],
        d,
    );
    assert!(out.starts_with("k_selected"));
    let canned: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(d.join("canned/canned_set.json")).unwrap()).unwrap();
    let kept = out.lines().skip(2).filter(|l| l.trim_end().ends_with("true")).count();
    assert!(kept >= 3, "{out}");
    assert_eq!(canned["responses"].as_array().unwrap().len(), kept);
    ok(&["train", "--pairs", "canned/labeled_pairs.jsonl", "--config", "corpus/loose.toml", "--out", "art"], d);
}

fn http_get(addr: &str, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(addr).ok()?;
    s.set_read_timeout(Some(Duration::from_secs(5))).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: {addr}\r\nConnection: close\r\n\r\n").ok()?;
    let mut body = String::new();
    s.read_to_string(&mut body).ok()?;
    Some(body)
}

#[test]
fn serve_answers_health_over_tcp() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    ok(&["synth", "--intents", "4", "--pairs", "160", "--seed", "5", "--out", "corpus"], d);
    ok(&["train", "--pairs", "corpus/pairs.jsonl", "--config", "corpus/config.toml", "--out", "art"], d);
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let addr = format!("127.0.0.1:{port}");
    let mut child = Command::new(env!("CARGO_BIN_EXE_medreply"))
        .args(["serve", "--jobs", "2"])
        .current_dir(d)
        .env("MEDREPLY_ARTIFACT_DIR", d.join("art"))
        .env("MEDREPLY_BIND", &addr)
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(&addr, "/health") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(100));
    }
    let _ = child.kill();
    let _ = child.wait();
    let reply = reply.expect("service came up");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"status\":\"ok\""), "{reply}");
}
