use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::time::{Duration, Instant};

use serde_json::Value;
use tempfile::TempDir;

fn ccs(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ccs"))
        .args(args)
        .env("RUST_LOG", "warn")
        .env_remove("CCS_DATA_DIR")
        .env_remove("CCS_PORT")
        .output()
        .unwrap()
}

fn ok(args: &[&str]) -> String {
    let out = ccs(args);
    assert!(
        out.status.success(),
        "ccs {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

fn json(path: &Path) -> Value {
    serde_json::from_slice(&std::fs::read(path).unwrap()).unwrap()
}

/// Synthetic corpus plus a small model trained on its truth files.
fn corpus(dir: &Path) -> (PathBuf, PathBuf) {
    let data = dir.join("corpus");
    ok(&["synth", "--docs", "4", "--pages", "2", "--seed", "3", "-o", p(&data)]);
    let cfg = dir.join("train.json");
    std::fs::write(&cfg, r#"{"n_trees": 10, "n_refinement_stages": 1, "cv_folds": 2}"#).unwrap();
    let model = dir.join("model.json");
    ok(&[
        "train",
        "--annotations",
        p(&data.join("truth")),
        "--config",
        p(&cfg),
        "-o",
        p(&model),
    ]);
    (data, model)
}

#[test]
fn file_pipeline_parse_predict_assemble() {
    let dir = TempDir::new().unwrap();
    let (data, model) = corpus(dir.path());
    assert_eq!(json(&model)["format"], "rf-model.v1");

    let pdf = data.join("journal-0000.pdf");
    let parsed = dir.path().join("parsed.json");
    ok(&["parse", p(&pdf), "-o", p(&parsed)]);
    let doc = json(&parsed);
    assert_eq!(doc["pages"].as_array().unwrap().len(), 2);
    let truth = json(&data.join("truth/journal-0000.json"));
    assert_eq!(doc["doc_id"], truth["doc_id"]);

    let labels = dir.path().join("labels.json");
    ok(&["predict", "--model", p(&model), "--doc", p(&parsed), "-o", p(&labels)]);
    let l = json(&labels);
    assert_eq!(l["format"], "labels.v1");
    assert_eq!(l["pages"].as_array().unwrap().len(), 2);

    let out = dir.path().join("structured.json");
    ok(&["assemble", "--doc", p(&parsed), "--labels", p(&labels), "-o", p(&out)]);
    let s = json(&out);
    assert!(!s["main-text"].as_array().unwrap().is_empty());

    // assembling the unlabeled document alone is an error
    let out = ccs(&["assemble", "--doc", p(&parsed), "-o", p(&dir.path().join("x.json"))]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("missing-label"));
}

#[test]
fn detection_sweep_table() {
    let dir = TempDir::new().unwrap();
    let data = dir.path().join("c");
    ok(&[
        "synth",
        "--template",
        "conference",
        "--docs",
        "1",
        "--pages",
        "3",
        "-o",
        p(&data),
    ]);
    let truth = data.join("truth/conference-0000.json");
    let dets = dir.path().join("d.json");
    ok(&["detect", "--doc", p(&truth), "-o", p(&dets)]);
    assert_eq!(json(&dets)["format"], "detections.v1");
    let table = ok(&["detect-eval", "--doc", p(&truth), "--detections", p(&dets)]);
    assert!(table.lines().next().unwrap().contains("threshold"));
    assert!(table.lines().last().unwrap().starts_with("best threshold"));
}

#[test]
fn parse_errors_exit_nonzero() {
    let dir = TempDir::new().unwrap();
    let bad = dir.path().join("bad.pdf");
    std::fs::write(&bad, b"not a pdf").unwrap();
    let out = ccs(&["parse", p(&bad), "-o", p(&dir.path().join("o.json"))]);
    assert!(!out.status.success());
    let out = ccs(&[
        "train",
        "--annotations",
        p(dir.path()),
        "-o",
        p(&dir.path().join("m.json")),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("empty-dataset"));
}

#[test]
fn submit_then_work_drains_the_file_queue() {
    let dir = TempDir::new().unwrap();
    let (data, model) = corpus(dir.path());
    let store = dir.path().join("state");
    let pdfs: Vec<PathBuf> = (0..3).map(|i| data.join(format!("journal-{i:04}.pdf"))).collect();
    let mut args = vec!["submit", "--data", p(&store), "--model", p(&model)];
    args.extend(pdfs.iter().map(|x| p(x)));
    let ids: Vec<String> = ok(&args)
        .lines()
        .map(|l| l.split('\t').next().unwrap().to_string())
        .collect();
    assert_eq!(ids.len(), 3);

    ok(&[
        "work",
        "--data",
        p(&store),
        "--queues",
        "parse=2,ml=1,assemble=1",
        "--drain",
    ]);
    for id in &ids {
        let s: Value = serde_json::from_str(&ok(&["status", id, "--data", p(&store)])).unwrap();
        assert_eq!(s["state"], "succeeded", "{s}");
        assert_eq!(s["links"].as_array().unwrap().len(), 3);
    }
}

#[test]
fn bench_writes_csv() {
    let dir = TempDir::new().unwrap();
    let (data, model) = corpus(dir.path());
    let csv = dir.path().join("bench.csv");
    ok(&[
        "bench",
        "--corpus",
        p(&data),
        "--workers",
        "1,2",
        "--model",
        p(&model),
        "-o",
        p(&csv),
    ]);
    let text = std::fs::read_to_string(&csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next().unwrap(), "stage,workers,seconds,speedup");
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 6);
    assert!(rows[0].starts_with("parse,1,"));
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut s = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(s, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut buf = String::new();
    s.read_to_string(&mut buf).ok()?;
    Some(buf)
}

#[test]
fn serve_reads_port_and_data_dir_from_env() {
    let dir = TempDir::new().unwrap();
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_ccs"))
        .arg("serve")
        .env("CCS_PORT", port.to_string())
        .env("CCS_DATA_DIR", dir.path())
        .env("RUST_LOG", "warn")
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(30);
    let mut reply = None;
    while Instant::now() < deadline {
        if let Some(r) = http_get(port, "/collections") {
            reply = Some(r);
            break;
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    child.kill().unwrap();
    child.wait().unwrap();
    let reply = reply.expect("server answered");
    assert!(reply.starts_with("HTTP/1.1 200"), "{reply}");
    assert!(reply.contains("\"collections\""));
    assert!(dir.path().read_dir().unwrap().next().is_some(), "data dir used");
}
