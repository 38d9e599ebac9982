use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Command, Output, Stdio};
use std::time::{Duration, Instant};

use serde_json::Value;

fn pack_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core/tests/fixtures/pack")
}

fn stepdiff(args: &[&str], cache: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_stepdiff"))
        .args(args)
        .env("STEPDIFF_CACHE_DIR", cache)
        .env("RUST_LOG", "error")
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str], cache: &Path) -> String {
    let out = stepdiff(args, cache);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout).unwrap()
}

fn read_json(path: &Path) -> Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

const SMALL_MODEL: [&str; 16] = [
    "--epochs",
    "30",
    "--batch-size",
    "8",
    "--lr",
    "3e-3",
    "--embed-dim",
    "8",
    "--layers",
    "1",
    "--heads",
    "2",
    "--window",
    "12",
    "--ensemble",
    "2",
];

/// Parses, pools and splits the fixture pack into `dir`.
fn prepare(dir: &Path) -> (String, String) {
    let manifest = dir.join("manifest.json").display().to_string();
    let features = dir.join("features.jsonl").display().to_string();
    let pack = pack_dir().display().to_string();
    ok(&["parse", &pack, "--out", &manifest], dir);
    ok(&["features", &manifest, "--out", &features], dir);
    ok(&["pool", &manifest, "--threshold", "0.1"], dir);
    ok(&["split", &manifest, "--replicates", "3", "--seed", "11"], dir);
    (manifest, features)
}

#[test]
fn full_pipeline_on_the_fixture_pack() {
    let started = Instant::now();
    let dir = tempfile::tempdir().unwrap();
    let (manifest, features) = prepare(dir.path());
    let m = read_json(Path::new(&manifest));
    assert_eq!(m["songs"].as_array().unwrap().len(), 6);
    assert_eq!(m["pooling"]["k"], 5);
    assert_eq!(m["splits"].as_array().unwrap().len(), 3);
    let dump = std::fs::read_to_string(&features).unwrap();
    assert_eq!(dump.lines().count(), 24);

    let runs = dir.path().join("runs").display().to_string();
    for method in ["binomial", "pattern"] {
        let mut args = vec!["train", &manifest, &features, "--method", method, "--replicates", "3", "--jobs", "2", "--out", &runs];
        args.extend(SMALL_MODEL);
        let stdout = ok(&args, dir.path());
        assert_eq!(stdout.lines().count(), 3);
    }
    for r in 0..3 {
        for ext in ["bin", "json", "predictions.json", "metrics.json"] {
            assert!(Path::new(&runs).join(format!("binomial-r00{r}.{ext}")).exists());
        }
    }

    let report_path = dir.path().join("report.json").display().to_string();
    let stems: Vec<String> = (0..3)
        .flat_map(|r| ["binomial", "pattern"].map(|m| format!("{runs}/{m}-r00{r}")))
        .collect();
    let mut args = vec!["eval", "--metrics", "wae,mae,rmse,accuracy,tpr,agreement", "--jobs", "2", "--out", &report_path];
    args.extend(stems.iter().map(String::as_str));
    ok(&args, dir.path());
    let report = read_json(Path::new(&report_path));
    assert_eq!(report["files"].as_array().unwrap().len(), 6);
    let wae = &report["report"]["columns"]["wae"];
    assert_eq!(wae["binomial"]["replicates"], 3);
    assert_eq!(wae["pattern"]["replicates"], 3);
    let bests = ["binomial", "pattern"]
        .iter()
        .filter(|m| wae[**m]["best"] == Value::Bool(true))
        .count();
    assert_eq!(bests, 1);

    let cross = ok(
        &["cross-eval", &format!("{runs}/binomial-r000"), &manifest, "--features", &features],
        dir.path(),
    );
    let cross: Value = serde_json::from_str(&cross).unwrap();
    assert_eq!(cross["levels"], 24);
    assert_eq!(cross["confusion"]["cells"].as_array().unwrap().len(), 5);
    let total: f64 = cross["confusion"]["cells"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|row| row.as_array().unwrap())
        .map(|c| c.as_f64().unwrap())
        .sum();
    assert_eq!(total, 24.0);

    let pairs = ok(&["rank-pairs", &manifest], dir.path());
    assert_eq!(pairs.lines().count(), 24 * 23 / 2);
    let first: Value = serde_json::from_str(pairs.lines().next().unwrap()).unwrap();
    assert_eq!(first["label"], "ALess");

    assert!(started.elapsed() < Duration::from_secs(300));
}

#[test]
fn outputs_are_byte_identical_across_runs() {
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let (ma, fa) = prepare(a.path());
    let (mb, fb) = prepare(b.path());
    assert_eq!(std::fs::read(&ma).unwrap(), std::fs::read(&mb).unwrap());
    assert_eq!(std::fs::read(&fa).unwrap(), std::fs::read(&fb).unwrap());
    for (dir, m, f) in [(a.path(), &ma, &fa), (b.path(), &mb, &fb)] {
        let out = dir.join("runs").display().to_string();
        let mut args = vec!["train", m.as_str(), f.as_str(), "--method", "laplace", "--replicate", "1", "--out", &out];
        args.extend(SMALL_MODEL);
        ok(&args, dir);
    }
    for ext in ["bin", "json", "predictions.json", "metrics.json"] {
        let name = format!("laplace-r001.{ext}");
        assert_eq!(
            std::fs::read(a.path().join("runs").join(&name)).unwrap(),
            std::fs::read(b.path().join("runs").join(&name)).unwrap(),
            "{name}"
        );
    }
}

#[test]
fn train_defaults_to_the_cache_directory() {
    let dir = tempfile::tempdir().unwrap();
    let cache = tempfile::tempdir().unwrap();
    let (manifest, features) = prepare(dir.path());
    let mut args = vec!["train", manifest.as_str(), features.as_str(), "--method", "classification"];
    args.extend(SMALL_MODEL);
    ok(&args, cache.path());
    assert!(cache.path().join("runs/pack/classification-r000.bin").exists());
}

#[test]
fn perfect_oracle_has_zero_wae() {
    let dir = tempfile::tempdir().unwrap();
    let predictions: Vec<Value> = [1, 1, 2, 3, 3, 3]
        .iter()
        .enumerate()
        .map(|(i, &y)| {
            serde_json::json!({
                "level_id": format!("song{i}#0"),
                "song_id": format!("song{i}"),
                "truth": y,
                "predicted": y,
                "output": [],
            })
        })
        .collect();
    let file = serde_json::json!({
        "dataset": "oracle",
        "method": "binomial",
        "K": 3,
        "replicate": 0,
        "predictions": predictions,
    });
    let path = dir.path().join("oracle.predictions.json");
    std::fs::write(&path, file.to_string()).unwrap();
    let stdout = ok(&["eval", path.to_str().unwrap()], dir.path());
    let report: Value = serde_json::from_str(&stdout).unwrap();
    let cell = &report["report"]["columns"]["wae"]["binomial"];
    assert_eq!(cell["mean"], 0.0);
    assert_eq!(report["files"][0]["metrics"]["accuracy"], 1.0);
}

#[test]
fn split_with_a_single_song_label_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let manifest = dir.path().join("manifest.json");
    let pack = pack_dir().display().to_string();
    ok(&["parse", &pack, "--out", manifest.to_str().unwrap()], dir.path());
    let mut m = read_json(&manifest);
    m["songs"][0]["levels"][3]["raw_meter"] = Value::from(42);
    std::fs::write(&manifest, m.to_string()).unwrap();
    ok(&["pool", manifest.to_str().unwrap(), "--threshold", "0"], dir.path());
    let out = stepdiff(&["split", manifest.to_str().unwrap(), "--replicates", "2"], dir.path());
    assert_eq!(out.status.code(), Some(4));
    let err: Value = serde_json::from_slice(&out.stderr).unwrap();
    assert_eq!(err["error"], "infeasible_split");
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path();
    assert_eq!(stepdiff(&["frobnicate"], cache).status.code(), Some(2));
    assert_eq!(stepdiff(&["pool", "/nonexistent/manifest.json"], cache).status.code(), Some(2));
    assert_eq!(stepdiff(&["eval", "x.json", "--metrics", "bogus"], cache).status.code(), Some(2));

    let empty = tempfile::tempdir().unwrap();
    let out = stepdiff(&["parse", empty.path().to_str().unwrap(), "--out", "m.json"], cache);
    assert_eq!(out.status.code(), Some(3));

    let (manifest, features) = prepare(dir.path());
    let runs = dir.path().join("runs").display().to_string();
    let mut args = vec!["train", manifest.as_str(), features.as_str(), "--method", "nnrank", "--out", &runs];
    args.extend(SMALL_MODEL);
    let lr = args.iter().position(|a| *a == "--lr").unwrap() + 1;
    args[lr] = "1e308";
    let out = stepdiff(&args, cache);
    assert_eq!(out.status.code(), Some(5));
    assert!(!Path::new(&runs).join("nnrank-r000.bin").exists());
}

fn http_get(port: u16, path: &str) -> Option<String> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(stream, "GET {path} HTTP/1.1\r\nHost: localhost\r\nConnection: close\r\n\r\n").ok()?;
    let mut response = String::new();
    stream.read_to_string(&mut response).ok()?;
    Some(response)
}

#[test]
fn serve_answers_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let (manifest, _) = prepare(dir.path());
    let m = read_json(Path::new(&manifest));
    let predictions: Vec<Value> = m["songs"]
        .as_array()
        .unwrap()
        .iter()
        .flat_map(|s| {
            let id = s["song_id"].as_str().unwrap().to_string();
            s["levels"].as_array().unwrap().iter().map(move |l| {
                let index = l["index"].as_u64().unwrap();
                serde_json::json!({
                    "level_id": format!("{id}#{index}"),
                    "song_id": id,
                    "truth": 1,
                    "predicted": 4 - index,
                    "output": [],
                })
            })
        })
        .collect();
    let file = serde_json::json!({
        "dataset": "pack", "method": "nnrank", "K": 5, "replicate": 0, "predictions": predictions,
    });
    let predictions_path = dir.path().join("nnrank.predictions.json");
    std::fs::write(&predictions_path, file.to_string()).unwrap();

    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut child = Command::new(env!("CARGO_BIN_EXE_stepdiff"))
        .args(["serve", "--port", &port.to_string(), "--manifest", &manifest, "--predictions"])
        .arg(&predictions_path)
        .arg("--log")
        .arg(dir.path().join("judgments.jsonl"))
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let deadline = Instant::now() + Duration::from_secs(20);
    let health = loop {
        if let Some(r) = http_get(port, "/api/health") {
            break r;
        }
        assert!(Instant::now() < deadline, "service did not come up");
        std::thread::sleep(Duration::from_millis(100));
    };
    let next = http_get(port, "/api/pairs/next?annotator=a").unwrap();
    child.kill().unwrap();
    child.wait().unwrap();
    assert!(health.starts_with("HTTP/1.1 200"), "{health}");
    assert!(health.contains("\"status\":\"ok\""));
    assert!(next.starts_with("HTTP/1.1 200"), "{next}");
    assert!(next.contains("\"meter_hidden\":true"));
}
