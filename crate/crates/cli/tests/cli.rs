use std::path::Path;
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

fn lmattr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_lmattr")).args(args).output().unwrap()
}

fn ok(args: &[&str]) -> Output {
    let out = lmattr(args);
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Kills the server when a test panics.
struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.0.kill();
        let _ = self.0.wait();
    }
}

fn wait_for(path: &Path) {
    let started = Instant::now();
    while !path.exists() || std::fs::metadata(path).unwrap().len() == 0 {
        assert!(started.elapsed() < Duration::from_secs(30), "server never wrote {}", path.display());
        std::thread::sleep(Duration::from_millis(50));
    }
    // The file is written in one call; give it a moment to land fully.
    std::thread::sleep(Duration::from_millis(50));
}

#[test]
fn simulate_twice_is_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.json");
    std::fs::write(
        &config,
        r#"{"repetitions": 2, "corpus": {"per_dataset": 3}, "family": {"template": {"num_bases": 6, "num_children": 6}}}"#,
    )
    .unwrap();
    let (a, b) = (dir.path().join("a.json"), dir.path().join("b.json"));
    ok(&["simulate", "--config", p(&config), "--out", p(&a)]);
    ok(&["simulate", "--config", p(&config), "--out", p(&b), "--parallelism", "1"]);
    let first = std::fs::read(&a).unwrap();
    assert!(!first.is_empty());
    // Parallelism changes scheduling only, so it is excluded from the comparison.
    let strip = |bytes: &[u8]| -> serde_json::Value {
        let mut v: serde_json::Value = serde_json::from_slice(bytes).unwrap();
        v["config"]["parallelism"] = serde_json::Value::Null;
        v
    };
    assert_eq!(strip(&first), strip(&std::fs::read(&b).unwrap()));
    let c = dir.path().join("c.json");
    ok(&["simulate", "--config", p(&config), "--out", p(&c)]);
    assert_eq!(first, std::fs::read(&c).unwrap());
}

#[test]
fn full_pipeline_over_http() {
    let dir = tempfile::tempdir().unwrap();
    let corpus = dir.path().join("corpus.jsonl");
    let corpus_spec = dir.path().join("corpus.json");
    std::fs::write(&corpus_spec, r#"{"per_dataset": 3}"#).unwrap();
    ok(&["sample", "--config", p(&corpus_spec), "--seed", "4", "--out", p(&corpus)]);
    assert_eq!(std::fs::read_to_string(&corpus).unwrap().lines().count(), 30);

    let endpoints = dir.path().join("endpoints.json");
    let truth = dir.path().join("truth.json");
    let _server = Server(
        Command::new(env!("CARGO_BIN_EXE_lmattr"))
            .args(["serve", "--bind", "127.0.0.1:0", "--seed", "2"])
            .args(["--out", p(&endpoints), "--truth", p(&truth)])
            .stderr(Stdio::null())
            .spawn()
            .unwrap(),
    );
    wait_for(&endpoints);

    let transcripts = dir.path().join("t.jsonl");
    let args = ["interrogate", "--endpoints", p(&endpoints), "--corpus", p(&corpus)];
    ok(&[&args[..], &["--out", p(&transcripts), "--parallelism", "4"]].concat());
    assert_eq!(std::fs::read_to_string(&transcripts).unwrap().lines().count(), 24 * 30);

    // A warm cache answers everything without new queries.
    let again = dir.path().join("t2.jsonl");
    let out = ok(&[&args[..], &["--cache", p(&transcripts), "--out", p(&again)]].concat());
    assert!(String::from_utf8_lossy(&out.stderr).contains("0 new queries"));
    assert_eq!(std::fs::read(&transcripts).unwrap(), std::fs::read(&again).unwrap());

    let truth: serde_json::Map<String, serde_json::Value> =
        serde_json::from_str(&std::fs::read_to_string(&truth).unwrap()).unwrap();
    for method in ["bleu", "ter", "vsm", "multiclass", "ova"] {
        let out = ok(&["attribute", "--method", method, "--transcripts", p(&transcripts), "--corpus", p(&corpus)]);
        let result: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
        let pairs = result["pairs"].as_object().unwrap();
        assert_eq!(pairs.len(), 12, "{method}");
        let correct = pairs.iter().filter(|(ft, base)| truth[*ft] == **base).count();
        if method == "ova" {
            // Abstains freely on a corpus this small, but never mispairs.
            let wrong = pairs.iter().filter(|(ft, base)| !base.is_null() && truth[*ft] != **base).count();
            assert_eq!(wrong, 0);
        } else {
            assert!(correct >= 8, "{method}: {correct}/12");
        }
    }

    let out = ok(&["cv", "--transcripts", p(&transcripts), "--kind", "base", "--k", "3"]);
    let cv: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(cv["records"], 360);
    assert!(cv["accuracy"].as_f64().unwrap() > 0.5);
}

#[test]
fn exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let missing = dir.path().join("missing.json");
    assert_eq!(lmattr(&["simulate", "--config", p(&missing)]).status.code(), Some(2));

    let bad = dir.path().join("bad.json");
    std::fs::write(&bad, r#"{"repetitions": 0}"#).unwrap();
    assert_eq!(lmattr(&["simulate", "--config", p(&bad)]).status.code(), Some(1));

    assert_eq!(lmattr(&["attribute", "--method", "nope"]).status.code(), Some(1));
    assert_eq!(lmattr(&["--help"]).status.code(), Some(0));

    // Nothing listens on this port.
    let port = std::net::TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let corpus = dir.path().join("c.jsonl");
    ok(&["sample", "--out", p(&corpus)]);
    let out = lmattr(&[
        "interrogate",
        "--server",
        &format!("http://127.0.0.1:{port}"),
        "--corpus",
        p(&corpus),
        "--out",
        p(&dir.path().join("t.jsonl")),
    ]);
    assert_eq!(out.status.code(), Some(2));
}
