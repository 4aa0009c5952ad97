use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::Duration;

use cjade_core::cascade::{
    build_payload, classify_edge, classify_remote, EdgeModel, EdgeTiming, PayloadKindName,
    TcpTransport,
};
use cjade_core::dataset::export::write_ppm;
use cjade_core::dataset::{build_dataset, DatasetManifest};
use cjade_core::models::{
    build_feature_head, build_large, build_lightweight, load_weights, save_weights,
};
use serde_json::Value;

const CLASSES: usize = 3;

struct Setup {
    dir: tempfile::TempDir,
}

impl Setup {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let light = build_lightweight(CLASSES, 32, 31).unwrap();
        let large = build_large(CLASSES, 32, 32).unwrap();
        let head = build_feature_head(&light, 33).unwrap();
        save_weights(&light, dir.path().join("light.cjw")).unwrap();
        save_weights(&large, dir.path().join("large.cjw")).unwrap();
        save_weights(&head, dir.path().join("head.cjw")).unwrap();
        let manifest = DatasetManifest {
            class_count: CLASSES,
            samples_per_class: 20,
            ..DatasetManifest::default()
        };
        manifest.save(dir.path().join("manifest.json")).unwrap();
        Self { dir }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn p(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }
}

struct Server {
    child: Child,
    addr: String,
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn server(s: &Setup) -> Server {
    let mut child = Command::new(env!("CARGO_BIN_EXE_cjade-server"))
        .args([
            "--weights",
            &s.p("large.cjw"),
            "--feature-head",
            &s.p("head.cjw"),
        ])
        .env("CJADE_LISTEN", "127.0.0.1:0")
        .env("CJADE_LOG_LEVEL", "warn")
        .stdout(Stdio::piped())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let mut line = String::new();
    BufReader::new(child.stdout.take().unwrap())
        .read_line(&mut line)
        .unwrap();
    let addr = line
        .trim()
        .strip_prefix("listening on ")
        .unwrap_or_else(|| panic!("unexpected server banner {line:?}"))
        .to_string();
    Server { child, addr }
}

fn cjade(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_cjade"))
        .args(args)
        .env_remove("CJADE_SERVER")
        .env_remove("CJADE_EDGE_WEIGHTS")
        .output()
        .unwrap()
}

fn json_line(out: &Output) -> Value {
    assert!(
        out.status.success(),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    serde_json::from_str(text.lines().last().unwrap()).unwrap()
}

fn classify(s: &Setup, server: &str, extra: &[&str]) -> Output {
    let mut args = vec![
        "classify",
        "--sample",
        "test:4",
        "--manifest",
        "",
        "--edge-weights",
        "",
        "--server",
        server,
    ];
    let (m, w) = (s.p("manifest.json"), s.p("light.cjw"));
    args[4] = &m;
    args[6] = &w;
    args.extend_from_slice(extra);
    cjade(&args)
}

fn check_result_schema(v: &Value) {
    for key in [
        "label",
        "probabilities",
        "confidence",
        "provenance",
        "timing",
        "bytes_sent",
        "bytes_received",
    ] {
        assert!(v.get(key).is_some(), "missing {key} in {v}");
    }
    for key in ["edge_ms", "network_ms", "cloud_ms", "total_ms"] {
        assert!(v["timing"][key].is_f64(), "timing.{key}");
    }
    let p: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
    assert_eq!(p.len(), CLASSES);
    assert!(
        ["edge", "cloud", "fused", "fallback-edge"].contains(&v["provenance"].as_str().unwrap())
    );
}

#[test]
fn zero_threshold_stays_on_the_edge() {
    let s = Setup::new();
    let srv = server(&s);
    let v = json_line(&classify(&s, &srv.addr, &["--threshold", "0"]));
    check_result_schema(&v);
    assert_eq!(v["provenance"], "edge");
    assert_eq!(v["bytes_sent"], 0);
}

#[test]
fn unit_threshold_cloud_wins_gives_the_server_label() {
    let s = Setup::new();
    let srv = server(&s);
    for payload in ["image", "roi", "features"] {
        let out = classify(
            &s,
            &srv.addr,
            &[
                "--threshold",
                "1",
                "--fusion",
                "cloud-wins",
                "--payload",
                payload,
            ],
        );
        let text = String::from_utf8(out.stdout.clone()).unwrap();
        assert!(text.contains("provenance fused") && text.contains("bytes sent"));
        let v = json_line(&out);
        check_result_schema(&v);

        let data = build_dataset(&DatasetManifest::load(s.path("manifest.json")).unwrap()).unwrap();
        let img = &data.test[4].image;
        let edge = EdgeModel::new(load_weights(s.path("light.cjw")).unwrap()).unwrap();
        let kind = match payload {
            "image" => PayloadKindName::FullImage,
            "roi" => PayloadKindName::Roi,
            _ => PayloadKindName::Features,
        };
        let body = build_payload(img, &edge.analyze(img).unwrap(), kind, 0.0).unwrap();
        let mut t = TcpTransport::connect(srv.addr.clone(), Duration::from_secs(5)).unwrap();
        let direct = classify_remote(body, CLASSES, &mut t, 77, 5000).unwrap();
        assert_eq!(v["label"], direct.label, "{payload}");
        let p: Vec<f64> = serde_json::from_value(v["probabilities"].clone()).unwrap();
        for (a, b) in p.iter().zip(&direct.probabilities) {
            assert!((a - b).abs() < 1e-9);
        }
    }
}

#[test]
fn offline_falls_back_to_the_edge_answer() {
    let s = Setup::new();
    let v = json_line(&classify(
        &s,
        "127.0.0.1:9",
        &["--threshold", "1", "--offline", "--fallback", "edge"],
    ));
    assert_eq!(v["provenance"], "fallback-edge");
    let edge_only = json_line(&classify(
        &s,
        "127.0.0.1:9",
        &["--threshold", "0", "--offline"],
    ));
    assert_eq!(v["label"], edge_only["label"]);
    assert_eq!(v["probabilities"], edge_only["probabilities"]);
    assert_eq!(v["confidence"], edge_only["confidence"]);
}

#[test]
fn exit_codes() {
    let s = Setup::new();
    // nothing listens on the discard port
    let out = classify(
        &s,
        "127.0.0.1:9",
        &[
            "--threshold",
            "1",
            "--fallback",
            "error",
            "--timeout-ms",
            "500",
        ],
    );
    assert_eq!(out.status.code(), Some(2));
    assert!(!out.stderr.is_empty());

    std::fs::write(s.path("bad.ppm"), b"P6\n4 4\n255\nxx").unwrap();
    let out = cjade(&[
        "classify",
        &s.p("bad.ppm"),
        "--edge-weights",
        &s.p("light.cjw"),
        "--offline",
    ]);
    assert_eq!(out.status.code(), Some(1));
    let out = cjade(&[
        "classify",
        &s.p("missing.ppm"),
        "--edge-weights",
        &s.p("light.cjw"),
        "--offline",
    ]);
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn classify_reads_ppm_files() {
    let s = Setup::new();
    let data = build_dataset(&DatasetManifest::load(s.path("manifest.json")).unwrap()).unwrap();
    write_ppm(&data.test[0].image, s.path("x.ppm")).unwrap();
    let out = cjade(&[
        "classify",
        &s.p("x.ppm"),
        "--edge-weights",
        &s.p("light.cjw"),
        "--threshold",
        "0",
        "--json",
    ]);
    let text = String::from_utf8(out.stdout.clone()).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v = json_line(&out);
    check_result_schema(&v);
}

fn batch(s: &Setup, server: &str, out: &Path, extra: &[&str]) -> Output {
    let o = out.display().to_string();
    let (m, w) = (s.p("manifest.json"), s.p("light.cjw"));
    let mut args = vec![
        "batch",
        "--manifest",
        &m,
        "--split",
        "test",
        "--out",
        &o,
        "--edge-weights",
        &w,
        "--server",
        server,
    ];
    args.extend_from_slice(extra);
    cjade(&args)
}

#[test]
fn batch_at_zero_threshold_is_edge_only_accuracy() {
    let s = Setup::new();
    let out = s.path("b.jsonl");
    let o = batch(&s, "127.0.0.1:9", &out, &["--threshold", "0"]);
    assert!(o.status.success(), "{}", String::from_utf8_lossy(&o.stderr));

    let data = build_dataset(&DatasetManifest::load(s.path("manifest.json")).unwrap()).unwrap();
    let edge = EdgeModel::new(load_weights(s.path("light.cjw")).unwrap()).unwrap();
    let correct = data
        .test
        .iter()
        .filter(|x| {
            classify_edge(&x.image, &edge, EdgeTiming::WallClock)
                .unwrap()
                .0
                .label
                == x.label
        })
        .count();

    let text = std::fs::read_to_string(&out).unwrap();
    let lines: Vec<Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), data.test.len() + 1);
    for (i, l) in lines[..data.test.len()].iter().enumerate() {
        assert_eq!(l["index"], i);
        assert_eq!(l["label"], data.test[i].label);
        assert!(l["result"].get("timing").is_none());
    }
    let summary = &lines.last().unwrap()["summary"];
    assert_eq!(summary["samples"], data.test.len());
    assert_eq!(summary["correct"], correct);
    let acc = 100.0 * correct as f64 / data.test.len() as f64;
    assert!((summary["accuracy"].as_f64().unwrap() - acc).abs() < 1e-9);
    assert_eq!(summary["escalation_rate"], 0.0);
}

#[test]
fn batch_is_byte_identical_across_runs_and_parallelism() {
    let s = Setup::new();
    let srv = server(&s);
    let flags = ["--threshold", "0.9", "--payload", "roi"];
    let a = s.path("a.jsonl");
    let b = s.path("b.jsonl");
    assert!(batch(&s, &srv.addr, &a, &flags).status.success());
    let mut par = flags.to_vec();
    par.extend(["--parallel", "3"]);
    assert!(batch(&s, &srv.addr, &b, &par).status.success());
    let (ta, tb) = (std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    assert_eq!(ta, tb);
    let text = String::from_utf8(ta).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert!(summary["summary"]["escalation_rate"].as_f64().unwrap() > 0.0);
    assert_eq!(summary["summary"]["errors"], 0);
}

#[test]
fn batch_survives_a_dead_server() {
    let s = Setup::new();
    let out = s.path("d.jsonl");
    let o = batch(
        &s,
        "127.0.0.1:9",
        &out,
        &[
            "--threshold",
            "1",
            "--fallback",
            "error",
            "--timeout-ms",
            "300",
        ],
    );
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let first: Value = serde_json::from_str(text.lines().next().unwrap()).unwrap();
    assert!(first["error"].is_string());
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(summary["summary"]["errors"], summary["summary"]["samples"]);

    let o = batch(&s, "127.0.0.1:9", &out, &["--threshold", "1"]);
    assert!(o.status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    let summary: Value = serde_json::from_str(text.lines().last().unwrap()).unwrap();
    assert_eq!(
        summary["summary"]["fallbacks"],
        summary["summary"]["samples"]
    );
}

#[test]
fn empty_split_gives_only_a_summary() {
    let s = Setup::new();
    let m = DatasetManifest {
        class_count: CLASSES,
        samples_per_class: 10,
        split: cjade_core::dataset::SplitFractions {
            train: 0.8,
            val: 0.2,
            test: 0.0,
        },
        ..DatasetManifest::default()
    };
    m.save(s.path("manifest.json")).unwrap();
    let out = s.path("e.jsonl");
    assert!(batch(&s, "127.0.0.1:9", &out, &[]).status.success());
    let text = std::fs::read_to_string(&out).unwrap();
    assert_eq!(text.lines().count(), 1);
    let v: Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["summary"]["samples"], 0);
}

#[test]
fn server_refuses_bad_weights() {
    let s = Setup::new();
    let missing = Command::new(env!("CARGO_BIN_EXE_cjade-server"))
        .args(["--weights", &s.p("nope.cjw"), "--listen", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert!(!missing.status.success());

    let mut bytes = std::fs::read(s.path("large.cjw")).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 0x40;
    std::fs::write(s.path("corrupt.cjw"), &bytes).unwrap();
    let corrupt = Command::new(env!("CARGO_BIN_EXE_cjade-server"))
        .args(["--weights", &s.p("corrupt.cjw"), "--listen", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert!(!corrupt.status.success());
    assert!(String::from_utf8_lossy(&corrupt.stderr)
        .to_lowercase()
        .contains("checksum"));

    let wrong_kind = Command::new(env!("CARGO_BIN_EXE_cjade-server"))
        .args(["--weights", &s.p("light.cjw"), "--listen", "127.0.0.1:0"])
        .output()
        .unwrap();
    assert!(!wrong_kind.status.success());
}

#[test]
fn dataset_commands() {
    let s = Setup::new();
    let out = cjade(&[
        "dataset",
        "manifest",
        "--out",
        &s.p("m2.json"),
        "--classes",
        "4",
        "--samples-per-class",
        "10",
    ]);
    assert!(out.status.success());
    let m = DatasetManifest::load(s.path("m2.json")).unwrap();
    assert_eq!((m.class_count, m.samples_per_class), (4, 10));
    assert_eq!(String::from_utf8(out.stdout).unwrap().trim(), m.hash());

    let out = cjade(&[
        "dataset",
        "export",
        "--manifest",
        &s.p("m2.json"),
        "--split",
        "test",
        "--out",
        &s.p("img"),
        "--limit",
        "5",
    ]);
    assert!(out.status.success());
    assert_eq!(std::fs::read_dir(s.path("img")).unwrap().count(), 5);
}
