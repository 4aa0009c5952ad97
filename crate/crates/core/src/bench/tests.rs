use std::sync::OnceLock;

use super::*;
use crate::protocol::OVERHEAD;

fn tiny_config() -> BenchConfig {
    let manifest = DatasetManifest {
        class_count: 3,
        samples_per_class: 40,
        ..DatasetManifest::default()
    };
    let mut c = BenchConfig::new(manifest, 5);
    c.light.epochs = 2;
    c.large.epochs = 1;
    c.head.epochs = 5;
    c
}

fn tiny_run() -> &'static BenchRun {
    static RUN: OnceLock<BenchRun> = OnceLock::new();
    RUN.get_or_init(|| run_benchmark(&tiny_config(), None).unwrap())
}

#[test]
fn percentile_nearest_rank() {
    let v: Vec<f64> = (1..=20).rev().map(f64::from).collect();
    assert_eq!(percentile(&v, 0.95), 19.0);
    assert_eq!(percentile(&v, 1.0), 20.0);
    assert_eq!(percentile(&[3.0], 0.95), 3.0);
    assert_eq!(percentile(&[], 0.5), 0.0);
}

#[test]
fn threshold_choice_respects_the_latency_cap() {
    let point = |t: f64, acc: f64, ms: f64| SweepPoint {
        threshold: t,
        payload: PayloadKindName::FullImage,
        condition: "all".into(),
        metrics: Metrics {
            accuracy: acc,
            mean_latency_ms: ms,
            ..Metrics::of(&[])
        },
    };
    let pts = [
        point(0.0, 80.0, 10.0),
        point(0.5, 90.0, 30.0),
        point(0.7, 90.0, 35.0),
        point(1.0, 95.0, 60.0),
    ];
    assert_eq!(choose_threshold(&pts, 50.0), Some(0.5));
    assert_eq!(choose_threshold(&pts, 5.0), None);
}

#[test]
fn config_validation() {
    assert!(tiny_config().validate().is_ok());
    let mut c = tiny_config();
    c.thresholds = vec![0.5, 0.4];
    assert!(c.validate().is_err());
    let mut c = tiny_config();
    c.thresholds = vec![0.5, 1.2];
    assert!(c.validate().is_err());
    let mut c = tiny_config();
    c.profile.bandwidth_bytes_per_s = 0;
    assert!(c.validate().is_err());
}

#[test]
fn report_covers_the_full_grid() {
    let r = &tiny_run().report;
    assert_eq!(r.rows.len(), 12);
    assert_eq!(r.overall.len(), 3);
    for mode in Mode::ALL {
        for c in Condition::ALL {
            let m = r.row(mode, c).unwrap();
            assert!((0.0..=100.0).contains(&m.accuracy));
            assert!((0.0..=1.0).contains(&m.escalation_rate));
            assert!(m.samples > 0);
        }
    }
    assert_eq!(r.drops.len(), 3);
    assert_eq!(r.sweep.len(), 3 * r.config.thresholds.len() * 5);
    assert!(r.config.thresholds.contains(&r.operating_threshold));
}

#[test]
fn zero_threshold_is_the_edge_row() {
    let r = &tiny_run().report;
    for c in Condition::ALL {
        let edge = r.row(Mode::EdgeOnly, c).unwrap();
        let zero = r
            .sweep_at(r.config.payload, c.name())
            .into_iter()
            .find(|p| p.threshold == 0.0)
            .unwrap();
        assert_eq!(&zero.metrics, edge);
    }
    assert!(r.degeneracy.iter().all(|d| d.zero_threshold_is_edge_only));
}

#[test]
fn escalation_grows_with_threshold() {
    let r = &tiny_run().report;
    for p in PayloadKindName::ALL {
        for c in ["all", "Normal", "LowLight"] {
            let curve = r.sweep_at(p, c);
            assert!(!curve.is_empty());
            for w in curve.windows(2) {
                assert!(w[0].threshold < w[1].threshold);
                assert!(w[0].metrics.escalation_rate <= w[1].metrics.escalation_rate);
            }
        }
    }
}

#[test]
fn latency_and_bytes_close() {
    let run = tiny_run();
    let mut escalated = 0;
    for line in &run.raw {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let Some(res) = v.get("result") else { continue };
        let r: ClassificationResult = serde_json::from_value(res.clone()).unwrap();
        let t = r.timing;
        assert!((t.total_ms - (t.edge_ms + t.network_ms + t.cloud_ms)).abs() < 1.0);
        let full =
            v["mode"] == "cloud_only" || run.report.config.payload == PayloadKindName::FullImage;
        if r.provenance != Provenance::Edge && full {
            escalated += 1;
            let classes = run.report.config.manifest.class_count;
            assert_eq!(r.bytes_sent, OVERHEAD + 8 + 1 + 6 + 4 * 3 * 32 * 32);
            assert_eq!(r.bytes_received, OVERHEAD + 8 + 2 + 4 * classes + 4);
        }
    }
    assert!(escalated > 0);
    for p in &run.report.sweep {
        let m = &p.metrics;
        assert!((m.mean_bytes - m.escalation_rate * m.mean_escalated_bytes).abs() < 1e-6);
    }
}

#[test]
fn payload_sizes_are_ordered() {
    let r = &tiny_run().report;
    let b = |k: PayloadKindName| {
        r.payloads
            .iter()
            .find(|p| p.payload == k)
            .unwrap()
            .request_bytes_per_escalation
    };
    if r.payloads[0].escalation_rate > 0.0 {
        assert!(b(PayloadKindName::Features) < b(PayloadKindName::Roi));
        assert!(b(PayloadKindName::Roi) <= b(PayloadKindName::FullImage));
    }
}

#[test]
fn outputs_are_written_and_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cache = dir.path().join("cache");
    let first = run_benchmark(&tiny_config(), Some(&cache)).unwrap();
    assert_eq!(first.measured.models_from_cache, 0);
    assert_eq!(first.report, tiny_run().report);
    let again = run_benchmark(&tiny_config(), Some(&cache)).unwrap();
    assert_eq!(again.measured.models_from_cache, 3);
    assert_eq!(again.report.to_json(), first.report.to_json());

    let files = write_outputs(&again, &dir.path().join("out")).unwrap();
    for f in &files {
        assert!(std::fs::metadata(f).unwrap().len() > 0, "{}", f.display());
    }
    let csv = std::fs::read_to_string(dir.path().join("out/sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 1 + again.report.sweep.len());
    let text = std::fs::read_to_string(dir.path().join("out/report.txt")).unwrap();
    assert!(text.contains("hybrid") && text.contains("ComplexBackground"));
    let json: BenchReport =
        serde_json::from_str(&std::fs::read_to_string(dir.path().join("out/report.json")).unwrap())
            .unwrap();
    assert_eq!(json, again.report);
}

#[test]
fn total_loss_makes_hybrid_the_edge_model() {
    let mut c = tiny_config();
    c.profile.drop_probability = 1.0;
    let r = run_benchmark(&c, None).unwrap().report;
    for cond in Condition::ALL {
        let e = r.row(Mode::EdgeOnly, cond).unwrap().accuracy;
        assert_eq!(r.row(Mode::Hybrid, cond).unwrap().accuracy, e);
        assert_eq!(r.row(Mode::CloudOnly, cond).unwrap().accuracy, 0.0);
    }
}
