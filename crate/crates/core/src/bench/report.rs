use std::fmt::Write;

use super::{BenchReport, Measured, Mode};
use crate::dataset::Condition;

fn rule(out: &mut String, width: usize) {
    out.push_str(&"-".repeat(width));
    out.push('\n');
}

/// Aligned text tables: the mode comparison on Normal images, accuracy per
/// condition, payload costs, the τ sweep and the degenerate-policy checks.
pub fn render_text(report: &BenchReport, measured: Option<&Measured>) -> String {
    let mut s = String::new();
    let w = &mut s;
    let _ = writeln!(
        w,
        "cascade benchmark  seed {}  dataset {}",
        report.config.seed,
        &report.dataset_hash[..16]
    );
    let _ = writeln!(
        w,
        "network {:.0} ms +/- {:.0} ms, {} B/s, drop {}; hybrid payload {}, fusion {:?}, tau {}",
        report.config.profile.latency_ms,
        report.config.profile.jitter_ms,
        report.config.profile.bandwidth_bytes_per_s,
        report.config.profile.drop_probability,
        report.config.payload.name(),
        report.config.fusion,
        report.operating_threshold
    );
    let _ = writeln!(w);
    let _ = writeln!(
        w,
        "{:<14}{:>18}{:>12}{:>12}{:>10}",
        "model", "fingerprint", "params", "MACs", "val acc"
    );
    for m in &report.models {
        let _ = writeln!(
            w,
            "{:<14}{:>18}{:>12}{:>12}{:>10}",
            m.name,
            m.fingerprint,
            m.parameters,
            m.macs,
            m.val_accuracy
                .map_or("-".to_string(), |v| format!("{:.1}", 100.0 * v))
        );
    }

    for (title, normal) in [
        ("Modes on all test images", false),
        ("Modes on Normal test images", true),
    ] {
        let _ = writeln!(w, "\n{title}");
        let header = format!(
            "{:<12}{:>10}{:>12}{:>12}{:>12}{:>12}{:>12}",
            "mode", "acc %", "mean ms", "p95 ms", "bytes", "escalated", "edge ms"
        );
        let _ = writeln!(w, "{header}");
        rule(w, header.len());
        for mode in Mode::ALL {
            let row = if normal {
                report.row(mode, Condition::Normal)
            } else {
                report.overall(mode)
            };
            if let Some(m) = row {
                let _ = writeln!(
                    w,
                    "{:<12}{:>10.1}{:>12.2}{:>12.2}{:>12.0}{:>12.3}{:>12.2}",
                    mode.name(),
                    m.accuracy,
                    m.mean_latency_ms,
                    m.p95_latency_ms,
                    m.mean_bytes,
                    m.escalation_rate,
                    m.edge_ms_per_image
                );
            }
        }
    }

    let _ = writeln!(w, "\nAccuracy % by condition (drop vs Normal)");
    let header = format!(
        "{:<20}{:>18}{:>18}{:>18}",
        "condition", "edge-only", "cloud-only", "hybrid"
    );
    let _ = writeln!(w, "{header}");
    rule(w, header.len());
    for c in Condition::ALL {
        let cell = |mode: Mode| {
            let a = report.row(mode, c).map_or(0.0, |m| m.accuracy);
            let d = report
                .row(mode, Condition::Normal)
                .map_or(0.0, |m| m.accuracy)
                - a;
            if c == Condition::Normal {
                format!("{a:.1}")
            } else {
                format!("{a:.1} ({d:+.1})")
            }
        };
        let _ = writeln!(
            w,
            "{:<20}{:>18}{:>18}{:>18}",
            c.name(),
            cell(Mode::EdgeOnly),
            cell(Mode::CloudOnly),
            cell(Mode::Hybrid)
        );
    }

    let _ = writeln!(
        w,
        "\nPayloads at tau {} (all conditions)",
        report.operating_threshold
    );
    let header = format!(
        "{:<12}{:>22}{:>12}{:>12}",
        "payload", "request B/escalation", "acc %", "escalated"
    );
    let _ = writeln!(w, "{header}");
    rule(w, header.len());
    for p in &report.payloads {
        let _ = writeln!(
            w,
            "{:<12}{:>22.1}{:>12.1}{:>12.3}",
            p.payload.name(),
            p.request_bytes_per_escalation,
            p.hybrid_accuracy,
            p.escalation_rate
        );
    }

    let _ = writeln!(w, "\nDegenerate policies (all conditions)");
    let header = format!(
        "{:<12}{:>16}{:>18}{:>14}{:>16}",
        "payload", "server-only %", "tau=1 cloud %", "tau=1 esc", "tau=0 = edge"
    );
    let _ = writeln!(w, "{header}");
    rule(w, header.len());
    for d in &report.degeneracy {
        let _ = writeln!(
            w,
            "{:<12}{:>16.2}{:>18.2}{:>14.3}{:>16}",
            d.payload.name(),
            d.cloud_only_accuracy,
            d.unit_threshold_accuracy,
            d.unit_threshold_escalation_rate,
            d.zero_threshold_is_edge_only
        );
    }

    let _ = writeln!(
        w,
        "\nThreshold sweep, {} payload, Normal",
        report.config.payload.name()
    );
    let header = format!(
        "{:>8}{:>10}{:>12}{:>12}{:>12}",
        "tau", "acc %", "mean ms", "escalated", "bytes"
    );
    let _ = writeln!(w, "{header}");
    rule(w, header.len());
    for p in report.sweep_at(report.config.payload, Condition::Normal.name()) {
        let m = &p.metrics;
        let _ = writeln!(
            w,
            "{:>8}{:>10.1}{:>12.2}{:>12.3}{:>12.0}",
            p.threshold, m.accuracy, m.mean_latency_ms, m.escalation_rate, m.mean_bytes
        );
    }

    if let Some(m) = measured {
        let _ = writeln!(w, "\nMeasured on this machine (not part of report.json)");
        let _ = writeln!(
            w,
            "dataset {:.1} s, light {:.1} s, large {:.1} s, head {:.1} s, evaluation {:.1} s, total {:.1} s",
            m.dataset_s, m.light_train_s, m.large_train_s, m.head_train_s, m.evaluate_s, m.total_s
        );
        let _ = writeln!(
            w,
            "edge forward {:.3} ms per image wall clock; {} models from cache",
            m.edge_wall_ms_per_image, m.models_from_cache
        );
    }
    s
}

/// One row per (payload, τ, condition) of the test sweep.
pub fn sweep_csv(report: &BenchReport) -> String {
    let mut s = String::from(
        "payload,threshold,condition,samples,accuracy,mean_latency_ms,p95_latency_ms,escalation_rate,mean_bytes,mean_escalated_bytes\n",
    );
    for p in &report.sweep {
        let m = &p.metrics;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{},{}",
            p.payload.name(),
            p.threshold,
            p.condition,
            m.samples,
            m.accuracy,
            m.mean_latency_ms,
            m.p95_latency_ms,
            m.escalation_rate,
            m.mean_bytes,
            m.mean_escalated_bytes
        );
    }
    s
}
