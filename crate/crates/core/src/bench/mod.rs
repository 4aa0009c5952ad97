//! Train both models, evaluate edge-only, cloud-only and hybrid modes over
//! every capture condition, sweep τ, and tabulate.

pub mod network;
mod report;

use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use cjade_nn::Tensor;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use network::{
    DelayMode, LegPlan, MemoTransport, NetworkProfile, SimulatedNetwork, UNLIMITED_BANDWIDTH,
};
pub use report::{render_text, sweep_csv};

use crate::cascade::{
    build_payload, classify_edge, classify_remote, complete_cascade, image_payload, CascadeError,
    CascadePolicy, ClassificationResult, EdgeAnalysis, EdgeModel, EdgeTiming, Fallback, FusionRule,
    PayloadKindName, Provenance, Transport,
};
use crate::dataset::{
    build_dataset, mix_seed, Condition, DatasetError, DatasetManifest, SampleRecord,
};
use crate::models::io::canonical_json;
use crate::models::{
    build_feature_head, build_large, build_lightweight, load_weights, save_weights, train, Augment,
    ModelArtifact, ModelError, TrainConfig,
};
use crate::protocol::{dequantize, quantize_features, RequestBody};
use crate::server::{CloudTiming, InProcessTransport, ServerCore, ServerError};

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("invalid benchmark configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Dataset(#[from] DatasetError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Cascade(#[from] CascadeError),
    #[error(transparent)]
    Server(#[from] ServerError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// `overhead + MACs / rate`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComputeModel {
    pub macs_per_ms: f64,
    pub overhead_ms: f64,
}

impl ComputeModel {
    pub fn ms(&self, macs: u64) -> f64 {
        self.overhead_ms + macs as f64 / self.macs_per_ms
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchConfig {
    pub manifest: DatasetManifest,
    pub seed: u64,
    pub light: TrainConfig,
    pub large: TrainConfig,
    pub head: TrainConfig,
    pub profile: NetworkProfile,
    pub thresholds: Vec<f64>,
    /// Payload and fusion of the reported hybrid mode.
    pub payload: PayloadKindName,
    pub fusion: FusionRule,
    pub roi_margin: f64,
    pub timeout_ms: u64,
    pub edge_compute: ComputeModel,
    pub cloud_compute: ComputeModel,
}

pub const DEFAULT_THRESHOLDS: [f64; 14] = [
    0.0, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.85, 0.9, 0.95, 0.98, 0.99, 0.999, 1.0,
];

impl BenchConfig {
    /// Default pipeline; every model and training seed derives from `seed`.
    pub fn new(manifest: DatasetManifest, seed: u64) -> Self {
        Self {
            manifest,
            seed,
            light: TrainConfig::new(12, mix_seed(&[seed, 0x4c54])),
            large: TrainConfig::new(12, mix_seed(&[seed, 0x4c47]))
                .with_augment(Augment::ScaleAndCrop),
            head: TrainConfig::new(40, mix_seed(&[seed, 0x4844])),
            profile: NetworkProfile {
                seed: mix_seed(&[seed, 0x4e57]),
                ..NetworkProfile::default()
            },
            thresholds: DEFAULT_THRESHOLDS.to_vec(),
            payload: PayloadKindName::FullImage,
            fusion: FusionRule::WeightedAverage(0.5),
            roi_margin: crate::cascade::DEFAULT_ROI_MARGIN,
            timeout_ms: crate::cascade::DEFAULT_TIMEOUT_MS,
            edge_compute: ComputeModel {
                macs_per_ms: 150_000.0,
                overhead_ms: 0.5,
            },
            cloud_compute: ComputeModel {
                macs_per_ms: 8_000_000.0,
                overhead_ms: 0.5,
            },
        }
    }

    pub fn light_init_seed(&self) -> u64 {
        mix_seed(&[self.seed, 1])
    }

    pub fn large_init_seed(&self) -> u64 {
        mix_seed(&[self.seed, 2])
    }

    pub fn head_init_seed(&self) -> u64 {
        mix_seed(&[self.seed, 3])
    }

    pub fn validate(&self) -> Result<(), BenchError> {
        let bad = |m: String| Err(BenchError::Config(m));
        self.manifest.validate()?;
        self.profile.validate().map_err(BenchError::Config)?;
        if self.thresholds.is_empty() {
            return bad("empty threshold grid".into());
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("thresholds must be strictly increasing".into());
        }
        for &t in &self.thresholds {
            self.policy(t, self.payload, self.fusion).validate()?;
        }
        for c in [self.edge_compute, self.cloud_compute] {
            if !(c.macs_per_ms > 0.0 && c.overhead_ms >= 0.0) {
                return bad(format!("compute model {c:?}"));
            }
        }
        Ok(())
    }

    pub fn policy(
        &self,
        threshold: f64,
        payload: PayloadKindName,
        fusion: FusionRule,
    ) -> CascadePolicy {
        CascadePolicy {
            threshold,
            payload,
            roi_margin: self.roi_margin,
            fusion,
            fallback: Fallback::EdgeResultFlagged,
            timeout_ms: self.timeout_ms,
        }
    }

    fn edge_timing(&self) -> EdgeTiming {
        EdgeTiming::Modeled {
            macs_per_ms: self.edge_compute.macs_per_ms,
            overhead_ms: self.edge_compute.overhead_ms,
        }
    }

    fn cloud_timing(&self) -> CloudTiming {
        CloudTiming::Modeled {
            macs_per_ms: self.cloud_compute.macs_per_ms,
            overhead_ms: self.cloud_compute.overhead_ms,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    EdgeOnly,
    CloudOnly,
    Hybrid,
}

impl Mode {
    pub const ALL: [Mode; 3] = [Mode::EdgeOnly, Mode::CloudOnly, Mode::Hybrid];

    pub fn name(self) -> &'static str {
        match self {
            Mode::EdgeOnly => "edge-only",
            Mode::CloudOnly => "cloud-only",
            Mode::Hybrid => "hybrid",
        }
    }
}

/// What one classification of one sample cost and whether it was right.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Outcome {
    pub index: usize,
    pub label: usize,
    pub condition: Condition,
    pub correct: bool,
    pub latency_ms: f64,
    pub bytes: usize,
    pub escalated: bool,
    pub edge_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<ClassificationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Outcome {
    fn from_result(s: &SampleRecord, index: usize, r: ClassificationResult) -> Self {
        Self {
            index,
            label: s.label,
            condition: s.condition,
            correct: r.label == s.label,
            latency_ms: r.timing.total_ms,
            bytes: r.bytes_sent + r.bytes_received,
            escalated: r.provenance != Provenance::Edge,
            edge_ms: r.timing.edge_ms,
            result: Some(r),
            error: None,
        }
    }

    fn from_error(s: &SampleRecord, index: usize, e: CascadeError) -> Result<Self, BenchError> {
        let CascadeError::Transport { failure, timing } = &e else {
            return Err(e.into());
        };
        Ok(Self {
            index,
            label: s.label,
            condition: s.condition,
            correct: false,
            latency_ms: timing.total_ms,
            bytes: failure.bytes_sent + failure.bytes_received,
            escalated: true,
            edge_ms: timing.edge_ms,
            result: None,
            error: Some(e.to_string()),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub samples: usize,
    /// Percent.
    pub accuracy: f64,
    pub mean_latency_ms: f64,
    pub p95_latency_ms: f64,
    /// Sent plus received, per sample.
    pub mean_bytes: f64,
    pub escalation_rate: f64,
    /// Sent plus received, per escalated sample; 0 if none escalated.
    pub mean_escalated_bytes: f64,
    pub edge_ms_per_image: f64,
    pub failures: usize,
}

/// Nearest-rank percentile of an unsorted slice.
pub fn percentile(values: &[f64], q: f64) -> f64 {
    if values.is_empty() {
        return 0.0;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let rank = ((q * v.len() as f64).ceil() as usize).clamp(1, v.len());
    v[rank - 1]
}

impl Metrics {
    pub fn of<'a>(outcomes: impl IntoIterator<Item = &'a Outcome>) -> Self {
        let o: Vec<&Outcome> = outcomes.into_iter().collect();
        let n = o.len();
        if n == 0 {
            return Self {
                samples: 0,
                accuracy: 0.0,
                mean_latency_ms: 0.0,
                p95_latency_ms: 0.0,
                mean_bytes: 0.0,
                escalation_rate: 0.0,
                mean_escalated_bytes: 0.0,
                edge_ms_per_image: 0.0,
                failures: 0,
            };
        }
        let nf = n as f64;
        let latencies: Vec<f64> = o.iter().map(|x| x.latency_ms).collect();
        let escalated: Vec<&&Outcome> = o.iter().filter(|x| x.escalated).collect();
        Self {
            samples: n,
            accuracy: 100.0 * o.iter().filter(|x| x.correct).count() as f64 / nf,
            mean_latency_ms: latencies.iter().sum::<f64>() / nf,
            p95_latency_ms: percentile(&latencies, 0.95),
            mean_bytes: o.iter().map(|x| x.bytes as f64).sum::<f64>() / nf,
            escalation_rate: escalated.len() as f64 / nf,
            mean_escalated_bytes: if escalated.is_empty() {
                0.0
            } else {
                escalated.iter().map(|x| x.bytes as f64).sum::<f64>() / escalated.len() as f64
            },
            edge_ms_per_image: o.iter().map(|x| x.edge_ms).sum::<f64>() / nf,
            failures: o.iter().filter(|x| x.error.is_some()).count(),
        }
    }
}

/// `None` means every condition together.
pub fn condition_label(c: Option<Condition>) -> &'static str {
    c.map(Condition::name).unwrap_or("all")
}

fn conditions() -> impl Iterator<Item = Option<Condition>> {
    std::iter::once(None).chain(Condition::ALL.into_iter().map(Some))
}

fn select(outcomes: &[Outcome], c: Option<Condition>) -> impl Iterator<Item = &Outcome> {
    outcomes
        .iter()
        .filter(move |o| c.is_none_or(|c| o.condition == c))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModeRow {
    pub mode: Mode,
    pub condition: Condition,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverallRow {
    pub mode: Mode,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DropRow {
    pub condition: Condition,
    /// Accuracy points lost versus Normal, per mode in `Mode::ALL` order.
    pub edge_only: f64,
    pub cloud_only: f64,
    pub hybrid: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub threshold: f64,
    pub payload: PayloadKindName,
    /// A condition name or `all`.
    pub condition: String,
    pub metrics: Metrics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PayloadRow {
    pub payload: PayloadKindName,
    pub threshold: f64,
    /// Request bytes on the wire per escalated sample.
    pub request_bytes_per_escalation: f64,
    pub hybrid_accuracy: f64,
    pub escalation_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DegeneracyRow {
    pub payload: PayloadKindName,
    /// Server-only accuracy on this payload kind (edge pass used only to
    /// build the payload).
    pub cloud_only_accuracy: f64,
    /// Cascade at τ = 1 with CloudWins.
    pub unit_threshold_accuracy: f64,
    pub unit_threshold_escalation_rate: f64,
    /// Every τ = 0 result is identical to the edge-only result.
    pub zero_threshold_is_edge_only: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSummary {
    pub name: String,
    pub fingerprint: String,
    pub parameters: usize,
    pub macs: u64,
    pub val_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub dataset_hash: String,
    pub models: Vec<ModelSummary>,
    /// τ of the hybrid rows, chosen on the validation split.
    pub operating_threshold: f64,
    /// Each mode over the whole test split.
    pub overall: Vec<OverallRow>,
    pub rows: Vec<ModeRow>,
    pub drops: Vec<DropRow>,
    pub sweep: Vec<SweepPoint>,
    pub val_sweep: Vec<SweepPoint>,
    pub payloads: Vec<PayloadRow>,
    pub degeneracy: Vec<DegeneracyRow>,
}

impl BenchReport {
    pub fn overall(&self, mode: Mode) -> Option<&Metrics> {
        self.overall
            .iter()
            .find(|r| r.mode == mode)
            .map(|r| &r.metrics)
    }

    pub fn row(&self, mode: Mode, condition: Condition) -> Option<&Metrics> {
        self.rows
            .iter()
            .find(|r| r.mode == mode && r.condition == condition)
            .map(|r| &r.metrics)
    }

    pub fn sweep_at(&self, payload: PayloadKindName, condition: &str) -> Vec<&SweepPoint> {
        self.sweep
            .iter()
            .filter(|p| p.payload == payload && p.condition == condition)
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

/// Wall-clock facts about one run; kept out of the report so it stays
/// reproducible.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Measured {
    pub dataset_s: f64,
    pub light_train_s: f64,
    pub large_train_s: f64,
    pub head_train_s: f64,
    pub evaluate_s: f64,
    pub total_s: f64,
    pub edge_wall_ms_per_image: f64,
    pub models_from_cache: usize,
}

pub struct BenchRun {
    pub report: BenchReport,
    /// One JSON object per (mode, test sample) at the operating point.
    pub raw: Vec<String>,
    pub light: ModelArtifact,
    pub large: ModelArtifact,
    pub head: ModelArtifact,
    pub measured: Measured,
}

fn cache_key(kind: &str, parts: &[&str]) -> String {
    let mut h = Sha256::new();
    h.update(kind.as_bytes());
    for p in parts {
        h.update([0u8]);
        h.update(p.as_bytes());
    }
    format!("{kind}-{}", &crate::dataset::hex(&h.finalize())[..16])
}

fn cached(
    cache: Option<&Path>,
    key: &str,
    hits: &mut usize,
    make: impl FnOnce() -> Result<ModelArtifact, BenchError>,
) -> Result<ModelArtifact, BenchError> {
    let Some(dir) = cache else { return make() };
    let path = dir.join(format!("{key}.cjw"));
    if path.exists() {
        match load_weights(&path) {
            Ok(m) => {
                *hits += 1;
                return Ok(m);
            }
            Err(e) => log::warn!("ignoring unreadable cache entry {}: {e}", path.display()),
        }
    }
    let m = make()?;
    std::fs::create_dir_all(dir)?;
    save_weights(&m, &path)?;
    Ok(m)
}

fn normal_only(samples: &[SampleRecord]) -> Vec<SampleRecord> {
    samples
        .iter()
        .filter(|s| s.condition == Condition::Normal)
        .cloned()
        .collect()
}

fn finish_meta(mut m: ModelArtifact, manifest_hash: &str, val: f64) -> ModelArtifact {
    m.meta.dataset_hash = manifest_hash.to_string();
    m.meta.val_accuracy = Some(val);
    m
}

/// The quantize-dequantize round trip the server will see.
fn wire_features(edge: &EdgeModel, image: &Tensor) -> Result<Tensor, BenchError> {
    let f = edge.analyze(image)?.features;
    let q = quantize_features(&f).map_err(CascadeError::from)?;
    Ok(Tensor::new(vec![f.len()], dequantize(&q)).map_err(ModelError::from)?)
}

fn feature_set(
    edge: &EdgeModel,
    samples: &[SampleRecord],
) -> Result<Vec<(Tensor, usize)>, BenchError> {
    samples
        .iter()
        .map(|s| Ok((wire_features(edge, &s.image)?, s.label)))
        .collect()
}

/// Trains (or loads) the three models a run needs.
pub fn train_models(
    config: &BenchConfig,
    train_set: &[SampleRecord],
    val_normal: &[SampleRecord],
    cache: Option<&Path>,
    measured: &mut Measured,
) -> Result<(ModelArtifact, ModelArtifact, ModelArtifact), BenchError> {
    let m = &config.manifest;
    let mh = m.hash();
    let classes = m.class_count;

    let t = Instant::now();
    let light_key = cache_key(
        "light",
        &[
            &mh,
            &canonical_json(&config.light),
            &config.light_init_seed().to_string(),
        ],
    );
    let light = cached(cache, &light_key, &mut measured.models_from_cache, || {
        let init = build_lightweight(classes, m.image_size, config.light_init_seed())?;
        let (model, log) = train(&init, train_set, val_normal, &config.light)?;
        Ok(finish_meta(model, &mh, log.final_val_accuracy))
    })?;
    measured.light_train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let large_key = cache_key(
        "large",
        &[
            &mh,
            &canonical_json(&config.large),
            &config.large_init_seed().to_string(),
        ],
    );
    let large = cached(cache, &large_key, &mut measured.models_from_cache, || {
        let init = build_large(classes, m.image_size, config.large_init_seed())?;
        let (model, log) = train(&init, train_set, val_normal, &config.large)?;
        Ok(finish_meta(model, &mh, log.final_val_accuracy))
    })?;
    measured.large_train_s = t.elapsed().as_secs_f64();

    let t = Instant::now();
    let head_key = cache_key(
        "head",
        &[
            &light.fingerprint_hex(),
            &canonical_json(&config.head),
            &config.head_init_seed().to_string(),
        ],
    );
    let head = cached(cache, &head_key, &mut measured.models_from_cache, || {
        let edge = EdgeModel::new(light.clone())?;
        let tr = feature_set(&edge, train_set)?;
        let va = feature_set(&edge, val_normal)?;
        let init = build_feature_head(&light, config.head_init_seed())?;
        let (model, log) = train(&init, &tr, &va, &config.head)?;
        Ok(finish_meta(model, &mh, log.final_val_accuracy))
    })?;
    measured.head_train_s = t.elapsed().as_secs_f64();
    Ok((light, large, head))
}

/// Every outcome the report needs for one split.
struct SplitEval {
    edge: Vec<Outcome>,
    cloud: Vec<Outcome>,
    /// `(payload, τ index) -> outcomes`, τ in config order.
    hybrid: Vec<(PayloadKindName, Vec<Vec<Outcome>>)>,
    /// Server-only on each payload, and the cascade at τ = 1 with CloudWins.
    payload_cloud: Vec<(PayloadKindName, Vec<Outcome>, Vec<Outcome>)>,
    zero_matches: Vec<(PayloadKindName, bool)>,
}

fn request_id(split: u64, index: usize) -> u64 {
    (split << 32) | (index as u64 + 1)
}

fn evaluate_split(
    config: &BenchConfig,
    samples: &[SampleRecord],
    split: u64,
    edge: &EdgeModel,
    transport: &mut dyn Transport,
    payloads: &[PayloadKindName],
    oracles: bool,
    edge_wall_ms: &mut f64,
) -> Result<SplitEval, BenchError> {
    let classes = edge.class_count();
    let t = Instant::now();
    let passes: Vec<(ClassificationResult, EdgeAnalysis)> = samples
        .iter()
        .map(|s| classify_edge(&s.image, edge, config.edge_timing()))
        .collect::<Result<_, _>>()?;
    *edge_wall_ms = t.elapsed().as_secs_f64() * 1e3 / samples.len().max(1) as f64;

    let edge_outcomes: Vec<Outcome> = samples
        .iter()
        .zip(&passes)
        .enumerate()
        .map(|(i, (s, (r, _)))| Outcome::from_result(s, i, r.clone()))
        .collect();

    let remote =
        |body: RequestBody, s: &SampleRecord, i: usize, t: &mut dyn Transport, edge_ms: f64| {
            match classify_remote(body, classes, t, request_id(split, i), config.timeout_ms) {
                Ok(mut r) => {
                    r.timing = r
                        .timing
                        .plus(&crate::cascade::Timing::new(edge_ms, 0.0, 0.0));
                    Ok(Outcome::from_result(s, i, r))
                }
                Err(e) => Outcome::from_error(s, i, e),
            }
        };

    let mut cloud = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        cloud.push(remote(
            RequestBody::FullImage(image_payload(&s.image)?),
            s,
            i,
            transport,
            0.0,
        )?);
    }

    let run = |t: &mut dyn Transport, policy: &CascadePolicy| -> Result<Vec<Outcome>, BenchError> {
        let mut out = Vec::with_capacity(samples.len());
        for (i, (s, (r, a))) in samples.iter().zip(&passes).enumerate() {
            out.push(
                match complete_cascade(&s.image, a, r.clone(), policy, t, request_id(split, i)) {
                    Ok(r) => Outcome::from_result(s, i, r),
                    Err(e) => Outcome::from_error(s, i, e)?,
                },
            );
        }
        Ok(out)
    };

    let mut hybrid = Vec::new();
    let mut payload_cloud = Vec::new();
    let mut zero_matches = Vec::new();
    for &p in payloads {
        let mut curve = Vec::with_capacity(config.thresholds.len());
        for &tau in &config.thresholds {
            curve.push(run(transport, &config.policy(tau, p, config.fusion))?);
        }
        hybrid.push((p, curve));
        if oracles {
            let mut only = Vec::with_capacity(samples.len());
            for (i, (s, (r, a))) in samples.iter().zip(&passes).enumerate() {
                let body = build_payload(&s.image, a, p, config.roi_margin)?;
                only.push(remote(body, s, i, transport, r.timing.edge_ms)?);
            }
            let unit = run(transport, &config.policy(1.0, p, FusionRule::CloudWins))?;
            payload_cloud.push((p, only, unit));
            let zero = run(transport, &config.policy(0.0, p, config.fusion))?;
            let same = zero
                .iter()
                .zip(&edge_outcomes)
                .all(|(z, e)| z.result == e.result);
            zero_matches.push((p, same));
        }
    }
    Ok(SplitEval {
        edge: edge_outcomes,
        cloud,
        hybrid,
        payload_cloud,
        zero_matches,
    })
}

fn sweep_points(config: &BenchConfig, eval: &SplitEval) -> Vec<SweepPoint> {
    let mut out = Vec::new();
    for (p, curve) in &eval.hybrid {
        for (tau, outcomes) in config.thresholds.iter().zip(curve) {
            for c in conditions() {
                out.push(SweepPoint {
                    threshold: *tau,
                    payload: *p,
                    condition: condition_label(c).to_string(),
                    metrics: Metrics::of(select(outcomes, c)),
                });
            }
        }
    }
    out
}

/// Highest accuracy over all conditions among the τ whose mean latency
/// stays below cloud-only; ties go to the smaller τ.
pub fn choose_threshold(points: &[SweepPoint], cloud_latency_ms: f64) -> Option<f64> {
    let mut best: Option<&SweepPoint> = None;
    for p in points.iter().filter(|p| p.condition == "all") {
        if p.metrics.mean_latency_ms >= cloud_latency_ms {
            continue;
        }
        if best.is_none_or(|b| p.metrics.accuracy > b.metrics.accuracy) {
            best = Some(p);
        }
    }
    best.map(|p| p.threshold)
}

fn summary(name: &str, m: &ModelArtifact) -> Result<ModelSummary, BenchError> {
    Ok(ModelSummary {
        name: name.to_string(),
        fingerprint: m.fingerprint_hex(),
        parameters: m.param_count(),
        macs: m.spec().mac_count().map_err(ModelError::from)?,
        val_accuracy: m.meta.val_accuracy,
    })
}

#[derive(Serialize)]
struct RawLine<'a> {
    mode: Mode,
    index: usize,
    condition: Condition,
    label: usize,
    correct: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    result: &'a Option<ClassificationResult>,
    #[serde(skip_serializing_if = "Option::is_none")]
    error: &'a Option<String>,
}

/// The whole pipeline. With `cache`, trained models are stored there keyed
/// by everything that determines them and reused on later runs.
pub fn run_benchmark(config: &BenchConfig, cache: Option<&Path>) -> Result<BenchRun, BenchError> {
    let start = Instant::now();
    config.validate()?;
    let mut measured = Measured::default();

    let t = Instant::now();
    let data = build_dataset(&config.manifest)?;
    measured.dataset_s = t.elapsed().as_secs_f64();
    let val_normal = normal_only(&data.val);
    let (light, large, head) =
        train_models(config, &data.train, &val_normal, cache, &mut measured)?;

    let t = Instant::now();
    let edge = EdgeModel::new(light.clone())?;
    let core = Arc::new(ServerCore::pinned(large.clone(), head.clone(), &light)?);
    let inner = MemoTransport::new(InProcessTransport::new(
        Arc::clone(&core),
        config.cloud_timing(),
    ));
    let mut transport = SimulatedNetwork::new(inner, config.profile.clone(), DelayMode::Virtual)
        .map_err(BenchError::Config)?;

    let mut ignored = 0.0;
    let val = evaluate_split(
        config,
        &data.val,
        1,
        &edge,
        &mut transport,
        &[config.payload],
        false,
        &mut ignored,
    )?;
    let val_sweep = sweep_points(config, &val);
    let val_cloud = Metrics::of(&val.cloud).mean_latency_ms;
    let operating = choose_threshold(&val_sweep, val_cloud).unwrap_or(0.0);

    let test = evaluate_split(
        config,
        &data.test,
        2,
        &edge,
        &mut transport,
        &PayloadKindName::ALL,
        true,
        &mut measured.edge_wall_ms_per_image,
    )?;
    let sweep = sweep_points(config, &test);
    let tau_index = config
        .thresholds
        .iter()
        .position(|&t| t == operating)
        .expect("operating τ comes from the grid");
    let hybrid = &test
        .hybrid
        .iter()
        .find(|(p, _)| *p == config.payload)
        .expect("configured payload evaluated")
        .1[tau_index];

    let by_mode = [
        (Mode::EdgeOnly, &test.edge),
        (Mode::CloudOnly, &test.cloud),
        (Mode::Hybrid, hybrid),
    ];
    let overall = by_mode
        .iter()
        .map(|(mode, outcomes)| OverallRow {
            mode: *mode,
            metrics: Metrics::of(outcomes.iter()),
        })
        .collect();
    let mut rows = Vec::new();
    for (mode, outcomes) in by_mode {
        for c in Condition::ALL {
            rows.push(ModeRow {
                mode,
                condition: c,
                metrics: Metrics::of(select(outcomes, Some(c))),
            });
        }
    }
    let acc = |mode: Mode, c: Condition| {
        rows.iter()
            .find(|r| r.mode == mode && r.condition == c)
            .map(|r| r.metrics.accuracy)
            .expect("full grid")
    };
    let drops = Condition::ALL[1..]
        .iter()
        .map(|&c| DropRow {
            condition: c,
            edge_only: acc(Mode::EdgeOnly, Condition::Normal) - acc(Mode::EdgeOnly, c),
            cloud_only: acc(Mode::CloudOnly, Condition::Normal) - acc(Mode::CloudOnly, c),
            hybrid: acc(Mode::Hybrid, Condition::Normal) - acc(Mode::Hybrid, c),
        })
        .collect();

    let payloads = test
        .hybrid
        .iter()
        .map(|(p, curve)| {
            let o = &curve[tau_index];
            let escalated: Vec<&Outcome> = o.iter().filter(|x| x.escalated).collect();
            let sent: f64 = escalated
                .iter()
                .map(|x| x.result.as_ref().map_or(0, |r| r.bytes_sent) as f64)
                .sum();
            let m = Metrics::of(o);
            PayloadRow {
                payload: *p,
                threshold: operating,
                request_bytes_per_escalation: if escalated.is_empty() {
                    0.0
                } else {
                    sent / escalated.len() as f64
                },
                hybrid_accuracy: m.accuracy,
                escalation_rate: m.escalation_rate,
            }
        })
        .collect();

    let degeneracy = test
        .payload_cloud
        .iter()
        .zip(&test.zero_matches)
        .map(|((p, only, unit), (_, zero))| {
            let u = Metrics::of(unit);
            DegeneracyRow {
                payload: *p,
                cloud_only_accuracy: Metrics::of(only).accuracy,
                unit_threshold_accuracy: u.accuracy,
                unit_threshold_escalation_rate: u.escalation_rate,
                zero_threshold_is_edge_only: *zero,
            }
        })
        .collect();

    let mut raw = Vec::new();
    for (mode, outcomes) in by_mode {
        for o in outcomes.iter() {
            let line = RawLine {
                mode,
                index: o.index,
                condition: o.condition,
                label: o.label,
                correct: o.correct,
                result: &o.result,
                error: &o.error,
            };
            raw.push(serde_json::to_string(&line)?);
        }
    }
    measured.evaluate_s = t.elapsed().as_secs_f64();
    measured.total_s = start.elapsed().as_secs_f64();

    let report = BenchReport {
        config: config.clone(),
        dataset_hash: data.content_hash(),
        models: vec![
            summary("lightweight", &light)?,
            summary("large", &large)?,
            summary("feature-head", &head)?,
        ],
        operating_threshold: operating,
        overall,
        rows,
        drops,
        sweep,
        val_sweep,
        payloads,
        degeneracy,
    };
    Ok(BenchRun {
        report,
        raw,
        light,
        large,
        head,
        measured,
    })
}

/// Writes report.txt, report.json, raw.jsonl, sweep.csv and the three
/// weight files into `out`.
pub fn write_outputs(run: &BenchRun, out: &Path) -> Result<Vec<PathBuf>, BenchError> {
    std::fs::create_dir_all(out)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: &[u8]| -> Result<(), BenchError> {
        let p = out.join(name);
        std::fs::write(&p, bytes)?;
        written.push(p);
        Ok(())
    };
    put("report.json", run.report.to_json().as_bytes())?;
    put(
        "report.txt",
        render_text(&run.report, Some(&run.measured)).as_bytes(),
    )?;
    let mut raw = run.raw.join("\n");
    if !raw.is_empty() {
        raw.push('\n');
    }
    put("raw.jsonl", raw.as_bytes())?;
    put("sweep.csv", sweep_csv(&run.report).as_bytes())?;
    for (name, m) in [
        ("light.cjw", &run.light),
        ("large.cjw", &run.large),
        ("head.cjw", &run.head),
    ] {
        let p = out.join(name);
        save_weights(m, &p)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests;
