//! Edge-first classification with confidence-gated escalation to the server.

mod edge;
mod roi;
pub mod transport;

use std::time::Instant;

use cjade_nn::Tensor;
use serde::{Deserialize, Serialize};

pub use edge::{edge_features, saliency_map, softmax, EdgeAnalysis, EdgeModel};
pub use roi::extract_roi;
pub use transport::{
    CloudReply, OfflineTransport, TcpTransport, Transport, TransportError, TransportFailure,
};

use crate::models::ModelError;
use crate::protocol::{
    quantize_features, ClassifyRequest, ImagePayload, PayloadKind, ProtocolError, RequestBody,
    RoiBox,
};

pub const DEFAULT_THRESHOLD: f64 = 0.85;
pub const DEFAULT_ROI_MARGIN: f64 = 0.0;
pub const DEFAULT_TIMEOUT_MS: u64 = 2000;
pub const PROBABILITY_TOLERANCE: f64 = 1e-5;

#[derive(Debug, thiserror::Error)]
pub enum CascadeError {
    #[error("invalid policy: {0}")]
    Policy(String),
    #[error("invalid probability vector: {0}")]
    Probabilities(String),
    #[error("class count mismatch: {0} vs {1}")]
    ClassMismatch(usize, usize),
    #[error("roi: {0}")]
    Roi(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("escalation failed after {:.3} ms: {}", .timing.total_ms, .failure.error)]
    Transport {
        failure: TransportFailure,
        timing: Timing,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", content = "alpha", rename_all = "snake_case")]
pub enum FusionRule {
    CloudWins,
    /// `α·cloud + (1 − α)·edge`.
    WeightedAverage(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    EdgeResultFlagged,
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CascadePolicy {
    pub threshold: f64,
    pub payload: PayloadKindName,
    pub roi_margin: f64,
    pub fusion: FusionRule,
    pub fallback: Fallback,
    pub timeout_ms: u64,
}

/// Serializable mirror of [`PayloadKind`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PayloadKindName {
    FullImage,
    Roi,
    Features,
}

impl From<PayloadKindName> for PayloadKind {
    fn from(k: PayloadKindName) -> Self {
        match k {
            PayloadKindName::FullImage => PayloadKind::FullImage,
            PayloadKindName::Roi => PayloadKind::Roi,
            PayloadKindName::Features => PayloadKind::Features,
        }
    }
}

impl PayloadKindName {
    pub const ALL: [PayloadKindName; 3] = [
        PayloadKindName::FullImage,
        PayloadKindName::Roi,
        PayloadKindName::Features,
    ];

    pub fn name(self) -> &'static str {
        PayloadKind::from(self).name()
    }
}

impl Default for CascadePolicy {
    fn default() -> Self {
        Self {
            threshold: DEFAULT_THRESHOLD,
            payload: PayloadKindName::FullImage,
            roi_margin: DEFAULT_ROI_MARGIN,
            fusion: FusionRule::CloudWins,
            fallback: Fallback::EdgeResultFlagged,
            timeout_ms: DEFAULT_TIMEOUT_MS,
        }
    }
}

impl CascadePolicy {
    /// τ = 0 is accepted as the never-escalate policy.
    pub fn validate(&self) -> Result<(), CascadeError> {
        let bad = |m: String| Err(CascadeError::Policy(m));
        if !(0.0..=1.0).contains(&self.threshold) {
            return bad(format!("threshold {} outside [0, 1]", self.threshold));
        }
        if !(0.0..=1.0).contains(&self.roi_margin) {
            return bad(format!("roi margin {} outside [0, 1]", self.roi_margin));
        }
        if let FusionRule::WeightedAverage(a) = self.fusion {
            if !(0.0..=1.0).contains(&a) {
                return bad(format!("fusion weight {a} outside [0, 1]"));
            }
        }
        if self.timeout_ms == 0 {
            return bad("timeout must be positive".into());
        }
        Ok(())
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = threshold;
        self
    }

    pub fn with_payload(mut self, payload: PayloadKindName) -> Self {
        self.payload = payload;
        self
    }

    pub fn with_fusion(mut self, fusion: FusionRule) -> Self {
        self.fusion = fusion;
        self
    }

    pub fn with_fallback(mut self, fallback: Fallback) -> Self {
        self.fallback = fallback;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Edge,
    Cloud,
    Fused,
    FallbackEdge,
}

/// Milliseconds; `total_ms` is always the sum of the three components.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Timing {
    pub edge_ms: f64,
    pub network_ms: f64,
    pub cloud_ms: f64,
    pub total_ms: f64,
}

impl Timing {
    pub fn new(edge_ms: f64, network_ms: f64, cloud_ms: f64) -> Self {
        Self {
            edge_ms,
            network_ms,
            cloud_ms,
            total_ms: edge_ms + network_ms + cloud_ms,
        }
    }

    pub fn plus(&self, other: &Timing) -> Timing {
        Timing::new(
            self.edge_ms + other.edge_ms,
            self.network_ms + other.network_ms,
            self.cloud_ms + other.cloud_ms,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassificationResult {
    pub label: usize,
    pub probabilities: Vec<f64>,
    pub confidence: f64,
    pub provenance: Provenance,
    pub timing: Timing,
    pub bytes_sent: usize,
    pub bytes_received: usize,
    /// Set when the escalation failed and the edge answer was kept.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fallback_reason: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub roi: Option<[u16; 4]>,
}

/// Lowest index among the maxima.
pub fn argmax(p: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in p.iter().enumerate() {
        if v > p[best] {
            best = i;
        }
    }
    best
}

impl ClassificationResult {
    pub fn from_probabilities(
        probabilities: Vec<f64>,
        provenance: Provenance,
        timing: Timing,
    ) -> Self {
        let label = argmax(&probabilities);
        Self {
            label,
            confidence: probabilities[label],
            probabilities,
            provenance,
            timing,
            bytes_sent: 0,
            bytes_received: 0,
            fallback_reason: None,
            roi: None,
        }
    }
}

pub fn check_probabilities(p: &[f64]) -> Result<(), CascadeError> {
    if p.is_empty() {
        return Err(CascadeError::Probabilities("empty vector".into()));
    }
    if p.iter().any(|v| !v.is_finite() || *v < 0.0) {
        return Err(CascadeError::Probabilities(
            "entries must be finite and non-negative".into(),
        ));
    }
    let sum: f64 = p.iter().sum();
    if (sum - 1.0).abs() > PROBABILITY_TOLERANCE {
        return Err(CascadeError::Probabilities(format!("sums to {sum}")));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GateDecision {
    Accept,
    Escalate,
}

/// Accept iff the top probability reaches τ.
pub fn gate(probs: &[f64], threshold: f64) -> Result<GateDecision, CascadeError> {
    check_probabilities(probs)?;
    let top = probs[argmax(probs)];
    Ok(if top >= threshold {
        GateDecision::Accept
    } else {
        GateDecision::Escalate
    })
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    let sum: f64 = p.iter().sum();
    if sum > 0.0 {
        for v in &mut p {
            *v /= sum;
        }
    }
    p
}

pub fn fuse(
    edge: &ClassificationResult,
    cloud: &ClassificationResult,
    rule: FusionRule,
) -> Result<ClassificationResult, CascadeError> {
    let (e, c) = (&edge.probabilities, &cloud.probabilities);
    if e.len() != c.len() {
        return Err(CascadeError::ClassMismatch(e.len(), c.len()));
    }
    let probabilities = match rule {
        FusionRule::CloudWins => c.clone(),
        FusionRule::WeightedAverage(a) => {
            if !(0.0..=1.0).contains(&a) {
                return Err(CascadeError::Policy(format!("fusion weight {a}")));
            }
            renormalize(
                e.iter()
                    .zip(c)
                    .map(|(&e, &c)| a * c + (1.0 - a) * e)
                    .collect(),
            )
        }
    };
    let mut out = ClassificationResult::from_probabilities(
        probabilities,
        Provenance::Fused,
        edge.timing.plus(&cloud.timing),
    );
    out.bytes_sent = edge.bytes_sent + cloud.bytes_sent;
    out.bytes_received = edge.bytes_received + cloud.bytes_received;
    out.roi = edge.roi.or(cloud.roi);
    Ok(out)
}

/// How the edge forward pass is timed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum EdgeTiming {
    WallClock,
    /// `overhead + MACs / rate`, for reproducible reports.
    Modeled {
        macs_per_ms: f64,
        overhead_ms: f64,
    },
}

impl EdgeTiming {
    pub fn modeled_ms(macs: u64, macs_per_ms: f64, overhead_ms: f64) -> f64 {
        overhead_ms + macs as f64 / macs_per_ms
    }
}

/// Per-call options beyond the policy.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CallContext {
    pub request_id: u64,
    pub edge_timing: EdgeTiming,
}

impl Default for CallContext {
    fn default() -> Self {
        Self {
            request_id: 1,
            edge_timing: EdgeTiming::WallClock,
        }
    }
}

/// Builds the request body an escalation would send.
pub fn build_payload(
    image: &Tensor,
    analysis: &EdgeAnalysis,
    payload: PayloadKindName,
    roi_margin: f64,
) -> Result<RequestBody, CascadeError> {
    Ok(match payload {
        PayloadKindName::FullImage => RequestBody::FullImage(image_payload(image)?),
        PayloadKindName::Roi => {
            let (crop, roi) = extract_roi(image, &analysis.saliency, roi_margin)?;
            RequestBody::Roi {
                roi,
                image: image_payload(&crop)?,
            }
        }
        PayloadKindName::Features => {
            let v: Vec<f32> = analysis.features.to_vec();
            RequestBody::Features(quantize_features(&v)?)
        }
    })
}

pub fn image_payload(image: &Tensor) -> Result<ImagePayload, CascadeError> {
    let [c, h, w] = *image.shape() else {
        return Err(CascadeError::Roi(format!(
            "expected a [C, H, W] image, got {:?}",
            image.shape()
        )));
    };
    let dim = |v: usize| {
        u16::try_from(v).map_err(|_| CascadeError::Roi(format!("image side {v} exceeds u16")))
    };
    Ok(ImagePayload {
        width: dim(w)?,
        height: dim(h)?,
        channels: dim(c)?,
        pixels: image.data().to_vec(),
    })
}

fn roi_array(b: &RoiBox) -> [u16; 4] {
    [b.x, b.y, b.width, b.height]
}

/// Edge-only answer for an image, timed per `timing`.
pub fn classify_edge(
    image: &Tensor,
    edge: &EdgeModel,
    timing: EdgeTiming,
) -> Result<(ClassificationResult, EdgeAnalysis), CascadeError> {
    let start = Instant::now();
    let analysis = edge.analyze(image)?;
    let edge_ms = match timing {
        EdgeTiming::WallClock => start.elapsed().as_secs_f64() * 1e3,
        EdgeTiming::Modeled {
            macs_per_ms,
            overhead_ms,
        } => EdgeTiming::modeled_ms(edge.macs(), macs_per_ms, overhead_ms),
    };
    let result = ClassificationResult::from_probabilities(
        analysis.probabilities.clone(),
        Provenance::Edge,
        Timing::new(edge_ms, 0.0, 0.0),
    );
    Ok((result, analysis))
}

pub fn classify_cascaded(
    image: &Tensor,
    policy: &CascadePolicy,
    edge: &EdgeModel,
    transport: &mut dyn Transport,
) -> Result<ClassificationResult, CascadeError> {
    classify_cascaded_with(image, policy, edge, transport, &CallContext::default())
}

pub fn classify_cascaded_with(
    image: &Tensor,
    policy: &CascadePolicy,
    edge: &EdgeModel,
    transport: &mut dyn Transport,
    ctx: &CallContext,
) -> Result<ClassificationResult, CascadeError> {
    policy.validate()?;
    let (edge_result, analysis) = classify_edge(image, edge, ctx.edge_timing)?;
    complete_cascade(
        image,
        &analysis,
        edge_result,
        policy,
        transport,
        ctx.request_id,
    )
}

/// The gate and everything after it, for an edge pass already done.
pub fn complete_cascade(
    image: &Tensor,
    analysis: &EdgeAnalysis,
    edge_result: ClassificationResult,
    policy: &CascadePolicy,
    transport: &mut dyn Transport,
    request_id: u64,
) -> Result<ClassificationResult, CascadeError> {
    if gate(&edge_result.probabilities, policy.threshold)? == GateDecision::Accept {
        return Ok(edge_result);
    }
    let body = build_payload(image, analysis, policy.payload, policy.roi_margin)?;
    let roi = match &body {
        RequestBody::Roi { roi, .. } => Some(roi_array(roi)),
        _ => None,
    };
    let request = ClassifyRequest { request_id, body };
    match transport.classify(&request, policy.timeout_ms) {
        Ok(reply) => {
            let cloud = cloud_result(&reply, edge_result.probabilities.len())?;
            let mut fused = fuse(&edge_result, &cloud, policy.fusion)?;
            fused.roi = roi;
            Ok(fused)
        }
        Err(failure) => {
            let timing = edge_result
                .timing
                .plus(&Timing::new(0.0, failure.network_ms, 0.0));
            match policy.fallback {
                Fallback::Error => Err(CascadeError::Transport { failure, timing }),
                Fallback::EdgeResultFlagged => {
                    let mut out = edge_result;
                    out.provenance = Provenance::FallbackEdge;
                    out.timing = timing;
                    out.bytes_sent = failure.bytes_sent;
                    out.bytes_received = failure.bytes_received;
                    out.fallback_reason = Some(failure.error.to_string());
                    out.roi = roi;
                    Ok(out)
                }
            }
        }
    }
}

fn cloud_result(reply: &CloudReply, classes: usize) -> Result<ClassificationResult, CascadeError> {
    let p: Vec<f64> = reply.probabilities.iter().map(|&p| p as f64).collect();
    if p.len() != classes {
        return Err(CascadeError::ClassMismatch(classes, p.len()));
    }
    let mut cloud = ClassificationResult::from_probabilities(
        renormalize(p),
        Provenance::Cloud,
        Timing::new(0.0, reply.network_ms, reply.cloud_ms),
    );
    cloud.bytes_sent = reply.bytes_sent;
    cloud.bytes_received = reply.bytes_received;
    Ok(cloud)
}

/// Server-only answer for a prepared request body; no edge pass, no
/// fallback. `classes` is what the caller expects back.
pub fn classify_remote(
    body: RequestBody,
    classes: usize,
    transport: &mut dyn Transport,
    request_id: u64,
    timeout_ms: u64,
) -> Result<ClassificationResult, CascadeError> {
    let roi = match &body {
        RequestBody::Roi { roi, .. } => Some(roi_array(roi)),
        _ => None,
    };
    let request = ClassifyRequest { request_id, body };
    match transport.classify(&request, timeout_ms) {
        Ok(reply) => {
            let mut r = cloud_result(&reply, classes)?;
            r.roi = roi;
            Ok(r)
        }
        Err(failure) => {
            let timing = Timing::new(0.0, failure.network_ms, 0.0);
            Err(CascadeError::Transport { failure, timing })
        }
    }
}
