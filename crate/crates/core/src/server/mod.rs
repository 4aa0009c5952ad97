//! The model server: large-model inference behind the wire protocol.

mod inprocess;
mod net;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use cjade_nn::Tensor;

pub use inprocess::{CloudTiming, InProcessTransport};
pub use net::{spawn, ServerHandle};

use crate::cascade::softmax;
use crate::models::{
    feature_dim, load_weights, multiscale_forward, ModelArtifact, ModelError, ModelKind,
    DEFAULT_SCALES,
};
use crate::protocol::{
    dequantize, ClassifyRequest, ClassifyResponse, ErrorCode, ErrorMessage, Hello, ImagePayload,
    PayloadKind, RequestBody,
};

#[derive(Debug, thiserror::Error)]
pub enum ServerError {
    #[error("{path}: {source}")]
    Load { path: PathBuf, source: ModelError },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("feature head does not match the edge model: {0}")]
    FeatureHead(String),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct ServerConfig {
    pub listen: String,
    pub weights: PathBuf,
    pub feature_head: Option<PathBuf>,
    pub max_concurrency: usize,
    pub compute_timeout_ms: u64,
}

impl Default for ServerConfig {
    fn default() -> Self {
        Self {
            listen: "127.0.0.1:7878".into(),
            weights: PathBuf::from("large.cjw"),
            feature_head: None,
            max_concurrency: 4,
            compute_timeout_ms: 10_000,
        }
    }
}

impl ServerConfig {
    pub fn validate(&self) -> Result<(), ServerError> {
        if self.max_concurrency == 0 {
            return Err(ServerError::Config(
                "max concurrency must be at least 1".into(),
            ));
        }
        if self.compute_timeout_ms == 0 {
            return Err(ServerError::Config(
                "compute timeout must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Immutable inference state shared by all request handlers.
#[derive(Debug, Clone)]
pub struct ServerCore {
    large: ModelArtifact,
    head: Option<ModelArtifact>,
    hello: Hello,
    macs_image: u64,
    macs_head: u64,
}

fn invalid(m: String) -> ModelError {
    ModelError::Invalid(m)
}

impl ServerCore {
    pub fn new(large: ModelArtifact, head: Option<ModelArtifact>) -> Result<Self, ModelError> {
        let [c, h, w] = large.meta.input_shape[..] else {
            return Err(invalid(format!(
                "large model input {:?}",
                large.meta.input_shape
            )));
        };
        if c == 0 || h != w {
            return Err(invalid(format!(
                "large model input {:?}",
                large.meta.input_shape
            )));
        }
        let macs_image = large.spec().mac_count()? * DEFAULT_SCALES.len() as u64;
        let mut macs_head = 0;
        if let Some(head) = &head {
            if head.meta.kind != ModelKind::FeatureHead || head.meta.input_shape.len() != 1 {
                return Err(invalid(
                    "feature head must be a dense model over a vector".into(),
                ));
            }
            if head.class_count() != large.class_count() {
                return Err(invalid(format!(
                    "feature head has {} classes, large model {}",
                    head.class_count(),
                    large.class_count()
                )));
            }
            macs_head = head.spec().mac_count()?;
        }
        let hello = Hello {
            model_fingerprint: large.fingerprint(),
            class_count: large.class_count() as u16,
            input_size: h as u16,
        };
        Ok(Self {
            large,
            head,
            hello,
            macs_image,
            macs_head,
        })
    }

    /// Like [`ServerCore::new`], also requiring the head to be pinned to `edge`.
    pub fn pinned(
        large: ModelArtifact,
        head: ModelArtifact,
        edge: &ModelArtifact,
    ) -> Result<Self, ServerError> {
        check_pin(&head, edge)?;
        Self::new(large, Some(head)).map_err(|source| ServerError::Load {
            path: PathBuf::new(),
            source,
        })
    }

    pub fn hello(&self) -> Hello {
        self.hello
    }

    pub fn large(&self) -> &ModelArtifact {
        &self.large
    }

    pub fn feature_head(&self) -> Option<&ModelArtifact> {
        self.head.as_ref()
    }

    /// Multiply-accumulates one request of this kind costs.
    pub fn macs_for(&self, kind: PayloadKind) -> u64 {
        match kind {
            PayloadKind::FullImage | PayloadKind::Roi => self.macs_image,
            PayloadKind::Features => self.macs_head,
        }
    }

    fn image(&self, p: &ImagePayload) -> Result<Tensor, ErrorMessage> {
        let channels = self.large.meta.input_shape[0];
        if p.channels as usize != channels {
            return Err(bad(
                ErrorCode::BadRequest,
                format!("expected {channels} channels, got {}", p.channels),
            ));
        }
        Tensor::new(p.shape().to_vec(), p.pixels.clone())
            .map_err(|e| bad(ErrorCode::BadRequest, e.to_string()))
    }

    /// Server-side probabilities for one request body.
    pub fn probabilities(&self, body: &RequestBody) -> Result<Vec<f32>, ErrorMessage> {
        let internal = |e: ModelError| bad(ErrorCode::Internal, e.to_string());
        let logits = match body {
            RequestBody::FullImage(p) => {
                multiscale_forward(&self.large, &self.image(p)?).map_err(internal)?
            }
            RequestBody::Roi { roi, image } => {
                if roi.width != image.width || roi.height != image.height {
                    return Err(bad(
                        ErrorCode::BadRequest,
                        format!(
                            "roi {}x{} does not match the {}x{} crop",
                            roi.width, roi.height, image.width, image.height
                        ),
                    ));
                }
                multiscale_forward(&self.large, &self.image(image)?).map_err(internal)?
            }
            RequestBody::Features(q) => {
                let Some(head) = &self.head else {
                    return Err(bad(ErrorCode::Unsupported, "no feature head loaded".into()));
                };
                let dim = head.meta.input_shape[0];
                if q.values.len() != dim {
                    return Err(bad(
                        ErrorCode::FeatureHeadMismatch,
                        format!("head reads {dim} features, got {}", q.values.len()),
                    ));
                }
                let v = Tensor::new(vec![1, dim], dequantize(q)).map_err(|e| internal(e.into()))?;
                head.logits(&v).map_err(internal)?
            }
        };
        Ok(softmax(logits.data())
            .into_iter()
            .map(|p| p as f32)
            .collect())
    }

    pub fn handle(&self, request: &ClassifyRequest) -> Result<ClassifyResponse, ErrorMessage> {
        let start = Instant::now();
        let probabilities = self.probabilities(&request.body).map_err(|mut e| {
            e.request_id = request.request_id;
            e
        })?;
        Ok(ClassifyResponse {
            request_id: request.request_id,
            probabilities,
            server_compute_us: start.elapsed().as_micros().min(u32::MAX as u128) as u32,
        })
    }
}

fn bad(code: ErrorCode, message: String) -> ErrorMessage {
    ErrorMessage {
        request_id: 0,
        code,
        message,
    }
}

pub fn check_pin(head: &ModelArtifact, edge: &ModelArtifact) -> Result<(), ServerError> {
    let want = edge.fingerprint_hex();
    match &head.meta.edge_fingerprint {
        Some(f) if *f == want => {}
        Some(f) => {
            return Err(ServerError::FeatureHead(format!(
                "head pinned to {f}, edge model is {want}"
            )))
        }
        None => return Err(ServerError::FeatureHead("head carries no edge pin".into())),
    }
    let dim = feature_dim(edge).map_err(|e| ServerError::FeatureHead(e.to_string()))?;
    if head.meta.input_shape != [dim] {
        return Err(ServerError::FeatureHead(format!(
            "head reads {:?}, edge emits {dim}",
            head.meta.input_shape
        )));
    }
    Ok(())
}

/// Ready-to-serve state plus how long loading took.
#[derive(Debug)]
pub struct Ready {
    pub core: ServerCore,
    pub startup: Duration,
}

/// Loads and validates the weights, then runs one dummy request per
/// supported payload kind.
pub fn load_and_warm(config: &ServerConfig) -> Result<Ready, ServerError> {
    let start = Instant::now();
    config.validate()?;
    let load = |p: &PathBuf| {
        load_weights(p).map_err(|source| ServerError::Load {
            path: p.clone(),
            source,
        })
    };
    let large = load(&config.weights)?;
    if large.meta.kind != ModelKind::Large {
        return Err(ServerError::Config(format!(
            "{} holds a {:?} model, not the large one",
            config.weights.display(),
            large.meta.kind
        )));
    }
    let head = config.feature_head.as_ref().map(load).transpose()?;
    let core = ServerCore::new(large, head).map_err(|source| ServerError::Load {
        path: config.weights.clone(),
        source,
    })?;
    warm(&core).map_err(|e| ServerError::Config(format!("warm-up failed: {}", e.message)))?;
    Ok(Ready {
        core,
        startup: start.elapsed(),
    })
}

fn warm(core: &ServerCore) -> Result<(), ErrorMessage> {
    let [c, h, w] = core.large.meta.input_shape[..] else {
        unreachable!("checked in ServerCore::new")
    };
    let image = ImagePayload {
        width: w as u16,
        height: h as u16,
        channels: c as u16,
        pixels: vec![0.5; c * h * w],
    };
    core.probabilities(&RequestBody::FullImage(image))?;
    if let Some(head) = &core.head {
        let q = crate::protocol::QuantizedFeatures {
            scale: 1.0,
            values: vec![128; head.meta.input_shape[0]],
        };
        core.probabilities(&RequestBody::Features(q))?;
    }
    Ok(())
}
