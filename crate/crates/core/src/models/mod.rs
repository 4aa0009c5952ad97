//! Model artifacts: architecture builders, training, pruning, multi-scale
//! inference and the versioned weight file.

pub mod arch;
pub mod io;
pub mod multiscale;
pub mod prune;
pub mod train;

use cjade_nn::{ModelSpec, Network, NnError, Tensor};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use arch::{large_spec, lightweight_spec, residual_block};
pub use io::{decode, encode, load_weights, save_weights};
pub use multiscale::{multiscale_forward, multiscale_forward_with, DEFAULT_SCALES};
pub use prune::{prune_magnitude, PruneReport};
pub use train::{evaluate, train, Augment, EpochLog, Labeled, TrainConfig, TrainLog};

#[derive(Debug, thiserror::Error)]
pub enum ModelError {
    #[error("unsupported input size {0}; expected 32 or 64")]
    UnsupportedInputSize(usize),
    #[error("invalid model: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a weight file (bad magic)")]
    BadMagic,
    #[error("unsupported weight file version {found} (this build reads {supported})")]
    Version { found: u16, supported: u16 },
    #[error("weight file truncated: {0}")]
    Truncated(String),
    #[error("weight file checksum mismatch: stored {stored:08x}, computed {computed:08x}")]
    Checksum { stored: u32, computed: u32 },
    #[error("malformed weight file: {0}")]
    Format(String),
    #[error("degenerate dataset: {0}")]
    DegenerateDataset(String),
    #[error("target sparsity must be in [0, 1), got {0}")]
    Sparsity(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ModelKind {
    Lightweight,
    Large,
    FeatureHead,
}

/// Descriptive metadata stored in the weight file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelMeta {
    pub name: String,
    pub kind: ModelKind,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub training_seed: u64,
    pub dataset_hash: String,
    pub created_unix: u64,
    #[serde(default)]
    pub val_accuracy: Option<f64>,
    /// For a feature head: fingerprint of the edge model whose features it reads.
    #[serde(default)]
    pub edge_fingerprint: Option<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelArtifact {
    pub network: Network,
    pub meta: ModelMeta,
}

impl ModelArtifact {
    pub fn new(spec: ModelSpec, seed: u64, meta: ModelMeta) -> Result<Self, ModelError> {
        let out = spec.output_shape()?;
        if meta.class_count < 2 || out != [meta.class_count] {
            return Err(ModelError::Invalid(format!(
                "final layer emits {out:?}, meta declares {} classes",
                meta.class_count
            )));
        }
        if meta.input_shape != spec.input_shape {
            return Err(ModelError::Invalid(format!(
                "meta input shape {:?} differs from spec {:?}",
                meta.input_shape, spec.input_shape
            )));
        }
        Ok(Self {
            network: Network::init(spec, seed)?,
            meta,
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.network.spec()
    }

    pub fn class_count(&self) -> usize {
        self.meta.class_count
    }

    pub fn input_size(&self) -> usize {
        self.meta.input_shape.last().copied().unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.spec().param_count()
    }

    /// First eight bytes of the SHA-256 of the serialized artifact.
    pub fn fingerprint(&self) -> u64 {
        let bytes = io::encode(self).expect("artifact meta serializes");
        let digest = Sha256::digest(&bytes);
        u64::from_le_bytes(digest[..8].try_into().expect("digest length"))
    }

    pub fn fingerprint_hex(&self) -> String {
        format!("{:016x}", self.fingerprint())
    }

    /// Logits for one `[C, H, W]` image (or a batch).
    pub fn logits(&self, input: &Tensor) -> Result<Tensor, ModelError> {
        Ok(self
            .network
            .forward(&batched(input, &self.meta.input_shape)?)?)
    }
}

/// Adds a leading batch axis to a single sample of the expected shape.
pub fn batched(input: &Tensor, sample_shape: &[usize]) -> Result<Tensor, ModelError> {
    if input.shape() == sample_shape {
        let mut shape = vec![1];
        shape.extend_from_slice(sample_shape);
        Ok(input.clone().reshape(&shape)?)
    } else {
        Ok(input.clone())
    }
}

fn base_meta(
    name: &str,
    kind: ModelKind,
    spec: &ModelSpec,
    class_count: usize,
    seed: u64,
) -> ModelMeta {
    ModelMeta {
        name: name.to_string(),
        kind,
        input_shape: spec.input_shape.clone(),
        class_count,
        training_seed: seed,
        dataset_hash: String::new(),
        created_unix: 0,
        val_accuracy: None,
        edge_fingerprint: None,
    }
}

/// Untrained lightweight edge model, weights seeded by `seed`.
pub fn build_lightweight(
    class_count: usize,
    input_size: usize,
    seed: u64,
) -> Result<ModelArtifact, ModelError> {
    let spec = lightweight_spec(class_count, input_size)?;
    let meta = base_meta(
        "lightweight",
        ModelKind::Lightweight,
        &spec,
        class_count,
        seed,
    );
    ModelArtifact::new(spec, seed, meta)
}

/// Untrained large verification model, weights seeded by `seed`.
pub fn build_large(
    class_count: usize,
    input_size: usize,
    seed: u64,
) -> Result<ModelArtifact, ModelError> {
    let spec = large_spec(class_count, input_size)?;
    let meta = base_meta("large", ModelKind::Large, &spec, class_count, seed);
    ModelArtifact::new(spec, seed, meta)
}

/// Dense classifier over edge feature vectors, pinned to one edge model.
pub fn build_feature_head(edge: &ModelArtifact, seed: u64) -> Result<ModelArtifact, ModelError> {
    let dim = feature_dim(edge)?;
    let classes = edge.class_count();
    let spec = ModelSpec::new(
        vec![dim],
        vec![
            cjade_nn::LayerSpec::Dense {
                in_features: dim,
                out_features: dim,
            },
            cjade_nn::LayerSpec::Relu,
            cjade_nn::LayerSpec::Dense {
                in_features: dim,
                out_features: classes,
            },
        ],
    );
    let mut meta = base_meta("feature-head", ModelKind::FeatureHead, &spec, classes, seed);
    meta.edge_fingerprint = Some(edge.fingerprint_hex());
    ModelArtifact::new(spec, seed, meta)
}

/// Length of the pooled penultimate activation of a model.
pub fn feature_dim(model: &ModelArtifact) -> Result<usize, ModelError> {
    let idx = arch::feature_layer(model.spec())
        .ok_or_else(|| ModelError::Invalid("model has no global pooling layer".into()))?;
    let shapes = model.spec().validate()?;
    Ok(shapes[idx][0])
}

#[cfg(test)]
mod tests {
    use super::*;
    use cjade_nn::ops::softmax;

    #[test]
    fn untrained_models_emit_valid_distributions() {
        let img = Tensor::from_fn(&[2, 3, 32, 32], |i| ((i * 31) % 101) as f32 / 101.0);
        for model in [
            build_lightweight(10, 32, 1).unwrap(),
            build_large(10, 32, 1).unwrap(),
        ] {
            let logits = model.logits(&img).unwrap();
            assert_eq!(logits.shape(), &[2, 10]);
            assert!(logits.all_finite());
            let p = softmax(&logits).unwrap();
            for row in p.data().chunks(10) {
                assert!((row.iter().sum::<f32>() - 1.0).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn feature_head_is_pinned_to_its_edge_model() {
        let edge = build_lightweight(10, 32, 3).unwrap();
        let head = build_feature_head(&edge, 4).unwrap();
        assert_eq!(head.meta.edge_fingerprint, Some(edge.fingerprint_hex()));
        assert_eq!(head.spec().input_shape, vec![64]);
        let other = build_lightweight(10, 32, 5).unwrap();
        assert_ne!(other.fingerprint(), edge.fingerprint());
    }

    #[test]
    fn meta_must_match_spec() {
        let spec = lightweight_spec(10, 32).unwrap();
        let mut meta = base_meta("x", ModelKind::Lightweight, &spec, 7, 0);
        assert!(ModelArtifact::new(spec.clone(), 0, meta.clone()).is_err());
        meta.class_count = 10;
        meta.input_shape = vec![3, 64, 64];
        assert!(ModelArtifact::new(spec, 0, meta).is_err());
    }
}
