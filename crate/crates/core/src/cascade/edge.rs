use cjade_nn::Tensor;

use super::CascadeError;
use crate::models::{arch, batched, ModelArtifact, ModelError};

/// Numerically stable softmax, accumulated in f64.
pub fn softmax(logits: &[f32]) -> Vec<f64> {
    let max = logits
        .iter()
        .fold(f64::NEG_INFINITY, |m, &v| m.max(v as f64));
    let exp: Vec<f64> = logits.iter().map(|&v| (v as f64 - max).exp()).collect();
    let sum: f64 = exp.iter().sum();
    exp.into_iter().map(|e| e / sum).collect()
}

/// Channel-mean of one `[1, C, H, W]` activation, as `[H, W]`.
pub fn saliency_map(activation: &Tensor) -> Result<Tensor, CascadeError> {
    let [1, c, h, w] = *activation.shape() else {
        return Err(CascadeError::Roi(format!(
            "saliency needs a single [1, C, H, W] activation, got {:?}",
            activation.shape()
        )));
    };
    let plane = h * w;
    let d = activation.data();
    let mut out = vec![0.0f64; plane];
    for ch in 0..c {
        for (o, &v) in out.iter_mut().zip(&d[ch * plane..(ch + 1) * plane]) {
            *o += v as f64;
        }
    }
    let data = out.into_iter().map(|v| (v / c as f64) as f32).collect();
    Ok(Tensor::new(vec![h, w], data).expect("plane shape"))
}

/// Everything one edge forward pass yields.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeAnalysis {
    pub probabilities: Vec<f64>,
    /// `[H, W]` channel-mean of the last spatial activation.
    pub saliency: Tensor,
    /// Globally pooled penultimate activation.
    pub features: Vec<f32>,
}

/// A lightweight model with its saliency and feature taps resolved.
#[derive(Debug, Clone)]
pub struct EdgeModel {
    artifact: ModelArtifact,
    saliency_layer: usize,
    feature_layer: usize,
    macs: u64,
}

impl EdgeModel {
    pub fn new(artifact: ModelArtifact) -> Result<Self, CascadeError> {
        let spec = artifact.spec();
        let missing = |what: &str| {
            CascadeError::Model(ModelError::Invalid(format!(
                "edge model has no {what} layer"
            )))
        };
        let saliency_layer = arch::last_spatial_layer(spec).ok_or_else(|| missing("spatial"))?;
        let feature_layer = arch::feature_layer(spec).ok_or_else(|| missing("pooling"))?;
        let macs = spec.mac_count().map_err(ModelError::from)?;
        Ok(Self {
            artifact,
            saliency_layer,
            feature_layer,
            macs,
        })
    }

    pub fn artifact(&self) -> &ModelArtifact {
        &self.artifact
    }

    pub fn class_count(&self) -> usize {
        self.artifact.class_count()
    }

    pub fn macs(&self) -> u64 {
        self.macs
    }

    pub fn analyze(&self, image: &Tensor) -> Result<EdgeAnalysis, CascadeError> {
        let input = batched(image, &self.artifact.meta.input_shape)?;
        if input.batch() != 1 {
            return Err(CascadeError::Model(ModelError::Invalid(format!(
                "edge analysis takes one image, got shape {:?}",
                image.shape()
            ))));
        }
        let trace = self
            .artifact
            .network
            .forward_trace(&input)
            .map_err(ModelError::from)?;
        let logits = trace.last().expect("non-empty network");
        Ok(EdgeAnalysis {
            probabilities: softmax(logits.data()),
            saliency: saliency_map(&trace[self.saliency_layer])?,
            features: trace[self.feature_layer].data().to_vec(),
        })
    }
}

pub fn edge_features(model: &ModelArtifact, image: &Tensor) -> Result<Vec<f32>, CascadeError> {
    Ok(EdgeModel::new(model.clone())?.analyze(image)?.features)
}
