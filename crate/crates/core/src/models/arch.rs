//! The two desk-scale architectures.

use cjade_nn::{LayerSpec, ModelSpec};

use super::ModelError;

pub const SUPPORTED_INPUT_SIZES: [usize; 2] = [32, 64];

/// Channel widths of the four depthwise-separable blocks and their strides.
const LIGHT_BLOCKS: [(usize, usize); 4] = [(32, 2), (64, 1), (64, 2), (64, 1)];
const LIGHT_STEM: usize = 16;

const LARGE_STEM: usize = 16;
const LARGE_STAGES: [usize; 3] = [16, 32, 64];
const ATTENTION_REDUCTION: usize = 4;

fn check(class_count: usize, input_size: usize) -> Result<(), ModelError> {
    if !SUPPORTED_INPUT_SIZES.contains(&input_size) {
        return Err(ModelError::UnsupportedInputSize(input_size));
    }
    if class_count < 2 {
        return Err(ModelError::Invalid(format!(
            "class count must be at least 2, got {class_count}"
        )));
    }
    Ok(())
}

fn conv3(cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels: cin,
        out_channels: cout,
        kernel: 3,
        stride: 1,
        padding: 1,
        bias: false,
    }
}

fn bn(channels: usize) -> LayerSpec {
    LayerSpec::BatchNorm { channels }
}

/// Stem conv, four depthwise-separable blocks, global pooling, classifier.
pub fn lightweight_spec(class_count: usize, input_size: usize) -> Result<ModelSpec, ModelError> {
    check(class_count, input_size)?;
    let mut layers = vec![
        LayerSpec::Standardize,
        conv3(3, LIGHT_STEM),
        bn(LIGHT_STEM),
        LayerSpec::Relu,
    ];
    let mut c = LIGHT_STEM;
    for (width, stride) in LIGHT_BLOCKS {
        layers.extend([
            LayerSpec::DepthwiseConv2d {
                channels: c,
                kernel: 3,
                stride,
                padding: 1,
            },
            bn(c),
            LayerSpec::Relu,
            LayerSpec::PointwiseConv2d {
                in_channels: c,
                out_channels: width,
            },
            bn(width),
            LayerSpec::Relu,
        ]);
        c = width;
    }
    layers.push(LayerSpec::GlobalAvgPool);
    layers.push(LayerSpec::Dense {
        in_features: c,
        out_features: class_count,
    });
    Ok(ModelSpec::new(vec![3, input_size, input_size], layers))
}

/// Pre-activation residual block: BN-ReLU-conv twice, plus a 1x1 projection
/// when the width changes.
pub fn residual_block(cin: usize, cout: usize) -> LayerSpec {
    LayerSpec::ResidualBlock {
        body: vec![
            bn(cin),
            LayerSpec::Relu,
            conv3(cin, cout),
            bn(cout),
            LayerSpec::Relu,
            conv3(cout, cout),
        ],
        shortcut: if cin == cout {
            Vec::new()
        } else {
            vec![LayerSpec::PointwiseConv2d {
                in_channels: cin,
                out_channels: cout,
            }]
        },
    }
}

/// Stem conv, three stages of two residual blocks with channel attention and
/// max pooling, then BN-ReLU, global pooling and the classifier.
pub fn large_spec(class_count: usize, input_size: usize) -> Result<ModelSpec, ModelError> {
    check(class_count, input_size)?;
    let mut layers = vec![LayerSpec::Standardize, conv3(3, LARGE_STEM)];
    let mut c = LARGE_STEM;
    for width in LARGE_STAGES {
        layers.push(residual_block(c, width));
        layers.push(residual_block(width, width));
        layers.push(LayerSpec::ChannelAttention {
            channels: width,
            reduction: ATTENTION_REDUCTION,
        });
        layers.push(LayerSpec::MaxPool { size: 2, stride: 2 });
        c = width;
    }
    layers.extend([
        bn(c),
        LayerSpec::Relu,
        LayerSpec::GlobalAvgPool,
        LayerSpec::Dense {
            in_features: c,
            out_features: class_count,
        },
    ]);
    Ok(ModelSpec::new(vec![3, input_size, input_size], layers))
}

/// Index of the last layer that still produces a spatial map, the activation
/// used for saliency.
pub fn last_spatial_layer(spec: &ModelSpec) -> Option<usize> {
    let shapes = spec.validate().ok()?;
    shapes.iter().rposition(|s| s.len() == 3)
}

/// Index of the global-average-pool layer feeding the classifier.
pub fn feature_layer(spec: &ModelSpec) -> Option<usize> {
    spec.layers
        .iter()
        .rposition(|l| matches!(l, LayerSpec::GlobalAvgPool))
}
