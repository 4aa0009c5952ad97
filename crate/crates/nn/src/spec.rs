//! Declarative layer graphs and their shape inference.
//!
//! Shapes handled here are per sample, without the batch axis: `[C, H, W]`
//! for feature maps and `[F]` for flat vectors.

use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
    },
    DepthwiseConv2d {
        channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    },
    PointwiseConv2d {
        in_channels: usize,
        out_channels: usize,
    },
    Dense {
        in_features: usize,
        out_features: usize,
    },
    Relu,
    BatchNorm {
        channels: usize,
    },
    MaxPool {
        size: usize,
        stride: usize,
    },
    AvgPool {
        size: usize,
        stride: usize,
    },
    GlobalAvgPool,
    /// `y = body(x) + shortcut(x)`; an empty shortcut is the identity.
    ResidualBlock {
        body: Vec<LayerSpec>,
        shortcut: Vec<LayerSpec>,
    },
    /// Squeeze (global average) -> dense bottleneck -> sigmoid channel gates.
    ChannelAttention {
        channels: usize,
        reduction: usize,
    },
    Softmax,
    /// Per-sample zero-mean, unit-variance rescaling over all elements.
    Standardize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamRole {
    Weight,
    Bias,
    Gamma,
    Beta,
    RunningMean,
    RunningVar,
}

impl ParamRole {
    /// Running statistics are buffers, not trained by SGD.
    pub fn is_trainable(self) -> bool {
        !matches!(self, ParamRole::RunningMean | ParamRole::RunningVar)
    }

    /// Connection weights of conv/dense layers, the targets of pruning.
    pub fn is_prunable(self) -> bool {
        self == ParamRole::Weight
    }

    pub fn code(self) -> u8 {
        match self {
            ParamRole::Weight => 0,
            ParamRole::Bias => 1,
            ParamRole::Gamma => 2,
            ParamRole::Beta => 3,
            ParamRole::RunningMean => 4,
            ParamRole::RunningVar => 5,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Some(match code {
            0 => ParamRole::Weight,
            1 => ParamRole::Bias,
            2 => ParamRole::Gamma,
            3 => ParamRole::Beta,
            4 => ParamRole::RunningMean,
            5 => ParamRole::RunningVar,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSlot {
    pub role: ParamRole,
    pub shape: Vec<usize>,
}

impl ParamSlot {
    fn new(role: ParamRole, shape: Vec<usize>) -> Self {
        Self { role, shape }
    }

    pub fn len(&self) -> usize {
        self.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Inputs feeding one output unit; used for fan-in initialisation.
    pub fn fan_in(&self) -> usize {
        self.shape[1..].iter().product::<usize>().max(1)
    }
}

impl LayerSpec {
    pub fn kind_name(&self) -> &'static str {
        match self {
            LayerSpec::Conv2d { .. } => "Conv2d",
            LayerSpec::DepthwiseConv2d { .. } => "DepthwiseConv2d",
            LayerSpec::PointwiseConv2d { .. } => "PointwiseConv2d",
            LayerSpec::Dense { .. } => "Dense",
            LayerSpec::Relu => "ReLU",
            LayerSpec::BatchNorm { .. } => "BatchNorm",
            LayerSpec::MaxPool { .. } => "MaxPool",
            LayerSpec::AvgPool { .. } => "AvgPool",
            LayerSpec::GlobalAvgPool => "GlobalAvgPool",
            LayerSpec::ResidualBlock { .. } => "ResidualBlock",
            LayerSpec::ChannelAttention { .. } => "ChannelAttention",
            LayerSpec::Softmax => "Softmax",
            LayerSpec::Standardize => "Standardize",
        }
    }

    pub fn attention_hidden(channels: usize, reduction: usize) -> usize {
        (channels / reduction.max(1)).max(1)
    }

    /// Checks hyperparameters that do not depend on the input shape.
    pub fn validate_hyperparams(&self) -> std::result::Result<(), String> {
        let positive = |name: &str, v: usize| {
            if v == 0 {
                Err(format!("{name} must be >= 1"))
            } else {
                Ok(())
            }
        };
        let odd_kernel = |k: usize| {
            if k == 0 || k.is_multiple_of(2) {
                Err(format!("kernel size must be odd and >= 1, got {k}"))
            } else {
                Ok(())
            }
        };
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                ..
            } => {
                positive("in_channels", *in_channels)?;
                positive("out_channels", *out_channels)?;
                positive("stride", *stride)?;
                odd_kernel(*kernel)
            }
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                ..
            } => {
                positive("channels", *channels)?;
                positive("stride", *stride)?;
                odd_kernel(*kernel)
            }
            LayerSpec::PointwiseConv2d {
                in_channels,
                out_channels,
            } => {
                positive("in_channels", *in_channels)?;
                positive("out_channels", *out_channels)
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                positive("in_features", *in_features)?;
                positive("out_features", *out_features)
            }
            LayerSpec::BatchNorm { channels } => positive("channels", *channels),
            LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride } => {
                positive("size", *size)?;
                positive("stride", *stride)
            }
            LayerSpec::ResidualBlock { body, shortcut } => {
                for l in body.iter().chain(shortcut) {
                    l.validate_hyperparams()?;
                }
                Ok(())
            }
            LayerSpec::ChannelAttention {
                channels,
                reduction,
            } => {
                positive("channels", *channels)?;
                positive("reduction", *reduction)
            }
            LayerSpec::Relu
            | LayerSpec::GlobalAvgPool
            | LayerSpec::Softmax
            | LayerSpec::Standardize => Ok(()),
        }
    }

    /// Per-sample output shape for a per-sample input shape.
    pub fn output_shape(&self, input: &[usize]) -> std::result::Result<Vec<usize>, String> {
        let chw = |want_c: usize| -> std::result::Result<(usize, usize, usize), String> {
            match *input {
                [c, h, w] if c == want_c => Ok((c, h, w)),
                [c, _, _] => Err(format!("expected {want_c} input channels, got {c}")),
                _ => Err(format!("expected a [C, H, W] input, got {input:?}")),
            }
        };
        let spatial = |h: usize, k: usize, s: usize, p: usize| {
            if h + 2 * p < k {
                Err(format!(
                    "spatial size {h} with padding {p} is smaller than kernel {k}"
                ))
            } else {
                Ok((h + 2 * p - k) / s + 1)
            }
        };
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                stride,
                padding,
                ..
            } => {
                let (_, h, w) = chw(*in_channels)?;
                Ok(vec![
                    *out_channels,
                    spatial(h, *kernel, *stride, *padding)?,
                    spatial(w, *kernel, *stride, *padding)?,
                ])
            }
            LayerSpec::DepthwiseConv2d {
                channels,
                kernel,
                stride,
                padding,
            } => {
                let (c, h, w) = chw(*channels)?;
                Ok(vec![
                    c,
                    spatial(h, *kernel, *stride, *padding)?,
                    spatial(w, *kernel, *stride, *padding)?,
                ])
            }
            LayerSpec::PointwiseConv2d {
                in_channels,
                out_channels,
            } => {
                let (_, h, w) = chw(*in_channels)?;
                Ok(vec![*out_channels, h, w])
            }
            LayerSpec::Dense {
                in_features,
                out_features,
            } => {
                let n: usize = input.iter().product();
                if n != *in_features {
                    return Err(format!(
                        "expected {in_features} input features, got {n} from shape {input:?}"
                    ));
                }
                Ok(vec![*out_features])
            }
            LayerSpec::Relu | LayerSpec::Standardize => Ok(input.to_vec()),
            LayerSpec::BatchNorm { channels } => match input {
                [c] | [c, _, _] if c == channels => Ok(input.to_vec()),
                _ => Err(format!(
                    "expected {channels} channels for batch norm, got shape {input:?}"
                )),
            },
            LayerSpec::MaxPool { size, stride } | LayerSpec::AvgPool { size, stride } => {
                match *input {
                    [c, h, w] => Ok(vec![
                        c,
                        spatial(h, *size, *stride, 0)?,
                        spatial(w, *size, *stride, 0)?,
                    ]),
                    _ => Err(format!("pooling needs a [C, H, W] input, got {input:?}")),
                }
            }
            LayerSpec::GlobalAvgPool => match *input {
                [c, _, _] => Ok(vec![c]),
                _ => Err(format!(
                    "global pooling needs a [C, H, W] input, got {input:?}"
                )),
            },
            LayerSpec::ResidualBlock { body, shortcut } => {
                let body_out = chain_shape(body, input)?;
                let short_out = chain_shape(shortcut, input)?;
                if body_out != short_out {
                    return Err(format!(
                        "residual branches disagree: body {body_out:?} vs shortcut {short_out:?}"
                    ));
                }
                Ok(body_out)
            }
            LayerSpec::ChannelAttention { channels, .. } => {
                chw(*channels)?;
                Ok(input.to_vec())
            }
            LayerSpec::Softmax => match input {
                [_] => Ok(input.to_vec()),
                _ => Err(format!("softmax needs a flat [C] input, got {input:?}")),
            },
        }
    }

    /// Parameter tensors owned by this layer, in storage order.
    pub fn param_layout(&self) -> Vec<ParamSlot> {
        use ParamRole::*;
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                bias,
                ..
            } => {
                let mut v = vec![ParamSlot::new(
                    Weight,
                    vec![*out_channels, *in_channels, *kernel, *kernel],
                )];
                if *bias {
                    v.push(ParamSlot::new(Bias, vec![*out_channels]));
                }
                v
            }
            LayerSpec::DepthwiseConv2d {
                channels, kernel, ..
            } => vec![ParamSlot::new(Weight, vec![*channels, 1, *kernel, *kernel])],
            LayerSpec::PointwiseConv2d {
                in_channels,
                out_channels,
            } => vec![ParamSlot::new(
                Weight,
                vec![*out_channels, *in_channels, 1, 1],
            )],
            LayerSpec::Dense {
                in_features,
                out_features,
            } => vec![
                ParamSlot::new(Weight, vec![*out_features, *in_features]),
                ParamSlot::new(Bias, vec![*out_features]),
            ],
            LayerSpec::BatchNorm { channels } => vec![
                ParamSlot::new(Gamma, vec![*channels]),
                ParamSlot::new(Beta, vec![*channels]),
                ParamSlot::new(RunningMean, vec![*channels]),
                ParamSlot::new(RunningVar, vec![*channels]),
            ],
            LayerSpec::ChannelAttention {
                channels,
                reduction,
            } => {
                let h = Self::attention_hidden(*channels, *reduction);
                vec![
                    ParamSlot::new(Weight, vec![h, *channels]),
                    ParamSlot::new(Bias, vec![h]),
                    ParamSlot::new(Weight, vec![*channels, h]),
                    ParamSlot::new(Bias, vec![*channels]),
                ]
            }
            LayerSpec::ResidualBlock { body, shortcut } => body
                .iter()
                .chain(shortcut)
                .flat_map(|l| l.param_layout())
                .collect(),
            LayerSpec::Relu
            | LayerSpec::MaxPool { .. }
            | LayerSpec::AvgPool { .. }
            | LayerSpec::GlobalAvgPool
            | LayerSpec::Softmax
            | LayerSpec::Standardize => Vec::new(),
        }
    }

    /// Number of parameter tensors, equal to `param_layout().len()`.
    pub fn param_tensor_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d { bias, .. } => 1 + usize::from(*bias),
            LayerSpec::DepthwiseConv2d { .. } | LayerSpec::PointwiseConv2d { .. } => 1,
            LayerSpec::Dense { .. } => 2,
            LayerSpec::BatchNorm { .. } | LayerSpec::ChannelAttention { .. } => 4,
            LayerSpec::ResidualBlock { body, shortcut } => body
                .iter()
                .chain(shortcut)
                .map(|l| l.param_tensor_count())
                .sum(),
            _ => 0,
        }
    }

    /// Multiply-accumulate count for one sample of the given input shape.
    pub fn macs(&self, input: &[usize]) -> std::result::Result<u64, String> {
        let out = self.output_shape(input)?;
        let out_elems: u64 = out.iter().product::<usize>() as u64;
        Ok(match self {
            LayerSpec::Conv2d {
                in_channels,
                kernel,
                ..
            } => out_elems * (*in_channels * kernel * kernel) as u64,
            LayerSpec::DepthwiseConv2d { kernel, .. } => out_elems * (kernel * kernel) as u64,
            LayerSpec::PointwiseConv2d { in_channels, .. } => out_elems * *in_channels as u64,
            LayerSpec::Dense {
                in_features,
                out_features,
            } => (*in_features * *out_features) as u64,
            LayerSpec::ChannelAttention {
                channels,
                reduction,
            } => {
                let h = Self::attention_hidden(*channels, *reduction) as u64;
                2 * h * *channels as u64 + out_elems
            }
            LayerSpec::ResidualBlock { body, shortcut } => {
                chain_macs(body, input)? + chain_macs(shortcut, input)?
            }
            _ => 0,
        })
    }
}

fn chain_shape(layers: &[LayerSpec], input: &[usize]) -> std::result::Result<Vec<usize>, String> {
    let mut shape = input.to_vec();
    for (i, l) in layers.iter().enumerate() {
        l.validate_hyperparams()
            .map_err(|e| format!("inner layer {i} ({}): {e}", l.kind_name()))?;
        shape = l
            .output_shape(&shape)
            .map_err(|e| format!("inner layer {i} ({}): {e}", l.kind_name()))?;
    }
    Ok(shape)
}

fn chain_macs(layers: &[LayerSpec], input: &[usize]) -> std::result::Result<u64, String> {
    let mut shape = input.to_vec();
    let mut total = 0;
    for l in layers {
        total += l.macs(&shape)?;
        shape = l.output_shape(&shape)?;
    }
    Ok(total)
}

/// An ordered layer chain plus the per-sample input shape it expects.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub input_shape: Vec<usize>,
    pub layers: Vec<LayerSpec>,
}

impl ModelSpec {
    pub fn new(input_shape: Vec<usize>, layers: Vec<LayerSpec>) -> Self {
        Self {
            input_shape,
            layers,
        }
    }

    /// Runs shape inference over the chain and returns every layer's output
    /// shape. Fails with the index of the first offending layer.
    pub fn validate(&self) -> Result<Vec<Vec<usize>>> {
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(NnError::InvalidSpec {
                index: 0,
                message: format!("invalid input shape {:?}", self.input_shape),
            });
        }
        let mut shapes = Vec::with_capacity(self.layers.len());
        let mut shape = self.input_shape.clone();
        for (index, layer) in self.layers.iter().enumerate() {
            layer
                .validate_hyperparams()
                .map_err(|message| NnError::InvalidSpec { index, message })?;
            shape = layer
                .output_shape(&shape)
                .map_err(|message| NnError::InvalidSpec { index, message })?;
            shapes.push(shape.clone());
        }
        Ok(shapes)
    }

    pub fn output_shape(&self) -> Result<Vec<usize>> {
        Ok(self
            .validate()?
            .pop()
            .unwrap_or_else(|| self.input_shape.clone()))
    }

    pub fn param_layout(&self) -> Vec<ParamSlot> {
        self.layers.iter().flat_map(|l| l.param_layout()).collect()
    }

    /// Trainable scalar parameters (running statistics excluded).
    pub fn param_count(&self) -> usize {
        self.param_layout()
            .iter()
            .filter(|s| s.role.is_trainable())
            .map(|s| s.len())
            .sum()
    }

    pub fn mac_count(&self) -> Result<u64> {
        let mut shape = self.input_shape.clone();
        let mut total = 0;
        for (index, layer) in self.layers.iter().enumerate() {
            total += layer
                .macs(&shape)
                .map_err(|message| NnError::InvalidSpec { index, message })?;
            shape = layer
                .output_shape(&shape)
                .map_err(|message| NnError::InvalidSpec { index, message })?;
        }
        Ok(total)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn conv(i: usize, o: usize, k: usize, s: usize, p: usize) -> LayerSpec {
        LayerSpec::Conv2d {
            in_channels: i,
            out_channels: o,
            kernel: k,
            stride: s,
            padding: p,
            bias: false,
        }
    }

    #[test]
    fn conv_output_dims_follow_floor_rule() {
        let l = conv(3, 8, 3, 2, 1);
        assert_eq!(l.output_shape(&[3, 32, 32]).unwrap(), vec![8, 16, 16]);
        assert_eq!(l.output_shape(&[3, 7, 5]).unwrap(), vec![8, 4, 3]);
        assert!(l.output_shape(&[4, 32, 32]).is_err());
    }

    #[test]
    fn even_kernels_and_zero_strides_are_rejected() {
        assert!(conv(3, 8, 2, 1, 0).validate_hyperparams().is_err());
        assert!(conv(3, 8, 3, 0, 0).validate_hyperparams().is_err());
        let spec = ModelSpec::new(vec![3, 8, 8], vec![conv(3, 4, 4, 1, 0)]);
        assert!(matches!(
            spec.validate(),
            Err(NnError::InvalidSpec { index: 0, .. })
        ));
    }

    #[test]
    fn depthwise_separable_parameter_arithmetic() {
        let dw = LayerSpec::DepthwiseConv2d {
            channels: 8,
            kernel: 3,
            stride: 1,
            padding: 1,
        };
        let pw = LayerSpec::PointwiseConv2d {
            in_channels: 8,
            out_channels: 16,
        };
        let full = conv(8, 16, 3, 1, 1);
        let count = |l: &LayerSpec| l.param_layout().iter().map(|s| s.len()).sum::<usize>();
        assert_eq!(count(&dw), 72);
        assert_eq!(count(&pw), 128);
        assert_eq!(count(&dw) + count(&pw), 200);
        assert_eq!(count(&full), 1152);
    }

    #[test]
    fn residual_branches_must_agree() {
        let bad = LayerSpec::ResidualBlock {
            body: vec![conv(4, 8, 3, 1, 1)],
            shortcut: vec![],
        };
        assert!(bad.output_shape(&[4, 8, 8]).is_err());
        let good = LayerSpec::ResidualBlock {
            body: vec![conv(4, 8, 3, 1, 1)],
            shortcut: vec![LayerSpec::PointwiseConv2d {
                in_channels: 4,
                out_channels: 8,
            }],
        };
        assert_eq!(good.output_shape(&[4, 8, 8]).unwrap(), vec![8, 8, 8]);
        assert_eq!(good.param_tensor_count(), good.param_layout().len());
    }

    #[test]
    fn spec_roundtrips_through_json() {
        let spec = ModelSpec::new(
            vec![3, 8, 8],
            vec![
                conv(3, 4, 3, 1, 1),
                LayerSpec::BatchNorm { channels: 4 },
                LayerSpec::Relu,
                LayerSpec::ChannelAttention {
                    channels: 4,
                    reduction: 2,
                },
                LayerSpec::GlobalAvgPool,
                LayerSpec::Dense {
                    in_features: 4,
                    out_features: 2,
                },
            ],
        );
        let text = serde_json::to_string(&spec).unwrap();
        let back: ModelSpec = serde_json::from_str(&text).unwrap();
        assert_eq!(spec, back);
        assert_eq!(spec.output_shape().unwrap(), vec![2]);
    }
}
