use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{NnError, Result};
use crate::ops::attention::{self, AttentionCache, AttentionParams};
use crate::ops::conv;
use crate::ops::dense;
use crate::ops::norm::{self, BatchStats, SampleStats};
use crate::ops::pool;
use crate::scalar::Scalar;
use crate::spec::{LayerSpec, ModelSpec, ParamRole};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq)]
pub struct Param<S = f32> {
    pub role: ParamRole,
    pub value: Tensor<S>,
}

/// Parameter store laid out in `ModelSpec::param_layout` order.
#[derive(Debug, Clone, PartialEq)]
pub struct Weights<S = f32> {
    pub params: Vec<Param<S>>,
}

impl<S: Scalar> Weights<S> {
    /// Kaiming-uniform (fan-in) connection weights, zero biases, unit
    /// gammas and variances.
    pub fn init(spec: &ModelSpec, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let params = spec
            .param_layout()
            .into_iter()
            .map(|slot| {
                let value = match slot.role {
                    ParamRole::Weight => {
                        let bound = (6.0 / slot.fan_in() as f64).sqrt();
                        Tensor::from_fn(&slot.shape, |_| S::of(rng.random_range(-bound..bound)))
                    }
                    ParamRole::Gamma | ParamRole::RunningVar => {
                        Tensor::filled(&slot.shape, S::one())
                    }
                    ParamRole::Bias | ParamRole::Beta | ParamRole::RunningMean => {
                        Tensor::zeros(&slot.shape)
                    }
                };
                Param {
                    role: slot.role,
                    value,
                }
            })
            .collect();
        Self { params }
    }

    pub fn check_against(&self, spec: &ModelSpec) -> Result<()> {
        let layout = spec.param_layout();
        if layout.len() != self.params.len() {
            return Err(NnError::Params(format!(
                "spec declares {} parameter tensors, store has {}",
                layout.len(),
                self.params.len()
            )));
        }
        for (i, (slot, p)) in layout.iter().zip(&self.params).enumerate() {
            if slot.role != p.role || slot.shape != p.value.shape() {
                return Err(NnError::Params(format!(
                    "parameter {i}: expected {:?} {:?}, found {:?} {:?}",
                    slot.role,
                    slot.shape,
                    p.role,
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }

    pub fn zeros_like(&self) -> Gradients<S> {
        Gradients {
            tensors: self
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape()))
                .collect(),
        }
    }

    pub fn cast<T: Scalar>(&self) -> Weights<T> {
        Weights {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    role: p.role,
                    value: p.value.cast(),
                })
                .collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.params.iter().all(|p| p.value.all_finite())
    }
}

/// Per-parameter gradients aligned 1:1 with a `Weights` store.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<S = f32> {
    pub tensors: Vec<Tensor<S>>,
}

impl<S: Scalar> Gradients<S> {
    pub fn check_against(&self, weights: &Weights<S>) -> Result<()> {
        if self.tensors.len() != weights.params.len() {
            return Err(NnError::Params(format!(
                "{} gradients for {} parameters",
                self.tensors.len(),
                weights.params.len()
            )));
        }
        for (i, (g, p)) in self.tensors.iter().zip(&weights.params).enumerate() {
            if g.shape() != p.value.shape() {
                return Err(NnError::Params(format!(
                    "gradient {i} has shape {:?}, parameter has {:?}",
                    g.shape(),
                    p.value.shape()
                )));
            }
        }
        Ok(())
    }
}

enum Cache<S> {
    None,
    Input(Tensor<S>),
    Output(Tensor<S>),
    Bn(BatchStats<S>),
    MaxPool {
        shape: Vec<usize>,
        argmax: Vec<usize>,
    },
    Shape(Vec<usize>),
    Residual {
        body: Vec<Cache<S>>,
        shortcut: Vec<Cache<S>>,
    },
    Attention(AttentionCache<S>),
    Standardize(SampleStats<S>),
}

/// Activations recorded by a training-mode forward pass.
pub struct Tape<S> {
    caches: Vec<Cache<S>>,
}

fn attention_params<S: Scalar>(params: &[Param<S>]) -> AttentionParams<'_, S> {
    AttentionParams {
        w1: &params[0].value,
        b1: params[1].value.data(),
        w2: &params[2].value,
        b2: params[3].value.data(),
    }
}

fn forward_layer<S: Scalar>(
    layer: &LayerSpec,
    params: &[Param<S>],
    x: Tensor<S>,
    train: bool,
) -> Result<(Tensor<S>, Cache<S>)> {
    let keep = |t: Tensor<S>| if train { Cache::Input(t) } else { Cache::None };
    Ok(match layer {
        LayerSpec::Conv2d {
            stride,
            padding,
            bias,
            ..
        } => {
            let b = bias.then(|| params[1].value.data());
            let y = conv::conv2d_forward(&x, &params[0].value, b, *stride, *padding)?;
            (y, keep(x))
        }
        LayerSpec::DepthwiseConv2d {
            stride, padding, ..
        } => {
            let y = conv::depthwise_conv2d(&x, &params[0].value, *stride, *padding)?;
            (y, keep(x))
        }
        LayerSpec::PointwiseConv2d { .. } => {
            let y = conv::conv2d_forward(&x, &params[0].value, None, 1, 0)?;
            (y, keep(x))
        }
        LayerSpec::Dense { .. } => {
            let y = dense::dense(&x, &params[0].value, params[1].value.data())?;
            (y, keep(x))
        }
        LayerSpec::Relu => {
            let y = dense::relu(&x);
            let c = if train {
                Cache::Output(y.clone())
            } else {
                Cache::None
            };
            (y, c)
        }
        LayerSpec::BatchNorm { .. } => {
            let (gamma, beta) = (params[0].value.data(), params[1].value.data());
            if train {
                let (y, stats) = norm::batch_norm_train(&x, gamma, beta)?;
                (y, Cache::Bn(stats))
            } else {
                let y = norm::batch_norm_inference(
                    &x,
                    gamma,
                    beta,
                    params[2].value.data(),
                    params[3].value.data(),
                )?;
                (y, Cache::None)
            }
        }
        LayerSpec::MaxPool { size, stride } => {
            let (y, argmax) = pool::max_pool(&x, *size, *stride)?;
            let c = if train {
                Cache::MaxPool {
                    shape: x.shape().to_vec(),
                    argmax,
                }
            } else {
                Cache::None
            };
            (y, c)
        }
        LayerSpec::AvgPool { size, stride } => {
            let y = pool::avg_pool(&x, *size, *stride)?;
            (y, Cache::Shape(x.shape().to_vec()))
        }
        LayerSpec::GlobalAvgPool => {
            let y = pool::global_avg_pool(&x)?;
            (y, Cache::Shape(x.shape().to_vec()))
        }
        LayerSpec::ResidualBlock { body, shortcut } => {
            let split = body.iter().map(|l| l.param_tensor_count()).sum::<usize>();
            let (body_params, short_params) = params.split_at(split);
            let (yb, cb) = forward_chain(body, body_params, x.clone(), train)?;
            let (ys, cs) = forward_chain(shortcut, short_params, x, train)?;
            if yb.shape() != ys.shape() {
                return Err(NnError::shape(format!(
                    "residual branches produced {:?} and {:?}",
                    yb.shape(),
                    ys.shape()
                )));
            }
            let mut y = yb;
            for (a, b) in y.data_mut().iter_mut().zip(ys.data()) {
                *a += *b;
            }
            let c = if train {
                Cache::Residual {
                    body: cb,
                    shortcut: cs,
                }
            } else {
                Cache::None
            };
            (y, c)
        }
        LayerSpec::ChannelAttention { .. } => {
            let p = attention_params(params);
            if train {
                let (y, cache) = attention::channel_attention(&x, &p)?;
                (y, Cache::Attention(cache))
            } else {
                let (_, _, gates) = attention::attention_gates(&x, &p)?;
                (attention::apply_gates(&x, &gates)?, Cache::None)
            }
        }
        LayerSpec::Standardize => {
            let (y, stats) = norm::standardize(&x)?;
            let c = if train {
                Cache::Standardize(stats)
            } else {
                Cache::None
            };
            (y, c)
        }
        LayerSpec::Softmax => {
            let y = dense::softmax(&x)?;
            let c = if train {
                Cache::Output(y.clone())
            } else {
                Cache::None
            };
            (y, c)
        }
    })
}

fn forward_chain<S: Scalar>(
    layers: &[LayerSpec],
    params: &[Param<S>],
    mut x: Tensor<S>,
    train: bool,
) -> Result<(Tensor<S>, Vec<Cache<S>>)> {
    let mut caches = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for layer in layers {
        let n = layer.param_tensor_count();
        let (y, c) = forward_layer(layer, &params[offset..offset + n], x, train)?;
        offset += n;
        caches.push(c);
        x = y;
    }
    Ok((x, caches))
}

fn backward_layer<S: Scalar>(
    layer: &LayerSpec,
    params: &[Param<S>],
    cache: &Cache<S>,
    dy: Tensor<S>,
    grads: &mut [Tensor<S>],
    need_dx: bool,
) -> Result<Option<Tensor<S>>> {
    let missing = || NnError::shape(format!("no training cache for {}", layer.kind_name()));
    match (layer, cache) {
        (
            LayerSpec::Conv2d {
                stride,
                padding,
                bias,
                ..
            },
            Cache::Input(x),
        ) => {
            let (gw, rest) = grads.split_at_mut(1);
            let db = if *bias {
                Some(rest[0].data_mut())
            } else {
                None
            };
            conv::conv2d_backward(
                x,
                &params[0].value,
                &dy,
                *stride,
                *padding,
                gw[0].data_mut(),
                db,
                need_dx,
            )
        }
        (
            LayerSpec::DepthwiseConv2d {
                stride, padding, ..
            },
            Cache::Input(x),
        ) => conv::depthwise_conv2d_backward(
            x,
            &params[0].value,
            &dy,
            *stride,
            *padding,
            grads[0].data_mut(),
            need_dx,
        ),
        (LayerSpec::PointwiseConv2d { .. }, Cache::Input(x)) => conv::conv2d_backward(
            x,
            &params[0].value,
            &dy,
            1,
            0,
            grads[0].data_mut(),
            None,
            need_dx,
        ),
        (LayerSpec::Dense { .. }, Cache::Input(x)) => {
            let (gw, gb) = grads.split_at_mut(1);
            dense::dense_backward(
                x,
                &params[0].value,
                &dy,
                gw[0].data_mut(),
                gb[0].data_mut(),
                need_dx,
            )
        }
        (LayerSpec::Relu, Cache::Output(y)) => Ok(Some(dense::relu_backward(y, &dy))),
        (LayerSpec::BatchNorm { .. }, Cache::Bn(stats)) => {
            let (gg, gb) = grads.split_at_mut(1);
            norm::batch_norm_backward(
                stats,
                params[0].value.data(),
                &dy,
                gg[0].data_mut(),
                gb[0].data_mut(),
            )
            .map(Some)
        }
        (LayerSpec::MaxPool { .. }, Cache::MaxPool { shape, argmax }) => {
            Ok(Some(pool::max_pool_backward(shape, argmax, &dy)))
        }
        (LayerSpec::AvgPool { size, stride }, Cache::Shape(shape)) => {
            pool::avg_pool_backward(shape, *size, *stride, &dy).map(Some)
        }
        (LayerSpec::GlobalAvgPool, Cache::Shape(shape)) => {
            Ok(Some(pool::global_avg_pool_backward(shape, &dy)))
        }
        (
            LayerSpec::ResidualBlock { body, shortcut },
            Cache::Residual {
                body: cb,
                shortcut: cs,
            },
        ) => {
            let split = body.iter().map(|l| l.param_tensor_count()).sum::<usize>();
            let (pb, ps) = params.split_at(split);
            let (gb, gs) = grads.split_at_mut(split);
            let dxb = backward_chain(body, pb, cb, dy.clone(), gb, need_dx)?;
            let dxs = backward_chain(shortcut, ps, cs, dy, gs, need_dx)?;
            Ok(match (dxb, dxs) {
                (Some(mut a), Some(b)) => {
                    for (u, v) in a.data_mut().iter_mut().zip(b.data()) {
                        *u += *v;
                    }
                    Some(a)
                }
                _ => None,
            })
        }
        (LayerSpec::ChannelAttention { .. }, Cache::Attention(cache)) => {
            let p = attention_params(params);
            let [g0, g1, g2, g3] = grads else {
                return Err(NnError::Params("attention needs four gradients".into()));
            };
            attention::channel_attention_backward(
                cache,
                &p,
                &dy,
                [g0.data_mut(), g1.data_mut(), g2.data_mut(), g3.data_mut()],
            )
            .map(Some)
        }
        (LayerSpec::Softmax, Cache::Output(y)) => Ok(Some(dense::softmax_backward(y, &dy))),
        (LayerSpec::Standardize, Cache::Standardize(stats)) => {
            norm::standardize_backward(stats, &dy).map(Some)
        }
        _ => Err(missing()),
    }
}

fn backward_chain<S: Scalar>(
    layers: &[LayerSpec],
    params: &[Param<S>],
    caches: &[Cache<S>],
    mut dy: Tensor<S>,
    grads: &mut [Tensor<S>],
    need_dx: bool,
) -> Result<Option<Tensor<S>>> {
    let mut ends = Vec::with_capacity(layers.len());
    let mut offset = 0;
    for l in layers {
        offset += l.param_tensor_count();
        ends.push(offset);
    }
    for (i, layer) in layers.iter().enumerate().rev() {
        let start = ends[i] - layer.param_tensor_count();
        let want = need_dx || i > 0;
        match backward_layer(
            layer,
            &params[start..ends[i]],
            &caches[i],
            dy,
            &mut grads[start..ends[i]],
            want,
        )? {
            Some(dx) => dy = dx,
            None => return Ok(None),
        }
    }
    Ok(Some(dy))
}

fn commit_chain<S: Scalar>(
    layers: &[LayerSpec],
    params: &mut [Param<S>],
    caches: &[Cache<S>],
    momentum: S,
) {
    let mut offset = 0;
    for (layer, cache) in layers.iter().zip(caches) {
        let n = layer.param_tensor_count();
        let p = &mut params[offset..offset + n];
        match (layer, cache) {
            (LayerSpec::BatchNorm { .. }, Cache::Bn(stats)) => {
                let keep = momentum;
                let take = S::one() - momentum;
                for (r, m) in p[2].value.data_mut().iter_mut().zip(&stats.mean) {
                    *r = keep * *r + take * *m;
                }
                for (r, v) in p[3].value.data_mut().iter_mut().zip(&stats.var) {
                    *r = keep * *r + take * *v;
                }
            }
            (
                LayerSpec::ResidualBlock { body, shortcut },
                Cache::Residual {
                    body: cb,
                    shortcut: cs,
                },
            ) => {
                let split = body.iter().map(|l| l.param_tensor_count()).sum::<usize>();
                let (pb, ps) = p.split_at_mut(split);
                commit_chain(body, pb, cb, momentum);
                commit_chain(shortcut, ps, cs, momentum);
            }
            _ => {}
        }
        offset += n;
    }
}

/// A validated model: layer chain plus weights.
///
/// Inference (`forward`, `forward_trace`) takes `&self` and never mutates, so a
/// network can be shared across threads. Training-mode passes return a
/// [`Tape`]; running batch-norm statistics change only through
/// [`Network::commit_batch_stats`].
#[derive(Debug, Clone, PartialEq)]
pub struct Network<S = f32> {
    spec: ModelSpec,
    weights: Weights<S>,
    offsets: Vec<usize>,
}

impl<S: Scalar> Network<S> {
    pub fn new(spec: ModelSpec, weights: Weights<S>) -> Result<Self> {
        spec.validate()?;
        weights.check_against(&spec)?;
        let mut offsets = Vec::with_capacity(spec.layers.len() + 1);
        let mut acc = 0;
        for l in &spec.layers {
            offsets.push(acc);
            acc += l.param_tensor_count();
        }
        offsets.push(acc);
        Ok(Self {
            spec,
            weights,
            offsets,
        })
    }

    pub fn init(spec: ModelSpec, seed: u64) -> Result<Self> {
        let weights = Weights::init(&spec, seed);
        Self::new(spec, weights)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn weights(&self) -> &Weights<S> {
        &self.weights
    }

    /// Mutable parameter access; shapes must be preserved by the caller.
    pub fn weights_mut(&mut self) -> &mut Weights<S> {
        &mut self.weights
    }

    pub fn into_parts(self) -> (ModelSpec, Weights<S>) {
        (self.spec, self.weights)
    }

    /// Parameter tensors of top-level layer `index`.
    pub fn layer_params(&self, index: usize) -> &[Param<S>] {
        &self.weights.params[self.offsets[index]..self.offsets[index + 1]]
    }

    pub fn layer_params_mut(&mut self, index: usize) -> &mut [Param<S>] {
        let (a, b) = (self.offsets[index], self.offsets[index + 1]);
        &mut self.weights.params[a..b]
    }

    pub fn cast<T: Scalar>(&self) -> Network<T> {
        Network {
            spec: self.spec.clone(),
            weights: self.weights.cast(),
            offsets: self.offsets.clone(),
        }
    }

    fn check_input(&self, x: &Tensor<S>) -> Result<()> {
        if x.shape().len() != self.spec.input_shape.len() + 1
            || x.shape()[1..] != self.spec.input_shape[..]
        {
            return Err(NnError::shape(format!(
                "model expects input [N, {}], got {:?}",
                self.spec
                    .input_shape
                    .iter()
                    .map(|d| d.to_string())
                    .collect::<Vec<_>>()
                    .join(", "),
                x.shape()
            )));
        }
        Ok(())
    }

    fn run(
        &self,
        x: &Tensor<S>,
        train: bool,
        mut trace: Option<&mut Vec<Tensor<S>>>,
    ) -> Result<(Tensor<S>, Vec<Cache<S>>)> {
        self.check_input(x)?;
        let mut caches = Vec::with_capacity(self.spec.layers.len());
        let mut cur = x.clone();
        for (index, layer) in self.spec.layers.iter().enumerate() {
            let (y, c) =
                forward_layer(layer, self.layer_params(index), cur, train).map_err(|e| {
                    NnError::Layer {
                        index,
                        kind: layer.kind_name(),
                        message: e.to_string(),
                    }
                })?;
            if let Some(t) = trace.as_mut() {
                t.push(y.clone());
            }
            caches.push(c);
            cur = y;
        }
        if !cur.all_finite() {
            return Err(NnError::NonFinite("forward pass"));
        }
        Ok((cur, caches))
    }

    /// Inference-mode forward over a batch.
    pub fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        Ok(self.run(x, false, None)?.0)
    }

    /// Inference-mode forward returning the output of every top-level layer.
    pub fn forward_trace(&self, x: &Tensor<S>) -> Result<Vec<Tensor<S>>> {
        let mut trace = Vec::with_capacity(self.spec.layers.len());
        self.run(x, false, Some(&mut trace))?;
        Ok(trace)
    }

    /// Training-mode forward (batch statistics in batch norm).
    pub fn forward_train(&self, x: &Tensor<S>) -> Result<(Tensor<S>, Tape<S>)> {
        let (y, caches) = self.run(x, true, None)?;
        Ok((y, Tape { caches }))
    }

    /// Propagates an output gradient back through a recorded pass.
    pub fn backward_from(&self, tape: &Tape<S>, dy: Tensor<S>) -> Result<Gradients<S>> {
        let mut grads = self.weights.zeros_like();
        let mut dy = dy;
        for (index, layer) in self.spec.layers.iter().enumerate().rev() {
            let (a, b) = (self.offsets[index], self.offsets[index + 1]);
            let res = backward_layer(
                layer,
                &self.weights.params[a..b],
                &tape.caches[index],
                dy,
                &mut grads.tensors[a..b],
                index > 0,
            )
            .map_err(|e| NnError::Layer {
                index,
                kind: layer.kind_name(),
                message: e.to_string(),
            })?;
            match res {
                Some(dx) => dy = dx,
                None => break,
            }
        }
        Ok(grads)
    }

    /// Mean cross-entropy of the batch and the gradient of every parameter.
    pub fn loss_and_gradients(
        &self,
        x: &Tensor<S>,
        labels: &[usize],
    ) -> Result<(S, Gradients<S>, Tape<S>)> {
        let (logits, tape) = self.forward_train(x)?;
        let (loss, dlogits) = dense::cross_entropy(&logits, labels)?;
        let grads = self.backward_from(&tape, dlogits)?;
        Ok((loss, grads, tape))
    }

    /// Single-sample loss and gradients.
    pub fn backward(&self, input: &Tensor<S>, target_label: usize) -> Result<(S, Gradients<S>)> {
        let x = if input.shape() == self.spec.input_shape.as_slice() {
            let mut shape = vec![1];
            shape.extend_from_slice(input.shape());
            input.clone().reshape(&shape)?
        } else {
            input.clone()
        };
        if x.batch() != 1 {
            return Err(NnError::shape("backward takes a single sample"));
        }
        let (loss, grads, _) = self.loss_and_gradients(&x, &[target_label])?;
        Ok((loss, grads))
    }

    /// Folds the batch statistics of a training pass into the running
    /// averages: `running = momentum * running + (1 - momentum) * batch`.
    pub fn commit_batch_stats(&mut self, tape: &Tape<S>, momentum: S) {
        let layers = &self.spec.layers;
        commit_chain(layers, &mut self.weights.params, &tape.caches, momentum);
    }
}
