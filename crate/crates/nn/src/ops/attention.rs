use crate::error::{NnError, Result};
use crate::ops::dense::{dense, dense_backward, relu, relu_backward, sigmoid};
use crate::ops::pool::{global_avg_pool, global_avg_pool_backward};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct AttentionCache<S> {
    pub input: Tensor<S>,
    pub squeezed: Tensor<S>,
    pub hidden: Tensor<S>,
    pub gates: Tensor<S>,
}

pub struct AttentionParams<'a, S> {
    pub w1: &'a Tensor<S>,
    pub b1: &'a [S],
    pub w2: &'a Tensor<S>,
    pub b2: &'a [S],
}

/// Per-channel sigmoid gates `[N, C]` computed from the pooled input.
pub fn attention_gates<S: Scalar>(
    x: &Tensor<S>,
    p: &AttentionParams<'_, S>,
) -> Result<(Tensor<S>, Tensor<S>, Tensor<S>)> {
    let squeezed = global_avg_pool(x)?;
    let hidden = relu(&dense(&squeezed, p.w1, p.b1)?);
    let gates = dense(&hidden, p.w2, p.b2)?.map(sigmoid);
    Ok((squeezed, hidden, gates))
}

pub fn apply_gates<S: Scalar>(x: &Tensor<S>, gates: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = x.dims4()?;
    if gates.shape() != [n, c] {
        return Err(NnError::shape(format!(
            "gates {:?} do not match input channels [{n}, {c}]",
            gates.shape()
        )));
    }
    let plane = h * w;
    let mut y = x.clone();
    for (p, &g) in gates.data().iter().enumerate() {
        for v in &mut y.data_mut()[p * plane..(p + 1) * plane] {
            *v *= g;
        }
    }
    Ok(y)
}

pub fn channel_attention<S: Scalar>(
    x: &Tensor<S>,
    p: &AttentionParams<'_, S>,
) -> Result<(Tensor<S>, AttentionCache<S>)> {
    let (squeezed, hidden, gates) = attention_gates(x, p)?;
    let y = apply_gates(x, &gates)?;
    Ok((
        y,
        AttentionCache {
            input: x.clone(),
            squeezed,
            hidden,
            gates,
        },
    ))
}

/// Gradient slices in parameter order `w1, b1, w2, b2`.
pub fn channel_attention_backward<S: Scalar>(
    cache: &AttentionCache<S>,
    p: &AttentionParams<'_, S>,
    dy: &Tensor<S>,
    grads: [&mut [S]; 4],
) -> Result<Tensor<S>> {
    let [dw1, db1, dw2, db2] = grads;
    let (n, c, h, w) = cache.input.dims4()?;
    let plane = h * w;
    let x = cache.input.data();
    let g = dy.data();
    let gates = cache.gates.data();
    let mut dx = dy.clone();
    let mut dz2 = vec![S::zero(); n * c];
    for pidx in 0..n * c {
        let range = pidx * plane..(pidx + 1) * plane;
        let dg: S = x[range.clone()]
            .iter()
            .zip(&g[range.clone()])
            .map(|(&a, &b)| a * b)
            .sum();
        let gv = gates[pidx];
        dz2[pidx] = dg * gv * (S::one() - gv);
        for v in &mut dx.data_mut()[range] {
            *v *= gv;
        }
    }
    let dz2 = Tensor::new(vec![n, c], dz2)?;
    let dhidden =
        dense_backward(&cache.hidden, p.w2, &dz2, dw2, db2, true)?.expect("input grad requested");
    let dz1 = relu_backward(&cache.hidden, &dhidden);
    let dsq =
        dense_backward(&cache.squeezed, p.w1, &dz1, dw1, db1, true)?.expect("input grad requested");
    let spread = global_avg_pool_backward(cache.input.shape(), &dsq);
    for (a, b) in dx.data_mut().iter_mut().zip(spread.data()) {
        *a += *b;
    }
    Ok(dx)
}
