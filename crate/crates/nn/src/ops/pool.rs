use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

fn pooled_dims(h: usize, w: usize, size: usize, stride: usize) -> Result<(usize, usize)> {
    if size == 0 || stride == 0 || h < size || w < size {
        return Err(NnError::shape(format!(
            "cannot pool {h}x{w} with window {size} stride {stride}"
        )));
    }
    Ok(((h - size) / stride + 1, (w - size) / stride + 1))
}

/// Max pooling without padding. Returns the output and, for each output
/// element, the flat input index it was taken from (first maximum wins).
pub fn max_pool<S: Scalar>(
    input: &Tensor<S>,
    size: usize,
    stride: usize,
) -> Result<(Tensor<S>, Vec<usize>)> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = pooled_dims(h, w, size, stride)?;
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let mut arg = vec![0usize; n * c * ho * wo];
    let x = input.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut best = base + oh * stride * w + ow * stride;
                for i in 0..size {
                    for j in 0..size {
                        let idx = base + (oh * stride + i) * w + ow * stride + j;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (p * ho + oh) * wo + ow;
                od[o] = x[best];
                arg[o] = best;
            }
        }
    }
    Ok((out, arg))
}

pub fn max_pool_backward<S: Scalar>(
    input_shape: &[usize],
    argmax: &[usize],
    dy: &Tensor<S>,
) -> Tensor<S> {
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    for (g, &idx) in dy.data().iter().zip(argmax) {
        d[idx] += *g;
    }
    dx
}

pub fn avg_pool<S: Scalar>(input: &Tensor<S>, size: usize, stride: usize) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4()?;
    let (ho, wo) = pooled_dims(h, w, size, stride)?;
    let inv = S::one() / S::of((size * size) as f64);
    let mut out = Tensor::zeros(&[n, c, ho, wo]);
    let x = input.data();
    let od = out.data_mut();
    for p in 0..n * c {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let mut acc = S::zero();
                for i in 0..size {
                    let row = base + (oh * stride + i) * w + ow * stride;
                    acc += x[row..row + size].iter().copied().sum::<S>();
                }
                od[(p * ho + oh) * wo + ow] = acc * inv;
            }
        }
    }
    Ok(out)
}

pub fn avg_pool_backward<S: Scalar>(
    input_shape: &[usize],
    size: usize,
    stride: usize,
    dy: &Tensor<S>,
) -> Result<Tensor<S>> {
    let (n, c, h, w) = match *input_shape {
        [n, c, h, w] => (n, c, h, w),
        _ => return Err(NnError::shape("avg pool backward needs NCHW input shape")),
    };
    let (ho, wo) = pooled_dims(h, w, size, stride)?;
    let inv = S::one() / S::of((size * size) as f64);
    let mut dx = Tensor::zeros(input_shape);
    let d = dx.data_mut();
    let g = dy.data();
    for p in 0..n * c {
        let base = p * h * w;
        for oh in 0..ho {
            for ow in 0..wo {
                let gv = g[(p * ho + oh) * wo + ow] * inv;
                for i in 0..size {
                    let row = base + (oh * stride + i) * w + ow * stride;
                    for v in &mut d[row..row + size] {
                        *v += gv;
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// `[N, C, H, W] -> [N, C]` spatial mean.
pub fn global_avg_pool<S: Scalar>(input: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c, h, w) = input.dims4()?;
    let hw = h * w;
    let inv = S::one() / S::of(hw as f64);
    let x = input.data();
    let data = (0..n * c)
        .map(|p| x[p * hw..(p + 1) * hw].iter().copied().sum::<S>() * inv)
        .collect();
    Tensor::new(vec![n, c], data)
}

pub fn global_avg_pool_backward<S: Scalar>(input_shape: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let hw: usize = input_shape[2..].iter().product();
    let inv = S::one() / S::of(hw as f64);
    let mut dx = Tensor::zeros(input_shape);
    for (p, g) in dy.data().iter().enumerate() {
        let gv = *g * inv;
        for v in &mut dx.data_mut()[p * hw..(p + 1) * hw] {
            *v = gv;
        }
    }
    dx
}
