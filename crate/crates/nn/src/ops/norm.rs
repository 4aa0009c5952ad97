use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

/// Saved state of a training-mode batch norm.
#[derive(Debug, Clone)]
pub struct BatchStats<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
    pub mean: Vec<S>,
    pub var: Vec<S>,
}

fn layout<S: Scalar>(x: &Tensor<S>, channels: usize) -> Result<(usize, usize)> {
    let (n, c, plane) = match *x.shape() {
        [n, c] => (n, c, 1),
        [n, c, h, w] => (n, c, h * w),
        _ => return Err(NnError::shape("batch norm expects [N, C] or [N, C, H, W]")),
    };
    if c != channels {
        return Err(NnError::shape(format!(
            "batch norm over {channels} channels got {c}"
        )));
    }
    Ok((n, plane))
}

/// Normalises with the frozen running statistics.
pub fn batch_norm_inference<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
    running_mean: &[S],
    running_var: &[S],
) -> Result<Tensor<S>> {
    let c = gamma.len();
    let (n, plane) = layout(x, c)?;
    let eps = S::of(BN_EPS);
    let scale: Vec<S> = (0..c)
        .map(|ch| gamma[ch] / (running_var[ch] + eps).sqrt())
        .collect();
    let mut out = x.clone();
    let d = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let (m, k, b) = (running_mean[ch], scale[ch], beta[ch]);
            for v in &mut d[off..off + plane] {
                *v = (*v - m) * k + b;
            }
        }
    }
    Ok(out)
}

/// Normalises with the batch's own statistics (biased variance).
pub fn batch_norm_train<S: Scalar>(
    x: &Tensor<S>,
    gamma: &[S],
    beta: &[S],
) -> Result<(Tensor<S>, BatchStats<S>)> {
    let c = gamma.len();
    let (n, plane) = layout(x, c)?;
    let count = S::of((n * plane) as f64);
    let eps = S::of(BN_EPS);
    let xd = x.data();
    let mut mean = vec![S::zero(); c];
    let mut var = vec![S::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            mean[ch] += xd[off..off + plane].iter().copied().sum::<S>();
        }
    }
    for m in &mut mean {
        *m /= count;
    }
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let m = mean[ch];
            var[ch] += xd[off..off + plane]
                .iter()
                .map(|&v| (v - m) * (v - m))
                .sum::<S>();
        }
    }
    for v in &mut var {
        *v /= count;
    }
    let inv_std: Vec<S> = var.iter().map(|&v| S::one() / (v + eps).sqrt()).collect();
    let mut xhat = x.clone();
    let mut y = x.clone();
    {
        let hd = xhat.data_mut();
        let yd = y.data_mut();
        for s in 0..n {
            for ch in 0..c {
                let off = (s * c + ch) * plane;
                for i in off..off + plane {
                    let h = (xd[i] - mean[ch]) * inv_std[ch];
                    hd[i] = h;
                    yd[i] = gamma[ch] * h + beta[ch];
                }
            }
        }
    }
    Ok((
        y,
        BatchStats {
            xhat,
            inv_std,
            mean,
            var,
        },
    ))
}

pub fn batch_norm_backward<S: Scalar>(
    stats: &BatchStats<S>,
    gamma: &[S],
    dy: &Tensor<S>,
    dgamma: &mut [S],
    dbeta: &mut [S],
) -> Result<Tensor<S>> {
    let c = gamma.len();
    let (n, plane) = layout(dy, c)?;
    let m = S::of((n * plane) as f64);
    let g = dy.data();
    let h = stats.xhat.data();
    let mut sum_g = vec![S::zero(); c];
    let mut sum_gh = vec![S::zero(); c];
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            for i in off..off + plane {
                sum_g[ch] += g[i];
                sum_gh[ch] += g[i] * h[i];
            }
        }
    }
    for ch in 0..c {
        dgamma[ch] += sum_gh[ch];
        dbeta[ch] += sum_g[ch];
    }
    let mut dx = dy.clone();
    let d = dx.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let off = (s * c + ch) * plane;
            let k = gamma[ch] * stats.inv_std[ch] / m;
            for i in off..off + plane {
                d[i] = k * (m * g[i] - sum_g[ch] - h[i] * sum_gh[ch]);
            }
        }
    }
    Ok(dx)
}

/// Saved state of a per-sample standardisation.
#[derive(Debug, Clone)]
pub struct SampleStats<S> {
    pub xhat: Tensor<S>,
    pub inv_std: Vec<S>,
}

/// Rescales every sample (leading axis) to zero mean and unit variance.
pub fn standardize<S: Scalar>(x: &Tensor<S>) -> Result<(Tensor<S>, SampleStats<S>)> {
    let n = *x
        .shape()
        .first()
        .ok_or_else(|| NnError::shape("standardize needs a batch axis"))?;
    let len = x.len().checked_div(n).unwrap_or(0);
    let eps = S::of(BN_EPS);
    let mut xhat = x.clone();
    let mut inv_std = Vec::with_capacity(n);
    for row in xhat.data_mut().chunks_mut(len.max(1)) {
        let count = S::of(row.len() as f64);
        let mean = row.iter().copied().sum::<S>() / count;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<S>() / count;
        let k = S::one() / (var + eps).sqrt();
        for v in row.iter_mut() {
            *v = (*v - mean) * k;
        }
        inv_std.push(k);
    }
    Ok((xhat.clone(), SampleStats { xhat, inv_std }))
}

pub fn standardize_backward<S: Scalar>(
    stats: &SampleStats<S>,
    dy: &Tensor<S>,
) -> Result<Tensor<S>> {
    if dy.shape() != stats.xhat.shape() {
        return Err(NnError::shape(format!(
            "standardize gradient {:?} for activation {:?}",
            dy.shape(),
            stats.xhat.shape()
        )));
    }
    let n = stats.inv_std.len();
    let len = dy.len().checked_div(n).unwrap_or(0);
    let mut dx = dy.clone();
    for (s, row) in dx.data_mut().chunks_mut(len.max(1)).enumerate() {
        let h = &stats.xhat.data()[s * len..(s + 1) * len];
        let m = S::of(len as f64);
        let sum_g = row.iter().copied().sum::<S>();
        let sum_gh = row.iter().zip(h).map(|(&g, &h)| g * h).sum::<S>();
        let k = stats.inv_std[s] / m;
        for (g, &h) in row.iter_mut().zip(h) {
            *g = k * (m * *g - sum_g - h * sum_gh);
        }
    }
    Ok(dx)
}
