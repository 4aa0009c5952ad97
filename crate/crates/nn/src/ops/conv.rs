//! Convolution kernels (cross-correlation, zero padding).
//!
//! Dense convolutions lower to im2col + GEMM per sample; depthwise
//! convolutions are direct loops since each channel only sees its own plane.

use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
struct Geom {
    cin: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Geom {
    fn new(cin: usize, h: usize, w: usize, k: usize, stride: usize, pad: usize) -> Result<Self> {
        if stride == 0 {
            return Err(NnError::shape("stride must be >= 1"));
        }
        if k == 0 || k.is_multiple_of(2) {
            return Err(NnError::shape(format!("kernel size {k} must be odd")));
        }
        if h + 2 * pad < k || w + 2 * pad < k {
            return Err(NnError::shape(format!(
                "input {h}x{w} with padding {pad} smaller than kernel {k}"
            )));
        }
        Ok(Self {
            cin,
            h,
            w,
            k,
            stride,
            pad,
            ho: (h + 2 * pad - k) / stride + 1,
            wo: (w + 2 * pad - k) / stride + 1,
        })
    }

    fn is_plain_1x1(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }

    /// Output index range `[lo, hi)` for which `o*stride + off - pad` lands
    /// inside `[0, size)`.
    fn valid_range(&self, off: usize, size: usize, out: usize) -> (usize, usize) {
        let s = self.stride as isize;
        let shift = off as isize - self.pad as isize;
        // smallest o with o*s + shift >= 0
        let lo = if shift >= 0 {
            0
        } else {
            ((-shift) + s - 1) / s
        };
        // largest o with o*s + shift <= size-1
        let last = size as isize - 1 - shift;
        let hi = if last < 0 { 0 } else { last / s + 1 };
        let lo = (lo as usize).min(out);
        let hi = (hi as usize).min(out);
        (lo, hi.max(lo))
    }
}

fn im2col<S: Scalar>(x: &[S], g: &Geom, cols: &mut [S]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let xc = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let dst = &mut cols[row * plane..(row + 1) * plane];
                let (ow_lo, ow_hi) = g.valid_range(kj, g.w, g.wo);
                for oh in 0..g.ho {
                    let drow = &mut dst[oh * g.wo..(oh + 1) * g.wo];
                    if oh < oh_lo || oh >= oh_hi {
                        drow.fill(S::zero());
                        continue;
                    }
                    let ih = oh * g.stride + ki - g.pad;
                    let src = &xc[ih * g.w..(ih + 1) * g.w];
                    drow[..ow_lo].fill(S::zero());
                    drow[ow_hi..].fill(S::zero());
                    if g.stride == 1 {
                        let iw0 = ow_lo + kj - g.pad;
                        drow[ow_lo..ow_hi].copy_from_slice(&src[iw0..iw0 + (ow_hi - ow_lo)]);
                    } else {
                        for ow in ow_lo..ow_hi {
                            drow[ow] = src[ow * g.stride + kj - g.pad];
                        }
                    }
                }
            }
        }
    }
}

fn col2im<S: Scalar>(cols: &[S], g: &Geom, dx: &mut [S]) {
    let plane = g.ho * g.wo;
    for c in 0..g.cin {
        let dxc = &mut dx[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ki in 0..g.k {
            let (oh_lo, oh_hi) = g.valid_range(ki, g.h, g.ho);
            for kj in 0..g.k {
                let row = (c * g.k + ki) * g.k + kj;
                let src = &cols[row * plane..(row + 1) * plane];
                let (ow_lo, ow_hi) = g.valid_range(kj, g.w, g.wo);
                for oh in oh_lo..oh_hi {
                    let ih = oh * g.stride + ki - g.pad;
                    let srow = &src[oh * g.wo..(oh + 1) * g.wo];
                    let drow = &mut dxc[ih * g.w..(ih + 1) * g.w];
                    for ow in ow_lo..ow_hi {
                        drow[ow * g.stride + kj - g.pad] += srow[ow];
                    }
                }
            }
        }
    }
}

fn check_kernel<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
) -> Result<(usize, usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    let (cout, kin, kh, kw) = kernel.dims4().map_err(|_| {
        NnError::shape(format!(
            "kernel must be [Cout, Cin, K, K], got {:?}",
            kernel.shape()
        ))
    })?;
    if kin != c {
        return Err(NnError::shape(format!(
            "kernel expects {kin} input channels but input has {c}"
        )));
    }
    if kh != kw {
        return Err(NnError::shape(format!(
            "kernel must be square, got {kh}x{kw}"
        )));
    }
    Ok((n, c, h, w, cout, kh))
}

/// Full 2-D convolution of an NCHW batch.
pub fn conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    conv2d_forward(input, kernel, None, stride, padding)
}

pub fn conv2d_forward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    bias: Option<&[S]>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (n, c, h, w, cout, k) = check_kernel(input, kernel)?;
    let g = Geom::new(c, h, w, k, stride, padding)?;
    if let Some(b) = bias {
        if b.len() != cout {
            return Err(NnError::shape(format!(
                "bias has {} entries for {cout} output channels",
                b.len()
            )));
        }
    }
    let plane = g.ho * g.wo;
    let ckk = c * k * k;
    let mut out = Tensor::zeros(&[n, cout, g.ho, g.wo]);
    let mut cols = if g.is_plain_1x1() {
        Vec::new()
    } else {
        vec![S::zero(); ckk * plane]
    };
    let x = input.data();
    for s in 0..n {
        let xs = &x[s * c * h * w..(s + 1) * c * h * w];
        let ys = &mut out.data_mut()[s * cout * plane..(s + 1) * cout * plane];
        let b_mat: &[S] = if g.is_plain_1x1() {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        S::gemm(
            false,
            false,
            cout,
            plane,
            ckk,
            S::one(),
            kernel.data(),
            b_mat,
            S::zero(),
            ys,
        );
        if let Some(b) = bias {
            for (co, bv) in b.iter().enumerate() {
                for v in &mut ys[co * plane..(co + 1) * plane] {
                    *v += *bv;
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of a convolution. Accumulates into `dweight` / `dbias` and
/// returns the input gradient when `need_input_grad` is set.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    dy: &Tensor<S>,
    stride: usize,
    padding: usize,
    dweight: &mut [S],
    dbias: Option<&mut [S]>,
    need_input_grad: bool,
) -> Result<Option<Tensor<S>>> {
    let (n, c, h, w, cout, k) = check_kernel(input, kernel)?;
    let g = Geom::new(c, h, w, k, stride, padding)?;
    if dy.shape() != [n, cout, g.ho, g.wo] {
        return Err(NnError::shape(format!(
            "output gradient shape {:?} does not match [{n}, {cout}, {}, {}]",
            dy.shape(),
            g.ho,
            g.wo
        )));
    }
    let plane = g.ho * g.wo;
    let ckk = c * k * k;
    let plain = g.is_plain_1x1();
    let mut cols = if plain {
        Vec::new()
    } else {
        vec![S::zero(); ckk * plane]
    };
    let mut dcols = vec![S::zero(); ckk * plane];
    let mut dx = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let x = input.data();
    let dyd = dy.data();
    for s in 0..n {
        let xs = &x[s * c * h * w..(s + 1) * c * h * w];
        let dys = &dyd[s * cout * plane..(s + 1) * cout * plane];
        let b_mat: &[S] = if plain {
            xs
        } else {
            im2col(xs, &g, &mut cols);
            &cols
        };
        // dW += dy_s * cols^T
        S::gemm(
            false,
            true,
            cout,
            ckk,
            plane,
            S::one(),
            dys,
            b_mat,
            S::one(),
            dweight,
        );
        if let Some(dx) = dx.as_mut() {
            let dxs = &mut dx.data_mut()[s * c * h * w..(s + 1) * c * h * w];
            if plain {
                S::gemm(
                    true,
                    false,
                    ckk,
                    plane,
                    cout,
                    S::one(),
                    kernel.data(),
                    dys,
                    S::zero(),
                    dxs,
                );
            } else {
                S::gemm(
                    true,
                    false,
                    ckk,
                    plane,
                    cout,
                    S::one(),
                    kernel.data(),
                    dys,
                    S::zero(),
                    &mut dcols,
                );
                col2im(&dcols, &g, dxs);
            }
        }
    }
    if let Some(db) = dbias {
        for s in 0..n {
            for (co, b) in db.iter_mut().enumerate() {
                let off = (s * cout + co) * plane;
                *b += dyd[off..off + plane].iter().copied().sum::<S>();
            }
        }
    }
    Ok(dx)
}

fn check_depthwise<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
) -> Result<(usize, usize, usize, usize, usize)> {
    let (n, c, h, w) = input.dims4()?;
    match *kernel.shape() {
        [kc, 1, kh, kw] if kc == c && kh == kw => Ok((n, c, h, w, kh)),
        [kc, 1, _, _] if kc != c => Err(NnError::shape(format!(
            "depthwise kernel has {kc} channels but input has {c}"
        ))),
        _ => Err(NnError::shape(format!(
            "depthwise kernel must be [C, 1, K, K], got {:?}",
            kernel.shape()
        ))),
    }
}

/// Per-channel spatial convolution; kernel is `[C, 1, K, K]`.
pub fn depthwise_conv2d<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<S>> {
    let (n, c, h, w, k) = check_depthwise(input, kernel)?;
    let g = Geom::new(1, h, w, k, stride, padding)?;
    let mut out = Tensor::zeros(&[n, c, g.ho, g.wo]);
    let x = input.data();
    let kd = kernel.data();
    let od = out.data_mut();
    for s in 0..n {
        for ch in 0..c {
            let xp = &x[(s * c + ch) * h * w..(s * c + ch + 1) * h * w];
            let kp = &kd[ch * k * k..(ch + 1) * k * k];
            let op = &mut od[(s * c + ch) * g.ho * g.wo..(s * c + ch + 1) * g.ho * g.wo];
            for ki in 0..k {
                let (oh_lo, oh_hi) = g.valid_range(ki, h, g.ho);
                for kj in 0..k {
                    let wv = kp[ki * k + kj];
                    let (ow_lo, ow_hi) = g.valid_range(kj, w, g.wo);
                    for oh in oh_lo..oh_hi {
                        let ih = oh * stride + ki - padding;
                        let orow = &mut op[oh * g.wo..(oh + 1) * g.wo];
                        let xrow = &xp[ih * w..(ih + 1) * w];
                        for ow in ow_lo..ow_hi {
                            orow[ow] += wv * xrow[ow * stride + kj - padding];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

#[allow(clippy::too_many_arguments)]
pub fn depthwise_conv2d_backward<S: Scalar>(
    input: &Tensor<S>,
    kernel: &Tensor<S>,
    dy: &Tensor<S>,
    stride: usize,
    padding: usize,
    dweight: &mut [S],
    need_input_grad: bool,
) -> Result<Option<Tensor<S>>> {
    let (n, c, h, w, k) = check_depthwise(input, kernel)?;
    let g = Geom::new(1, h, w, k, stride, padding)?;
    if dy.shape() != [n, c, g.ho, g.wo] {
        return Err(NnError::shape(format!(
            "depthwise output gradient shape {:?} mismatched",
            dy.shape()
        )));
    }
    let mut dx = need_input_grad.then(|| Tensor::zeros(input.shape()));
    let x = input.data();
    let kd = kernel.data();
    let dyd = dy.data();
    for s in 0..n {
        for ch in 0..c {
            let base_in = (s * c + ch) * h * w;
            let base_out = (s * c + ch) * g.ho * g.wo;
            let xp = &x[base_in..base_in + h * w];
            let gp = &dyd[base_out..base_out + g.ho * g.wo];
            for ki in 0..k {
                let (oh_lo, oh_hi) = g.valid_range(ki, h, g.ho);
                for kj in 0..k {
                    let (ow_lo, ow_hi) = g.valid_range(kj, w, g.wo);
                    let mut acc = S::zero();
                    for oh in oh_lo..oh_hi {
                        let ih = oh * stride + ki - padding;
                        for ow in ow_lo..ow_hi {
                            acc += gp[oh * g.wo + ow] * xp[ih * w + ow * stride + kj - padding];
                        }
                    }
                    dweight[ch * k * k + ki * k + kj] += acc;
                    if let Some(dx) = dx.as_mut() {
                        let wv = kd[ch * k * k + ki * k + kj];
                        let dxp = &mut dx.data_mut()[base_in..base_in + h * w];
                        for oh in oh_lo..oh_hi {
                            let ih = oh * stride + ki - padding;
                            for ow in ow_lo..ow_hi {
                                dxp[ih * w + ow * stride + kj - padding] += wv * gp[oh * g.wo + ow];
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(dx)
}

/// Depthwise `K x K` filtering (stride 1, same padding) followed by a
/// pointwise `1 x 1` channel mix.
pub fn depthwise_separable_conv<S: Scalar>(
    input: &Tensor<S>,
    depthwise_kernel: &Tensor<S>,
    pointwise_kernel: &Tensor<S>,
) -> Result<Tensor<S>> {
    let k = depthwise_kernel.shape().get(2).copied().unwrap_or(1);
    let mid = depthwise_conv2d(input, depthwise_kernel, 1, k / 2)?;
    match *pointwise_kernel.shape() {
        [_, _, 1, 1] => conv2d(&mid, pointwise_kernel, 1, 0),
        _ => Err(NnError::shape(format!(
            "pointwise kernel must be [Cout, C, 1, 1], got {:?}",
            pointwise_kernel.shape()
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identity_kernel_reproduces_input() {
        let x = Tensor::<f32>::from_fn(&[1, 1, 4, 4], |i| i as f32 * 0.5 - 3.0);
        let k = Tensor::<f32>::filled(&[1, 1, 1, 1], 1.0);
        assert_eq!(conv2d(&x, &k, 1, 0).unwrap(), x);
    }

    #[test]
    fn constant_field_sums_to_nine() {
        let x = Tensor::<f32>::filled(&[1, 1, 4, 4], 1.0);
        let k = Tensor::<f32>::filled(&[1, 1, 3, 3], 1.0);
        let y = conv2d(&x, &k, 1, 0).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 9.0));
    }

    #[test]
    fn channel_mismatch_is_a_shape_error() {
        let x = Tensor::<f32>::zeros(&[1, 3, 5, 5]);
        let k = Tensor::<f32>::zeros(&[2, 4, 3, 3]);
        assert!(matches!(conv2d(&x, &k, 1, 1), Err(NnError::Shape(_))));
        let dw = Tensor::<f32>::zeros(&[2, 1, 3, 3]);
        let pw = Tensor::<f32>::zeros(&[4, 2, 1, 1]);
        assert!(matches!(
            depthwise_separable_conv(&x, &dw, &pw),
            Err(NnError::Shape(_))
        ));
    }

    #[test]
    fn valid_range_matches_brute_force() {
        for &(k, s, p, size) in &[
            (3, 1, 1, 5),
            (3, 2, 1, 8),
            (5, 2, 0, 9),
            (1, 3, 0, 7),
            (3, 2, 2, 4),
        ] {
            let g = Geom::new(1, size, size, k, s, p).unwrap();
            for off in 0..k {
                let (lo, hi) = g.valid_range(off, size, g.ho);
                for o in 0..g.ho {
                    let pos = (o * s + off) as isize - p as isize;
                    let inside = pos >= 0 && (pos as usize) < size;
                    assert_eq!(
                        inside,
                        o >= lo && o < hi,
                        "k={k} s={s} p={p} off={off} o={o}"
                    );
                }
            }
        }
    }
}
