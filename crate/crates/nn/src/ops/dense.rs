use crate::error::{NnError, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `y = x W^T + b` on a batch flattened to `[N, in]`.
pub fn dense<S: Scalar>(input: &Tensor<S>, weight: &Tensor<S>, bias: &[S]) -> Result<Tensor<S>> {
    let n = input.batch();
    let inf = input.len() / n;
    let (out, win) = match *weight.shape() {
        [o, i] => (o, i),
        _ => return Err(NnError::shape("dense weight must be [out, in]")),
    };
    if win != inf || bias.len() != out {
        return Err(NnError::shape(format!(
            "dense layer expects {win} inputs / {out} biases, got {inf} inputs / {} biases",
            bias.len()
        )));
    }
    let mut y = vec![S::zero(); n * out];
    for row in y.chunks_mut(out) {
        row.copy_from_slice(bias);
    }
    S::gemm(
        false,
        true,
        n,
        out,
        inf,
        S::one(),
        input.data(),
        weight.data(),
        S::one(),
        &mut y,
    );
    Tensor::new(vec![n, out], y)
}

/// Accumulates `dW`, `db` and returns `dx` reshaped like `input`.
pub fn dense_backward<S: Scalar>(
    input: &Tensor<S>,
    weight: &Tensor<S>,
    dy: &Tensor<S>,
    dweight: &mut [S],
    dbias: &mut [S],
    need_input_grad: bool,
) -> Result<Option<Tensor<S>>> {
    let n = input.batch();
    let inf = input.len() / n;
    let out = weight.shape()[0];
    S::gemm(
        true,
        false,
        out,
        inf,
        n,
        S::one(),
        dy.data(),
        input.data(),
        S::one(),
        dweight,
    );
    for row in dy.data().chunks(out) {
        for (b, g) in dbias.iter_mut().zip(row) {
            *b += *g;
        }
    }
    if !need_input_grad {
        return Ok(None);
    }
    let mut dx = vec![S::zero(); n * inf];
    S::gemm(
        false,
        false,
        n,
        inf,
        out,
        S::one(),
        dy.data(),
        weight.data(),
        S::zero(),
        &mut dx,
    );
    Ok(Some(Tensor::new(input.shape().to_vec(), dx)?))
}

pub fn relu<S: Scalar>(input: &Tensor<S>) -> Tensor<S> {
    input.map(|v| if v > S::zero() { v } else { S::zero() })
}

/// Uses the forward output as the mask.
pub fn relu_backward<S: Scalar>(output: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let data = output
        .data()
        .iter()
        .zip(dy.data())
        .map(|(&y, &g)| if y > S::zero() { g } else { S::zero() })
        .collect();
    Tensor::new(dy.shape().to_vec(), data).expect("relu grad keeps shape")
}

pub fn sigmoid<S: Scalar>(v: S) -> S {
    if v >= S::zero() {
        S::one() / (S::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (S::one() + e)
    }
}

/// Row-wise softmax over `[N, C]` with max subtraction.
pub fn softmax<S: Scalar>(logits: &Tensor<S>) -> Result<Tensor<S>> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => {
            return Err(NnError::shape(format!(
                "softmax expects [N, C], got {:?}",
                logits.shape()
            )))
        }
    };
    let mut out = Vec::with_capacity(n * c);
    for row in logits.data().chunks(c) {
        out.extend(softmax_row(row));
    }
    Tensor::new(vec![n, c], out)
}

pub fn softmax_row<S: Scalar>(row: &[S]) -> Vec<S> {
    let max = row.iter().copied().fold(S::neg_infinity(), S::max);
    let exps: Vec<S> = row.iter().map(|&v| (v - max).exp()).collect();
    let sum: S = exps.iter().copied().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

pub fn softmax_backward<S: Scalar>(output: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    let c = output.shape()[1];
    let mut dx = Vec::with_capacity(output.len());
    for (y, g) in output.data().chunks(c).zip(dy.data().chunks(c)) {
        let dot: S = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
        dx.extend(y.iter().zip(g).map(|(&a, &b)| a * (b - dot)));
    }
    Tensor::new(output.shape().to_vec(), dx).expect("softmax grad keeps shape")
}

/// Mean softmax cross-entropy over a batch of logits and its gradient with
/// respect to the logits.
pub fn cross_entropy<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> Result<(S, Tensor<S>)> {
    let (n, c) = match *logits.shape() {
        [n, c] => (n, c),
        _ => return Err(NnError::shape("cross entropy expects [N, C] logits")),
    };
    if labels.len() != n {
        return Err(NnError::shape(format!(
            "{} labels for a batch of {n}",
            labels.len()
        )));
    }
    if let Some(&label) = labels.iter().find(|&&l| l >= c) {
        return Err(NnError::LabelOutOfRange { label, classes: c });
    }
    let inv_n = S::one() / S::of(n as f64);
    let mut loss = S::zero();
    let mut grad = Vec::with_capacity(n * c);
    for (row, &label) in logits.data().chunks(c).zip(labels) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let sum: S = row.iter().map(|&v| (v - max).exp()).sum();
        let log_z = max + sum.ln();
        loss += log_z - row[label];
        for (j, &v) in row.iter().enumerate() {
            let p = (v - log_z).exp();
            let t = if j == label { S::one() } else { S::zero() };
            grad.push((p - t) * inv_n);
        }
    }
    Ok((loss * inv_n, Tensor::new(vec![n, c], grad)?))
}
