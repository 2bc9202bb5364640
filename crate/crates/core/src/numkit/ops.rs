use super::DenseTensor;
use crate::error::{Error, Result};

/// Row-major matrix product of two rank-2 tensors, accumulated in `f64`.
pub fn matmul(a: &DenseTensor, b: &DenseTensor) -> Result<DenseTensor> {
    if a.rank() != 2 || b.rank() != 2 || a.shape()[1] != b.shape()[0] {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let (rows, inner, cols) = (a.shape()[0], a.shape()[1], b.shape()[1]);
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![0.0f32; rows * cols];
    let mut acc = vec![0.0f64; cols];
    for r in 0..rows {
        acc.iter_mut().for_each(|v| *v = 0.0);
        for k in 0..inner {
            let lhs = ad[r * inner + k] as f64;
            if lhs == 0.0 {
                continue;
            }
            for (slot, &rhs) in acc.iter_mut().zip(&bd[k * cols..(k + 1) * cols]) {
                *slot += lhs * rhs as f64;
            }
        }
        for (o, &v) in out[r * cols..(r + 1) * cols].iter_mut().zip(&acc) {
            *o = v as f32;
        }
    }
    DenseTensor::new(&[rows, cols], out)
}

/// Logistic function, stable for large `|x|`.
#[inline]
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

pub fn sigmoid(x: &DenseTensor) -> DenseTensor {
    let mut out = x.clone();
    for v in out.data_mut() {
        *v = sigmoid_scalar(*v as f64) as f32;
    }
    out
}

/// Softmax over `f64` logits, shifted by the maximum.
pub fn softmax_f64(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = logits.iter().map(|&l| (l - max).exp()).collect();
    let sum: f64 = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    out
}

pub fn softmax(logits: &DenseTensor) -> Result<DenseTensor> {
    if logits.rank() != 1 {
        return Err(Error::shape("softmax", logits.shape(), &[logits.len()]));
    }
    let wide: Vec<f64> = logits.data().iter().map(|&v| v as f64).collect();
    DenseTensor::from_f64(logits.shape(), &softmax_f64(&wide))
}

/// KL divergence from the diagonal Gaussian `N(mu, exp(logvar))` to `N(0, I)`.
pub fn kl_diag_gaussian_to_standard(mu: &DenseTensor, logvar: &DenseTensor) -> Result<f64> {
    mu.expect_same_shape(logvar, "kl_diag_gaussian_to_standard")?;
    let wide_mu: Vec<f64> = mu.data().iter().map(|&v| v as f64).collect();
    let wide_lv: Vec<f64> = logvar.data().iter().map(|&v| v as f64).collect();
    Ok(kl_standard_f64(&wide_mu, &wide_lv))
}

pub(crate) fn kl_standard_f64(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter()
        .zip(logvar)
        .map(|(&m, &lv)| 0.5 * (lv.exp() + m * m - 1.0 - lv))
        .sum::<f64>()
        .max(0.0)
}

/// `params - lr * grads`.
pub fn sgd_step(params: &DenseTensor, grads: &DenseTensor, lr: f32) -> Result<DenseTensor> {
    let mut out = params.clone();
    sgd_step_in_place(&mut out, grads, lr)?;
    Ok(out)
}

pub fn sgd_step_in_place(params: &mut DenseTensor, grads: &DenseTensor, lr: f32) -> Result<()> {
    params.expect_same_shape(grads, "sgd_step")?;
    if !(lr >= 0.0) {
        return Err(Error::Parameter(format!(
            "learning rate must be nonnegative, got {lr}"
        )));
    }
    for (p, &g) in params.data_mut().iter_mut().zip(grads.data()) {
        *p -= lr * g;
    }
    Ok(())
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}
