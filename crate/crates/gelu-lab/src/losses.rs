//! The six loss functions as scalar mean reductions.
//!
//! Cross-entropy takes logits and fuses the softmax through a log-sum-exp
//! path; the plain-probability form exists for oracle testing only.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LossKind {
    Mse,
    Mae,
    Huber { delta: f64 },
    CrossEntropy,
    Hinge,
    Triplet { margin: f64 },
}

impl LossKind {
    pub fn name(&self) -> &'static str {
        match self {
            LossKind::Mse => "mse",
            LossKind::Mae => "mae",
            LossKind::Huber { .. } => "huber",
            LossKind::CrossEntropy => "cross_entropy",
            LossKind::Hinge => "hinge",
            LossKind::Triplet { .. } => "triplet",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "mse" => Ok(LossKind::Mse),
            "mae" => Ok(LossKind::Mae),
            "huber" => Ok(LossKind::Huber { delta: 1.0 }),
            "cross_entropy" => Ok(LossKind::CrossEntropy),
            "hinge" => Ok(LossKind::Hinge),
            "triplet" => Ok(LossKind::Triplet { margin: 1.0 }),
            other => Err(Error::Config(format!(
                "unknown loss {other:?}; known: mse, mae, huber, cross_entropy, hinge, triplet"
            ))),
        }
    }
}

fn check_same_len<T: Scalar>(op: &'static str, y: &Tensor<T>, yhat: &Tensor<T>) -> Result<usize> {
    if y.shape() != yhat.shape() || y.numel() == 0 {
        return Err(Error::ShapeMismatch {
            op,
            left: y.shape().to_vec(),
            right: yhat.shape().to_vec(),
        });
    }
    Ok(y.numel())
}

/// (1/n) sum (y_i - yhat_i)^2
pub fn mse<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<T> {
    let n = check_same_len("mse", y, yhat)?;
    let mut s = T::ZERO;
    for (a, b) in y.data().iter().zip(yhat.data()) {
        let d = *a - *b;
        s += d * d;
    }
    Ok(s / T::from_usize(n))
}

/// (1/n) sum |y_i - yhat_i|
pub fn mae<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<T> {
    let n = check_same_len("mae", y, yhat)?;
    let mut s = T::ZERO;
    for (a, b) in y.data().iter().zip(yhat.data()) {
        s += (*a - *b).abs();
    }
    Ok(s / T::from_usize(n))
}

/// Mean of 0.5 r^2 for |r| <= delta, delta(|r| - delta/2) otherwise.
pub fn huber<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>, delta: T) -> Result<T> {
    if delta <= T::ZERO {
        return Err(Error::InvalidParameter {
            name: "delta",
            value: delta.to_f64(),
            reason: "must be positive",
        });
    }
    let n = check_same_len("huber", y, yhat)?;
    let half = T::from_f64(0.5);
    let mut s = T::ZERO;
    for (a, b) in y.data().iter().zip(yhat.data()) {
        let r = (*a - *b).abs();
        s += if r <= delta {
            half * r * r
        } else {
            delta * (r - half * delta)
        };
    }
    Ok(s / T::from_usize(n))
}

/// Per-row log-sum-exp of an [n, K] logits tensor, with the row max split out.
pub(crate) fn log_softmax_row<T: Scalar>(row: &[T], out: &mut [T]) {
    let mut mx = row[0];
    for v in row {
        mx = mx.max(*v);
    }
    let mut sum = T::ZERO;
    for v in row {
        sum += (*v - mx).exp();
    }
    let lse = mx + sum.ln();
    for (o, v) in out.iter_mut().zip(row) {
        *o = *v - lse;
    }
}

fn check_labels(op: &'static str, labels: &[usize], n: usize, classes: usize) -> Result<()> {
    if labels.len() != n {
        return Err(Error::Contract {
            op,
            reason: format!("{} labels for {} rows", labels.len(), n),
        });
    }
    if let Some(bad) = labels.iter().find(|&&l| l >= classes) {
        return Err(Error::Contract {
            op,
            reason: format!("label {bad} out of range [0, {classes})"),
        });
    }
    Ok(())
}

/// Mean over samples of -log softmax(logits)[label], stable log-sum-exp path.
pub fn cross_entropy<T: Scalar>(labels: &[usize], logits: &Tensor<T>) -> Result<T> {
    if logits.shape().len() != 2 || logits.numel() == 0 {
        return Err(Error::InvalidShape {
            op: "cross_entropy",
            shape: logits.shape().to_vec(),
            reason: "expected [n, K] logits".into(),
        });
    }
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    check_labels("cross_entropy", labels, n, k)?;
    let mut buf = vec![T::ZERO; k];
    let mut s = T::ZERO;
    for (i, &label) in labels.iter().enumerate() {
        log_softmax_row(&logits.data()[i * k..(i + 1) * k], &mut buf);
        s += -buf[label];
    }
    Ok(s / T::from_usize(n))
}

/// Plain-probability cross entropy: mean over rows of -log p[label].
/// Oracle form; feeds on externally softmaxed probabilities.
pub fn cross_entropy_from_probs<T: Scalar>(labels: &[usize], probs: &Tensor<T>) -> Result<T> {
    if probs.shape().len() != 2 || probs.numel() == 0 {
        return Err(Error::InvalidShape {
            op: "cross_entropy_from_probs",
            shape: probs.shape().to_vec(),
            reason: "expected [n, K] probabilities".into(),
        });
    }
    let (n, k) = (probs.shape()[0], probs.shape()[1]);
    check_labels("cross_entropy_from_probs", labels, n, k)?;
    let mut s = T::ZERO;
    for (i, &label) in labels.iter().enumerate() {
        s += -probs.data()[i * k + label].ln();
    }
    Ok(s / T::from_usize(n))
}

fn check_hinge_labels<T: Scalar>(labels: &Tensor<T>) -> Result<()> {
    for v in labels.data() {
        if *v != T::ONE && *v != -T::ONE {
            return Err(Error::Contract {
                op: "hinge",
                reason: format!("label {v} is not in {{-1, +1}}"),
            });
        }
    }
    Ok(())
}

/// Mean of max(0, 1 - y_i yhat_i) with y_i in {-1, +1}.
pub fn hinge<T: Scalar>(y: &Tensor<T>, yhat: &Tensor<T>) -> Result<T> {
    let n = check_same_len("hinge", y, yhat)?;
    check_hinge_labels(y)?;
    let mut s = T::ZERO;
    for (a, b) in y.data().iter().zip(yhat.data()) {
        s += (T::ONE - *a * *b).max(T::ZERO);
    }
    Ok(s / T::from_usize(n))
}

pub(crate) fn euclidean<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut s = T::ZERO;
    for (x, y) in a.iter().zip(b) {
        let d = *x - *y;
        s += d * d;
    }
    s.sqrt()
}

/// max(0, d(a,p) - d(a,n) + margin) with Euclidean d.
pub fn triplet<T: Scalar>(
    anchor: &Tensor<T>,
    positive: &Tensor<T>,
    negative: &Tensor<T>,
    margin: T,
) -> Result<T> {
    if margin < T::ZERO {
        return Err(Error::InvalidParameter {
            name: "margin",
            value: margin.to_f64(),
            reason: "must be nonnegative",
        });
    }
    check_same_len("triplet", anchor, positive)?;
    check_same_len("triplet", anchor, negative)?;
    let dp = euclidean(anchor.data(), positive.data());
    let dn = euclidean(anchor.data(), negative.data());
    Ok((dp - dn + margin).max(T::ZERO))
}
