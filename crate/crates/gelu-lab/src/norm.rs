//! Batch, layer, and group normalization forward transforms.
//!
//! Variance uses the biased 1/m estimator everywhere. Batch normalization
//! keeps exponentially averaged running statistics for inference
//! (r <- (1-momentum) r + momentum * batch_stat, momentum 0.1, mean 0 / var 1
//! at init), the standard contract for a method usually defined for training
//! batches only.

use crate::activations::Mode;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Batch,
    Layer,
    Group,
}

impl NormKind {
    pub fn name(&self) -> &'static str {
        match self {
            NormKind::Batch => "batch",
            NormKind::Layer => "layer",
            NormKind::Group => "group",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "batch" => Ok(NormKind::Batch),
            "layer" => Ok(NormKind::Layer),
            "group" => Ok(NormKind::Group),
            other => Err(Error::Config(format!(
                "unknown normalization {other:?}; known: batch, layer, group"
            ))),
        }
    }
}

/// Running statistics owned by a batch-normalization site.
#[derive(Debug, Clone)]
pub struct BnRunningState<T> {
    pub mean: Tensor<T>,
    pub var: Tensor<T>,
}

impl<T: Scalar> BnRunningState<T> {
    pub fn new(channels: usize) -> Self {
        BnRunningState {
            mean: Tensor::zeros(vec![channels]),
            var: Tensor::full(vec![channels], T::ONE),
        }
    }
}

/// Parameters and state of one normalization layer.
#[derive(Debug, Clone)]
pub struct NormLayer<T> {
    pub kind: NormKind,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub epsilon: T,
    /// Group count; meaningful for the group kind only.
    pub groups: usize,
    /// Running statistics; meaningful for the batch kind only.
    pub running: BnRunningState<T>,
    pub momentum: T,
}

impl<T: Scalar> NormLayer<T> {
    /// Batch norm over `channels` features, gamma 1 / beta 0, eps 1e-5.
    pub fn batch(channels: usize) -> Self {
        NormLayer {
            kind: NormKind::Batch,
            gamma: Tensor::full(vec![channels], T::ONE),
            beta: Tensor::zeros(vec![channels]),
            epsilon: T::from_f64(1e-5),
            groups: 1,
            running: BnRunningState::new(channels),
            momentum: T::from_f64(0.1),
        }
    }

    /// Layer norm over a feature dimension of width `d`.
    pub fn layer(d: usize) -> Self {
        NormLayer {
            kind: NormKind::Layer,
            gamma: Tensor::full(vec![d], T::ONE),
            beta: Tensor::zeros(vec![d]),
            epsilon: T::from_f64(1e-5),
            groups: 1,
            running: BnRunningState::new(0),
            momentum: T::from_f64(0.1),
        }
    }

    /// Group norm with per-channel affine parameters.
    pub fn group(channels: usize, groups: usize) -> Result<Self> {
        if groups == 0 || !channels.is_multiple_of(groups) {
            return Err(Error::Config(format!(
                "group norm requires C divisible by G, got C={channels}, G={groups}"
            )));
        }
        Ok(NormLayer {
            kind: NormKind::Group,
            gamma: Tensor::full(vec![channels], T::ONE),
            beta: Tensor::zeros(vec![channels]),
            epsilon: T::from_f64(1e-5),
            groups,
            running: BnRunningState::new(0),
            momentum: T::from_f64(0.1),
        })
    }
}

/// Per-channel mean and biased variance over (N, spatial) of an [N,C,...] tensor.
pub(crate) fn bn_stats<T: Scalar>(x: &Tensor<T>, channels: usize) -> (Vec<T>, Vec<T>) {
    let n = x.shape()[0];
    let spatial: usize = x.shape()[2..].iter().product();
    let m = T::from_usize(n * spatial);
    let mut mean = vec![T::ZERO; channels];
    let mut var = vec![T::ZERO; channels];
    for c in 0..channels {
        let mut s = T::ZERO;
        for img in 0..n {
            let base = (img * channels + c) * spatial;
            for i in 0..spatial {
                s += x.data()[base + i];
            }
        }
        let mu = s / m;
        let mut v = T::ZERO;
        for img in 0..n {
            let base = (img * channels + c) * spatial;
            for i in 0..spatial {
                let d = x.data()[base + i] - mu;
                v += d * d;
            }
        }
        mean[c] = mu;
        var[c] = v / m;
    }
    (mean, var)
}

fn check_norm_input<T: Scalar>(x: &Tensor<T>, layer: &NormLayer<T>) -> Result<usize> {
    if x.shape().len() < 2 {
        return Err(Error::InvalidShape {
            op: "normalization",
            shape: x.shape().to_vec(),
            reason: "expected at least [N, C]".into(),
        });
    }
    let channels = match layer.kind {
        NormKind::Layer => *x.shape().last().unwrap(),
        _ => x.shape()[1],
    };
    if layer.gamma.shape() != [channels] || layer.beta.shape() != [channels] {
        return Err(Error::ShapeMismatch {
            op: "normalization (affine parameters)",
            left: layer.gamma.shape().to_vec(),
            right: vec![channels],
        });
    }
    Ok(channels)
}

/// Batch normalization over an `[N,C,...]` tensor.
///
/// Train mode normalizes with batch statistics and updates the running
/// averages; eval mode normalizes with the running statistics.
pub fn batch_norm_forward<T: Scalar>(
    x: &Tensor<T>,
    layer: &mut NormLayer<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let channels = check_norm_input(x, layer)?;
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::Contract {
            op: "batch_norm_forward",
            reason: "empty batch".into(),
        });
    }
    let spatial: usize = x.shape()[2..].iter().product();
    if mode == Mode::Train && n * spatial == 1 {
        eprintln!(
            "warning: train-mode batch norm over a single value degenerates to beta"
        );
    }
    let (mean, var) = match mode {
        Mode::Train => {
            let (m, v) = bn_stats(x, channels);
            let mom = layer.momentum;
            for c in 0..channels {
                let rm = &mut layer.running.mean.data_mut()[c];
                *rm = (T::ONE - mom) * *rm + mom * m[c];
                let rv = &mut layer.running.var.data_mut()[c];
                *rv = (T::ONE - mom) * *rv + mom * v[c];
            }
            (m, v)
        }
        Mode::Eval => (
            layer.running.mean.data().to_vec(),
            layer.running.var.data().to_vec(),
        ),
    };
    let mut out = x.clone();
    for img in 0..n {
        for c in 0..channels {
            let inv = T::ONE / (var[c] + layer.epsilon).sqrt();
            let g = layer.gamma.data()[c];
            let b = layer.beta.data()[c];
            let base = (img * channels + c) * spatial;
            for i in 0..spatial {
                let xv = out.data()[base + i];
                out.data_mut()[base + i] = g * (xv - mean[c]) * inv + b;
            }
        }
    }
    Ok(out)
}

/// Layer normalization over the trailing feature dimension of `[..., d]`.
pub fn layer_norm_forward<T: Scalar>(x: &Tensor<T>, layer: &NormLayer<T>) -> Result<Tensor<T>> {
    let d = check_norm_input(x, layer)?;
    let rows = x.numel() / d;
    let mut out = x.clone();
    let dm = T::from_usize(d);
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mut mu = T::ZERO;
        for v in row {
            mu += *v;
        }
        mu /= dm;
        let mut var = T::ZERO;
        for v in row {
            let dv = *v - mu;
            var += dv * dv;
        }
        var /= dm;
        let inv = T::ONE / (var + layer.epsilon).sqrt();
        for i in 0..d {
            out.data_mut()[r * d + i] =
                layer.gamma.data()[i] * (row[i] - mu) * inv + layer.beta.data()[i];
        }
    }
    Ok(out)
}

/// Group normalization over `[N,C,H,W]`; statistics per (sample, group),
/// affine parameters per channel.
pub fn group_norm_forward<T: Scalar>(x: &Tensor<T>, layer: &NormLayer<T>) -> Result<Tensor<T>> {
    if x.shape().len() != 4 {
        return Err(Error::InvalidShape {
            op: "group_norm_forward",
            shape: x.shape().to_vec(),
            reason: "expected [N,C,H,W]".into(),
        });
    }
    let channels = check_norm_input(x, layer)?;
    let groups = layer.groups;
    if groups == 0 || !channels.is_multiple_of(groups) {
        return Err(Error::Config(format!(
            "group norm requires C divisible by G, got C={channels}, G={groups}"
        )));
    }
    let n = x.shape()[0];
    let spatial = x.shape()[2] * x.shape()[3];
    let per_group = channels / groups;
    let m = T::from_usize(per_group * spatial);
    let mut out = x.clone();
    for img in 0..n {
        for g in 0..groups {
            let mut mu = T::ZERO;
            for cg in 0..per_group {
                let c = g * per_group + cg;
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    mu += x.data()[base + i];
                }
            }
            mu /= m;
            let mut var = T::ZERO;
            for cg in 0..per_group {
                let c = g * per_group + cg;
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    let d = x.data()[base + i] - mu;
                    var += d * d;
                }
            }
            var /= m;
            let inv = T::ONE / (var + layer.epsilon).sqrt();
            for cg in 0..per_group {
                let c = g * per_group + cg;
                let gam = layer.gamma.data()[c];
                let bet = layer.beta.data()[c];
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    let xv = x.data()[base + i];
                    out.data_mut()[base + i] = gam * (xv - mu) * inv + bet;
                }
            }
        }
    }
    Ok(out)
}

// ---------------------------------------------------------------------------
// Backward formulas shared with the autodiff graph.
// ---------------------------------------------------------------------------

/// Saved statistics of one normalization forward, enough to rebuild x-hat.
#[derive(Debug, Clone)]
pub(crate) struct NormSaved<T> {
    /// One entry per normalization region (channel for BN, row for LN,
    /// (sample, group) for GN).
    pub mean: Vec<T>,
    pub inv_std: Vec<T>,
    /// Whether batch statistics (train) or running statistics (eval) were used.
    pub train: bool,
}

/// Per-row mean and biased variance over the trailing dimension.
pub(crate) fn ln_stats<T: Scalar>(x: &Tensor<T>, d: usize) -> (Vec<T>, Vec<T>) {
    let rows = x.numel() / d;
    let dm = T::from_usize(d);
    let mut mean = vec![T::ZERO; rows];
    let mut var = vec![T::ZERO; rows];
    for r in 0..rows {
        let row = &x.data()[r * d..(r + 1) * d];
        let mut mu = T::ZERO;
        for v in row {
            mu += *v;
        }
        mu /= dm;
        let mut s = T::ZERO;
        for v in row {
            let dv = *v - mu;
            s += dv * dv;
        }
        mean[r] = mu;
        var[r] = s / dm;
    }
    (mean, var)
}

/// Per-(sample, group) mean and biased variance of an [N,C,H,W] tensor;
/// each region is the contiguous (C/G, H, W) block.
pub(crate) fn gn_stats<T: Scalar>(x: &Tensor<T>, groups: usize) -> (Vec<T>, Vec<T>) {
    let n = x.shape()[0];
    let channels = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let region = (channels / groups) * spatial;
    let m = T::from_usize(region);
    let mut mean = vec![T::ZERO; n * groups];
    let mut var = vec![T::ZERO; n * groups];
    for r in 0..n * groups {
        let block = &x.data()[r * region..(r + 1) * region];
        let mut mu = T::ZERO;
        for v in block {
            mu += *v;
        }
        mu /= m;
        let mut s = T::ZERO;
        for v in block {
            let dv = *v - mu;
            s += dv * dv;
        }
        mean[r] = mu;
        var[r] = s / m;
    }
    (mean, var)
}

/// Backward of batch normalization given the saved per-channel statistics.
/// Returns (dx, dgamma, dbeta).
///
/// Train mode differentiates through the batch statistics:
/// dx_i = inv_std (q_i - mean(q) - xhat_i mean(q xhat)) with q = g * gamma;
/// eval mode treats the running statistics as constants.
pub(crate) fn bn_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    saved: &NormSaved<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = x.shape()[0];
    let channels = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let m = T::from_usize(n * spatial);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];
    for c in 0..channels {
        let (mu, inv) = (saved.mean[c], saved.inv_std[c]);
        let gam = gamma[c];
        let mut sum_g = T::ZERO;
        let mut sum_gx = T::ZERO;
        for img in 0..n {
            let base = (img * channels + c) * spatial;
            for i in 0..spatial {
                let gv = g.data()[base + i];
                let xhat = (x.data()[base + i] - mu) * inv;
                sum_g += gv;
                sum_gx += gv * xhat;
            }
        }
        dgamma[c] = sum_gx;
        dbeta[c] = sum_g;
        if saved.train {
            let mean_q = gam * sum_g / m;
            let mean_qx = gam * sum_gx / m;
            for img in 0..n {
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    let gv = g.data()[base + i];
                    let xhat = (x.data()[base + i] - mu) * inv;
                    dx.data_mut()[base + i] = inv * (gam * gv - mean_q - xhat * mean_qx);
                }
            }
        } else {
            for img in 0..n {
                let base = (img * channels + c) * spatial;
                for i in 0..spatial {
                    dx.data_mut()[base + i] = g.data()[base + i] * gam * inv;
                }
            }
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward of layer normalization over the trailing dimension.
pub(crate) fn ln_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    saved: &NormSaved<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let d = gamma.len();
    let rows = x.numel() / d;
    let dm = T::from_usize(d);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgamma = vec![T::ZERO; d];
    let mut dbeta = vec![T::ZERO; d];
    for r in 0..rows {
        let (mu, inv) = (saved.mean[r], saved.inv_std[r]);
        let xrow = &x.data()[r * d..(r + 1) * d];
        let grow = &g.data()[r * d..(r + 1) * d];
        let mut sum_q = T::ZERO;
        let mut sum_qx = T::ZERO;
        for i in 0..d {
            let xhat = (xrow[i] - mu) * inv;
            let q = grow[i] * gamma[i];
            dgamma[i] += grow[i] * xhat;
            dbeta[i] += grow[i];
            sum_q += q;
            sum_qx += q * xhat;
        }
        let mean_q = sum_q / dm;
        let mean_qx = sum_qx / dm;
        for i in 0..d {
            let xhat = (xrow[i] - mu) * inv;
            let q = grow[i] * gamma[i];
            dx.data_mut()[r * d + i] = inv * (q - mean_q - xhat * mean_qx);
        }
    }
    (dx, dgamma, dbeta)
}

/// Backward of group normalization; regions are contiguous (C/G, H, W) blocks.
pub(crate) fn gn_backward<T: Scalar>(
    x: &Tensor<T>,
    gamma: &[T],
    groups: usize,
    saved: &NormSaved<T>,
    g: &Tensor<T>,
) -> (Tensor<T>, Vec<T>, Vec<T>) {
    let n = x.shape()[0];
    let channels = x.shape()[1];
    let spatial: usize = x.shape()[2..].iter().product();
    let per_group = channels / groups;
    let region = per_group * spatial;
    let m = T::from_usize(region);
    let mut dx = Tensor::zeros(x.shape().to_vec());
    let mut dgamma = vec![T::ZERO; channels];
    let mut dbeta = vec![T::ZERO; channels];
    for r in 0..n * groups {
        let (mu, inv) = (saved.mean[r], saved.inv_std[r]);
        let group = r % groups;
        let base = r * region;
        let mut sum_q = T::ZERO;
        let mut sum_qx = T::ZERO;
        for i in 0..region {
            let c = group * per_group + i / spatial;
            let xhat = (x.data()[base + i] - mu) * inv;
            let gv = g.data()[base + i];
            dgamma[c] += gv * xhat;
            dbeta[c] += gv;
            let q = gv * gamma[c];
            sum_q += q;
            sum_qx += q * xhat;
        }
        let mean_q = sum_q / m;
        let mean_qx = sum_qx / m;
        for i in 0..region {
            let c = group * per_group + i / spatial;
            let xhat = (x.data()[base + i] - mu) * inv;
            let q = g.data()[base + i] * gamma[c];
            dx.data_mut()[base + i] = inv * (q - mean_q - xhat * mean_qx);
        }
    }
    (dx, dgamma, dbeta)
}
