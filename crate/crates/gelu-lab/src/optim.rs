//! SGD and Adam parameter updates.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct SgdConfig {
    pub eta: f64,
}

impl SgdConfig {
    pub fn new(eta: f64) -> Result<Self> {
        if eta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: eta,
                reason: "learning rate must be positive",
            });
        }
        Ok(SgdConfig { eta })
    }
}

/// theta <- theta - eta * grad, elementwise across the parameter set.
pub fn sgd_step<T: Scalar>(
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
    config: &SgdConfig,
) -> Result<()> {
    check_aligned("sgd_step", params, grads)?;
    let eta = T::from_f64(config.eta);
    for (p, g) in params.iter_mut().zip(grads) {
        for (pv, gv) in p.data_mut().iter_mut().zip(g.data()) {
            *pv -= eta * *gv;
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub eta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            eta: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if self.eta <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "eta",
                value: self.eta,
                reason: "learning rate must be positive",
            });
        }
        for (name, v) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&v) {
                return Err(Error::InvalidParameter {
                    name,
                    value: v,
                    reason: "decay rate must lie in [0, 1)",
                });
            }
        }
        if self.epsilon <= 0.0 {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: self.epsilon,
                reason: "must be positive",
            });
        }
        Ok(())
    }
}

/// First/second moment buffers plus the step counter.
///
/// Moments are zero-initialized; `t` increments before the bias correction,
/// so the first step divides by (1 - beta^1). Epsilon is added outside the
/// square root: theta <- theta - eta * m-hat / (sqrt(v-hat) + eps).
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(config: AdamConfig) -> Result<Self> {
        config.validate()?;
        Ok(AdamState {
            config,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        })
    }

    /// Moment tensors for inspection in tests.
    pub fn moments(&self) -> (&[Tensor<T>], &[Tensor<T>]) {
        (&self.m, &self.v)
    }

    fn ensure_buffers(&mut self, params: &[Tensor<T>]) {
        if self.m.is_empty() {
            self.m = params
                .iter()
                .map(|p| Tensor::zeros(p.shape().to_vec()))
                .collect();
            self.v = self.m.clone();
        }
    }
}

/// One Adam step over an aligned parameter/gradient set.
pub fn adam_step<T: Scalar>(
    state: &mut AdamState<T>,
    params: &mut [Tensor<T>],
    grads: &[Tensor<T>],
) -> Result<()> {
    check_aligned("adam_step", params, grads)?;
    for (i, g) in grads.iter().enumerate() {
        if !g.is_all_finite() {
            return Err(Error::NonFinite {
                context: format!("adam_step gradient {i}"),
            });
        }
    }
    state.ensure_buffers(params);
    if state.m.len() != params.len() {
        return Err(Error::Contract {
            op: "adam_step",
            reason: format!(
                "state built for {} parameters, got {}",
                state.m.len(),
                params.len()
            ),
        });
    }
    state.t += 1;
    let b1 = T::from_f64(state.config.beta1);
    let b2 = T::from_f64(state.config.beta2);
    let eta = T::from_f64(state.config.eta);
    let eps = T::from_f64(state.config.epsilon);
    // 1 - beta^t in f64 to keep the correction exact for large t
    let c1 = T::from_f64(1.0 - state.config.beta1.powi(state.t as i32));
    let c2 = T::from_f64(1.0 - state.config.beta2.powi(state.t as i32));
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for i in 0..p.numel() {
            let gv = g.data()[i];
            let mv = &mut m.data_mut()[i];
            *mv = b1 * *mv + (T::ONE - b1) * gv;
            let vv = &mut v.data_mut()[i];
            *vv = b2 * *vv + (T::ONE - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            p.data_mut()[i] -= eta * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

fn check_aligned<T: Scalar>(
    op: &'static str,
    params: &[Tensor<T>],
    grads: &[Tensor<T>],
) -> Result<()> {
    if params.len() != grads.len() {
        return Err(Error::Contract {
            op,
            reason: format!("{} parameters vs {} gradients", params.len(), grads.len()),
        });
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(Error::ShapeMismatch {
                op,
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    Ok(())
}
