//! The activation zoo: twenty-one elementwise nonlinearities (both GELU
//! forms) with forward values and analytic first derivatives.
//!
//! Kink conventions are pinned for reproducibility:
//! relu'(0)=0, relu6'(0)=relu6'(6)=0, hardtanh'(+-1)=0, hardsigmoid'(+-3)=0,
//! hardswish'(-3)=0 and hardswish'(3)=1, hardshrink'/softshrink' at +-lambda
//! use the outer side (=1), and the leaky family uses its negative-side slope
//! at exactly 0.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Forward/derivative distinction for stochastic activations (RReLU).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

pub const SELU_ALPHA: f64 = 1.673_263_242_354_377_2;
pub const SELU_LAMBDA: f64 = 1.050_700_987_355_480_5;

/// Constants of the tanh-form GELU; `cubic` must be 0.044715 in production.
/// Non-default values exist as a fault-injection hook for the verification
/// suite's mutation test.
#[derive(Debug, Clone, Copy)]
pub struct GeluConstants {
    /// sqrt(2/pi)
    pub scale: f64,
    pub cubic: f64,
    /// CDF scaling of the exact form; 1 unless overridden.
    pub alpha: f64,
}

impl Default for GeluConstants {
    fn default() -> Self {
        GeluConstants {
            scale: (2.0 / std::f64::consts::PI).sqrt(),
            cubic: 0.044715,
            alpha: 1.0,
        }
    }
}

/// 0.5 x (1 + tanh(sqrt(2/pi) (x + 0.044715 x^3)))
#[inline]
pub fn gelu_tanh(x: f64) -> f64 {
    gelu_tanh_with(&GeluConstants::default(), x)
}

#[inline]
pub fn gelu_tanh_with(c: &GeluConstants, x: f64) -> f64 {
    0.5 * x * (1.0 + (c.scale * (x + c.cubic * x * x * x)).tanh())
}

/// x * Phi(alpha x) with Phi the standard normal CDF (erf-based).
pub fn gelu_exact(x: f64, alpha: f64) -> Result<f64> {
    if alpha <= 0.0 {
        return Err(Error::InvalidParameter {
            name: "alpha",
            value: alpha,
            reason: "CDF scale must be positive",
        });
    }
    Ok(x * normal_cdf(alpha * x))
}

#[inline]
pub fn normal_cdf(x: f64) -> f64 {
    0.5 * (1.0 + libm::erf(x / std::f64::consts::SQRT_2))
}

#[inline]
pub fn normal_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * std::f64::consts::PI).sqrt()
}

/// d/dx of the exact form at alpha=1: x pdf(x) + Phi(x).
#[inline]
pub fn gelu_derivative_exact(x: f64) -> f64 {
    x * normal_pdf(x) + normal_cdf(x)
}

/// d/dx of the tanh form:
/// 0.5(1+tanh u) + 0.5 x sech^2(u) sqrt(2/pi) (1 + 3*0.044715 x^2),
/// u = sqrt(2/pi)(x + 0.044715 x^3); sech^2 computed as 1 - tanh^2.
#[inline]
pub fn gelu_derivative_tanh(x: f64) -> f64 {
    gelu_derivative_tanh_with(&GeluConstants::default(), x)
}

#[inline]
pub fn gelu_derivative_tanh_with(c: &GeluConstants, x: f64) -> f64 {
    let u = c.scale * (x + c.cubic * x * x * x);
    let t = u.tanh();
    let sech2 = 1.0 - t * t;
    0.5 * (1.0 + t) + 0.5 * x * sech2 * c.scale * (1.0 + 3.0 * c.cubic * x * x)
}

/// Tagged activation kinds with their per-kind parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ActivationKind {
    Elu { alpha: f64 },
    Hardshrink { lambda: f64 },
    Hardsigmoid,
    Hardtanh { min: f64, max: f64 },
    Hardswish,
    LeakyRelu { slope: f64 },
    LogSigmoid,
    /// Learnable scalar slope; `init_slope` seeds the graph leaf.
    PRelu { init_slope: f64 },
    Relu,
    Relu6,
    RRelu { lower: f64, upper: f64 },
    Selu,
    Celu { alpha: f64 },
    GeluTanh,
    GeluExact { alpha: f64 },
    Sigmoid,
    Softplus,
    Softshrink { lambda: f64 },
    Softsign,
    Tanh,
    Tanhshrink,
}

impl ActivationKind {
    /// All kinds at their default parameters, in canonical listing order.
    pub fn all() -> Vec<ActivationKind> {
        use ActivationKind::*;
        vec![
            Elu { alpha: 1.0 },
            Hardshrink { lambda: 0.5 },
            Hardsigmoid,
            Hardtanh {
                min: -1.0,
                max: 1.0,
            },
            Hardswish,
            LeakyRelu { slope: 0.01 },
            LogSigmoid,
            PRelu { init_slope: 0.25 },
            Relu,
            Relu6,
            RRelu {
                lower: 1.0 / 8.0,
                upper: 1.0 / 3.0,
            },
            Selu,
            Celu { alpha: 1.0 },
            GeluTanh,
            GeluExact { alpha: 1.0 },
            Sigmoid,
            Softplus,
            Softshrink { lambda: 0.5 },
            Softsign,
            Tanh,
            Tanhshrink,
        ]
    }

    pub fn name(&self) -> &'static str {
        use ActivationKind::*;
        match self {
            Elu { .. } => "elu",
            Hardshrink { .. } => "hardshrink",
            Hardsigmoid => "hardsigmoid",
            Hardtanh { .. } => "hardtanh",
            Hardswish => "hardswish",
            LeakyRelu { .. } => "leaky_relu",
            LogSigmoid => "log_sigmoid",
            PRelu { .. } => "prelu",
            Relu => "relu",
            Relu6 => "relu6",
            RRelu { .. } => "rrelu",
            Selu => "selu",
            Celu { .. } => "celu",
            GeluTanh => "gelu",
            GeluExact { .. } => "gelu_exact",
            Sigmoid => "sigmoid",
            Softplus => "softplus",
            Softshrink { .. } => "softshrink",
            Softsign => "softsign",
            Tanh => "tanh",
            Tanhshrink => "tanhshrink",
        }
    }

    /// Look up a kind by its canonical lowercase name, default parameters.
    pub fn from_name(name: &str) -> Result<ActivationKind> {
        Self::all()
            .into_iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| {
                Error::Config(format!(
                    "unknown activation {:?}; known: {}",
                    name,
                    Self::canonical_names().join(", ")
                ))
            })
    }

    pub fn canonical_names() -> Vec<&'static str> {
        Self::all().iter().map(|k| k.name()).collect()
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            ActivationKind::RRelu { lower, upper } => {
                if !(0.0 <= lower && lower < upper && upper < 1.0) {
                    return Err(Error::InvalidParameter {
                        name: "rrelu bounds",
                        value: lower,
                        reason: "require 0 <= lower < upper < 1",
                    });
                }
            }
            ActivationKind::GeluExact { alpha } => {
                if alpha <= 0.0 {
                    return Err(Error::InvalidParameter {
                        name: "alpha",
                        value: alpha,
                        reason: "CDF scale must be positive",
                    });
                }
            }
            ActivationKind::Hardtanh { min, max } if min >= max => {
                return Err(Error::InvalidParameter {
                    name: "hardtanh bounds",
                    value: min,
                    reason: "require min < max",
                });
            }
            _ => {}
        }
        Ok(())
    }

    /// Kinds that are monotone nondecreasing over the reals.
    pub fn is_monotone_nondecreasing(&self) -> bool {
        use ActivationKind::*;
        matches!(
            self,
            Sigmoid
                | Tanh
                | Softplus
                | Softsign
                | Hardsigmoid
                | Hardtanh { .. }
                | LogSigmoid
                | Relu
                | Relu6
                | Elu { .. }
                | Selu
                | Celu { .. }
                | LeakyRelu { .. }
        )
    }

    /// RReLU is the only kind whose train-mode forward consumes randomness.
    pub fn is_stochastic(&self) -> bool {
        matches!(self, ActivationKind::RRelu { .. })
    }
}

#[inline]
fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    if x >= T::ZERO {
        T::ONE / (T::ONE + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::ONE + e)
    }
}

/// log(1 + e^x) via log1p(exp(-|x|)) + max(x, 0).
#[inline]
fn softplus_scalar<T: Scalar>(x: T) -> T {
    (-x.abs()).exp().ln_1p() + x.max(T::ZERO)
}

/// Forward value for one element. `slope` carries the RReLU sampled slope
/// (train) or midpoint (eval), and the current PReLU slope.
pub(crate) fn forward_scalar<T: Scalar>(kind: &ActivationKind, x: T, slope: T) -> T {
    use ActivationKind::*;
    match *kind {
        Elu { alpha } => {
            if x > T::ZERO {
                x
            } else {
                T::from_f64(alpha) * (x.exp() - T::ONE)
            }
        }
        Hardshrink { lambda } => {
            let l = T::from_f64(lambda);
            if x.abs() > l {
                x
            } else {
                T::ZERO
            }
        }
        Hardsigmoid => {
            let six = T::from_f64(6.0);
            (x / six + T::from_f64(0.5)).max(T::ZERO).min(T::ONE)
        }
        Hardtanh { min, max } => x.max(T::from_f64(min)).min(T::from_f64(max)),
        Hardswish => {
            let t = (x + T::from_f64(3.0)).max(T::ZERO).min(T::from_f64(6.0));
            x * t / T::from_f64(6.0)
        }
        LeakyRelu { slope: s } => {
            if x > T::ZERO {
                x
            } else {
                T::from_f64(s) * x
            }
        }
        LogSigmoid => {
            // -softplus(-x), stable on both tails
            -softplus_scalar(-x)
        }
        PRelu { .. } | RRelu { .. } => {
            if x > T::ZERO {
                x
            } else {
                slope * x
            }
        }
        Relu => x.max(T::ZERO),
        Relu6 => x.max(T::ZERO).min(T::from_f64(6.0)),
        Selu => {
            let a = T::from_f64(SELU_ALPHA);
            let l = T::from_f64(SELU_LAMBDA);
            if x > T::ZERO {
                l * x
            } else {
                l * a * (x.exp() - T::ONE)
            }
        }
        Celu { alpha } => {
            let a = T::from_f64(alpha);
            if x > T::ZERO {
                x
            } else {
                a * ((x / a).exp() - T::ONE)
            }
        }
        GeluTanh => T::from_f64(gelu_tanh(x.to_f64())),
        GeluExact { alpha } => {
            let xf = x.to_f64();
            T::from_f64(xf * normal_cdf(alpha * xf))
        }
        Sigmoid => sigmoid_scalar(x),
        Softplus => softplus_scalar(x),
        Softshrink { lambda } => {
            let l = T::from_f64(lambda);
            if x > l {
                x - l
            } else if x < -l {
                x + l
            } else {
                T::ZERO
            }
        }
        Softsign => x / (T::ONE + x.abs()),
        Tanh => x.tanh(),
        Tanhshrink => x - x.tanh(),
    }
}

/// Analytic derivative for one element, using the documented kink values.
pub(crate) fn derivative_scalar<T: Scalar>(kind: &ActivationKind, x: T, slope: T) -> T {
    use ActivationKind::*;
    match *kind {
        Elu { alpha } => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::from_f64(alpha) * x.exp()
            }
        }
        Hardshrink { lambda } | Softshrink { lambda } => {
            // outer side at |x| == lambda
            if x.abs() >= T::from_f64(lambda) {
                T::ONE
            } else {
                T::ZERO
            }
        }
        Hardsigmoid => {
            let three = T::from_f64(3.0);
            if x > -three && x < three {
                T::ONE / T::from_f64(6.0)
            } else {
                T::ZERO
            }
        }
        Hardtanh { min, max } => {
            if x > T::from_f64(min) && x < T::from_f64(max) {
                T::ONE
            } else {
                T::ZERO
            }
        }
        Hardswish => {
            let three = T::from_f64(3.0);
            if x <= -three {
                T::ZERO
            } else if x >= three {
                T::ONE
            } else {
                (x + x + three) / T::from_f64(6.0)
            }
        }
        LeakyRelu { slope: s } => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::from_f64(s)
            }
        }
        LogSigmoid => sigmoid_scalar(-x),
        PRelu { .. } | RRelu { .. } => {
            if x > T::ZERO {
                T::ONE
            } else {
                slope
            }
        }
        Relu => {
            if x > T::ZERO {
                T::ONE
            } else {
                T::ZERO
            }
        }
        Relu6 => {
            if x > T::ZERO && x < T::from_f64(6.0) {
                T::ONE
            } else {
                T::ZERO
            }
        }
        Selu => {
            let a = T::from_f64(SELU_ALPHA);
            let l = T::from_f64(SELU_LAMBDA);
            if x > T::ZERO {
                l
            } else {
                l * a * x.exp()
            }
        }
        Celu { alpha } => {
            if x > T::ZERO {
                T::ONE
            } else {
                (x / T::from_f64(alpha)).exp()
            }
        }
        GeluTanh => T::from_f64(gelu_derivative_tanh(x.to_f64())),
        GeluExact { alpha } => {
            let xf = x.to_f64();
            T::from_f64(alpha * xf * normal_pdf(alpha * xf) + normal_cdf(alpha * xf))
        }
        Sigmoid => {
            let s = sigmoid_scalar(x);
            s * (T::ONE - s)
        }
        Softplus => sigmoid_scalar(x),
        Softsign => {
            let d = T::ONE + x.abs();
            T::ONE / (d * d)
        }
        Tanh => {
            let t = x.tanh();
            T::ONE - t * t
        }
        Tanhshrink => {
            let t = x.tanh();
            t * t
        }
    }
}

fn rrelu_midpoint<T: Scalar>(lower: f64, upper: f64) -> T {
    T::from_f64(0.5 * (lower + upper))
}

/// Sample one slope per element, in element order, from the caller's stream.
pub(crate) fn sample_rrelu_slopes<T: Scalar>(
    lower: f64,
    upper: f64,
    n: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<T> {
    (0..n)
        .map(|_| T::from_f64(lower + (upper - lower) * rng.random::<f64>()))
        .collect()
}

fn fixed_slope<T: Scalar>(kind: &ActivationKind, mode: Mode) -> Option<T> {
    match *kind {
        ActivationKind::PRelu { init_slope } => Some(T::from_f64(init_slope)),
        ActivationKind::RRelu { lower, upper } if mode == Mode::Eval => {
            Some(rrelu_midpoint(lower, upper))
        }
        ActivationKind::RRelu { .. } => None, // train: per-element samples
        _ => Some(T::ZERO),                   // unused
    }
}

/// Elementwise forward application.
///
/// RReLU in train mode draws one slope per element from `rng`; calling
/// [`activation_derivative`] with a clone of the same rng state reproduces the
/// forward pass's slopes.
pub fn apply_activation<T: Scalar>(
    kind: &ActivationKind,
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    kind.validate()?;
    match fixed_slope::<T>(kind, mode) {
        Some(s) => Ok(x.map(|v| forward_scalar(kind, v, s))),
        None => {
            let (lower, upper) = match *kind {
                ActivationKind::RRelu { lower, upper } => (lower, upper),
                _ => unreachable!(),
            };
            let slopes = sample_rrelu_slopes::<T>(lower, upper, x.numel(), rng);
            let mut out = x.clone();
            for (v, s) in out.data_mut().iter_mut().zip(&slopes) {
                *v = forward_scalar(kind, *v, *s);
            }
            Ok(out)
        }
    }
}

/// Elementwise analytic derivative, honoring the same rng contract as
/// [`apply_activation`].
pub fn activation_derivative<T: Scalar>(
    kind: &ActivationKind,
    x: &Tensor<T>,
    mode: Mode,
    rng: &mut ChaCha8Rng,
) -> Result<Tensor<T>> {
    kind.validate()?;
    match fixed_slope::<T>(kind, mode) {
        Some(s) => Ok(x.map(|v| derivative_scalar(kind, v, s))),
        None => {
            let (lower, upper) = match *kind {
                ActivationKind::RRelu { lower, upper } => (lower, upper),
                _ => unreachable!(),
            };
            let slopes = sample_rrelu_slopes::<T>(lower, upper, x.numel(), rng);
            let mut out = x.clone();
            for (v, s) in out.data_mut().iter_mut().zip(&slopes) {
                *v = derivative_scalar(kind, *v, *s);
            }
            Ok(out)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::SeedableRng;

    /// Max |gelu_tanh - gelu_exact| on [-10,10] at step 1e-3, measured once
    /// with the erf oracle and frozen here.
    const TANH_VS_EXACT_MAX_ERR: f64 = 4.7323551795e-4;
    /// Same grid, max gap between the two derivative forms.
    const DERIV_FORMS_MAX_ERR: f64 = 8.6845149616e-4;

    fn rng(seed: u64) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(seed)
    }

    fn central_diff(f: impl Fn(f64) -> f64, x: f64, h: f64) -> f64 {
        (f(x + h) - f(x - h)) / (2.0 * h)
    }

    #[test]
    fn gelu_tanh_at_zero_and_one() {
        assert_eq!(gelu_tanh(0.0), 0.0);
        assert!((gelu_tanh(1.0) - 0.8412).abs() < 1e-4);
    }

    #[test]
    fn gelu_tanh_near_global_minimum() {
        let v = gelu_tanh(-0.75);
        assert!((v - (-0.17)).abs() < 0.005, "got {v}");
    }

    #[test]
    fn gelu_exact_values() {
        assert_eq!(gelu_exact(0.0, 1.0).unwrap(), 0.0);
        assert!((gelu_exact(1.0, 1.0).unwrap() - 0.841345).abs() < 1e-6);
        assert!((gelu_exact(10.0, 1.0).unwrap() - 10.0).abs() < 1e-9);
        assert!(gelu_exact(1.0, 0.0).is_err());
        assert!(gelu_exact(1.0, -2.0).is_err());
    }

    #[test]
    fn gelu_derivative_exact_values() {
        assert!((gelu_derivative_exact(0.0) - 0.5).abs() < 1e-15);
        assert!((gelu_derivative_exact(-1.0) - (-0.0833)).abs() < 1e-4);
        // first term alone at x = 1
        let term = 1.0 * normal_pdf(1.0);
        assert!((term - 0.241).abs() < 1e-3);
    }

    #[test]
    fn gelu_derivative_exact_matches_finite_differences() {
        for i in 0..=60 {
            let x = -3.0 + i as f64 * 0.1;
            let fd = central_diff(|v| gelu_exact(v, 1.0).unwrap(), x, 1e-5);
            assert!(
                (gelu_derivative_exact(x) - fd).abs() < 1e-6,
                "x={x}: analytic {} fd {}",
                gelu_derivative_exact(x),
                fd
            );
        }
    }

    #[test]
    fn gelu_derivative_tanh_matches_finite_differences() {
        // grid [-5,5] step 0.01
        for i in 0..=1000 {
            let x = -5.0 + i as f64 * 0.01;
            let fd = central_diff(gelu_tanh, x, 1e-5);
            assert!(
                (gelu_derivative_tanh(x) - fd).abs() < 1e-7,
                "x={x}: analytic {} fd {}",
                gelu_derivative_tanh(x),
                fd
            );
        }
        assert!((gelu_derivative_tanh(0.0) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn gelu_negative_gradient_region() {
        // The derivative is negative left of the minimum. Below x ~ -7.2 the
        // tanh form saturates and evaluates to exactly 0.0 in f64, so strict
        // negativity is asserted on [-6, -0.76] and nonpositivity on the rest.
        let mut i = 0.0;
        while -10.0 + i * 0.01 <= -0.76 {
            let x = -10.0 + i * 0.01;
            let v = gelu_derivative_tanh(x);
            assert!(v <= 0.0, "x={x}: {v}");
            if x >= -6.0 {
                assert!(v < 0.0, "x={x}: {v}");
            }
            i += 1.0;
        }
        // The exact form keeps a strictly negative sign across the whole grid.
        let mut x = -10.0;
        while x <= -0.76 {
            assert!(gelu_derivative_exact(x) < 0.0, "x={x}");
            x += 0.01;
        }
    }

    #[test]
    fn tanh_approximation_error_is_frozen() {
        let mut max_err: f64 = 0.0;
        let mut max_deriv_err: f64 = 0.0;
        for i in 0..=20000 {
            let x = -10.0 + i as f64 * 1e-3;
            max_err = max_err.max((gelu_tanh(x) - gelu_exact(x, 1.0).unwrap()).abs());
            max_deriv_err =
                max_deriv_err.max((gelu_derivative_tanh(x) - gelu_derivative_exact(x)).abs());
        }
        assert!(max_err <= TANH_VS_EXACT_MAX_ERR + 1e-9, "{max_err}");
        assert!(max_err > TANH_VS_EXACT_MAX_ERR - 1e-6); // bound stays tight
        assert!(max_err < 1e-2);
        assert!(max_deriv_err <= DERIV_FORMS_MAX_ERR + 1e-9, "{max_deriv_err}");
    }

    #[test]
    fn gelu_bounds() {
        for i in 0..=20000 {
            let x = -10.0 + i as f64 * 1e-3;
            let g = gelu_tanh(x);
            assert!(g <= x.max(0.0) + 1e-15, "x={x} g={g}");
            assert!(g >= -0.17004076 - 1e-6, "x={x} g={g}");
        }
    }

    #[test]
    fn fault_injection_hook_changes_the_constant() {
        let c = GeluConstants {
            cubic: 0.08,
            ..Default::default()
        };
        assert!((gelu_tanh_with(&c, 1.5) - gelu_tanh(1.5)).abs() > 1e-3);
    }

    #[test]
    fn spec_point_values() {
        let k = ActivationKind::Relu;
        assert_eq!(forward_scalar(&k, -2.0f64, 0.0), 0.0);
        assert_eq!(forward_scalar(&ActivationKind::Tanh, 0.0f64, 0.0), 0.0);
        let hs = ActivationKind::Hardswish;
        assert_eq!(forward_scalar(&hs, 3.0f64, 0.0), 3.0);
        assert_eq!(forward_scalar(&hs, -3.0f64, 0.0), 0.0);
        assert_eq!(derivative_scalar(&k, 5.0f64, 0.0), 1.0);
        assert_eq!(derivative_scalar(&k, -5.0f64, 0.0), 0.0);
        assert!((derivative_scalar(&ActivationKind::Sigmoid, 0.0f64, 0.0) - 0.25).abs() < 1e-15);
    }

    #[test]
    fn kink_conventions() {
        use ActivationKind::*;
        assert_eq!(derivative_scalar(&Relu, 0.0f64, 0.0), 0.0);
        assert_eq!(derivative_scalar(&Relu6, 0.0f64, 0.0), 0.0);
        assert_eq!(derivative_scalar(&Relu6, 6.0f64, 0.0), 0.0);
        assert_eq!(
            derivative_scalar(&Hardtanh { min: -1.0, max: 1.0 }, 1.0f64, 0.0),
            0.0
        );
        assert_eq!(
            derivative_scalar(&Hardtanh { min: -1.0, max: 1.0 }, -1.0f64, 0.0),
            0.0
        );
        assert_eq!(derivative_scalar(&Hardsigmoid, 3.0f64, 0.0), 0.0);
        assert_eq!(derivative_scalar(&Hardswish, -3.0f64, 0.0), 0.0);
        assert_eq!(derivative_scalar(&Hardswish, 3.0f64, 0.0), 1.0);
        assert_eq!(derivative_scalar(&Hardshrink { lambda: 0.5 }, 0.5f64, 0.0), 1.0);
        assert_eq!(derivative_scalar(&Softshrink { lambda: 0.5 }, -0.5f64, 0.0), 1.0);
    }

    #[test]
    fn every_kind_matches_finite_differences_away_from_kinks() {
        for kind in ActivationKind::all() {
            let f = |x: f64| {
                let t = Tensor::scalar(x);
                apply_activation(&kind, &t, Mode::Eval, &mut rng(7)).unwrap().data()[0]
            };
            for i in 0..=85 {
                let x = -4.0 + i as f64 * 0.0937;
                let kink_near = [0.0, 0.5, -0.5, 3.0, -3.0, 6.0, 1.0, -1.0]
                    .iter()
                    .any(|k| (x - k).abs() < 1e-3);
                if kink_near {
                    continue;
                }
                let fd = central_diff(f, x, 1e-6);
                let t = Tensor::scalar(x);
                let an = activation_derivative(&kind, &t, Mode::Eval, &mut rng(7)).unwrap().data()[0];
                assert!(
                    (an - fd).abs() < 1e-6 * (1.0 + an.abs()),
                    "{} at x={x}: analytic {an} fd {fd}",
                    kind.name()
                );
            }
        }
    }

    #[test]
    fn rrelu_eval_is_deterministic_and_train_replays() {
        let kind = ActivationKind::RRelu {
            lower: 0.125,
            upper: 1.0 / 3.0,
        };
        let x = Tensor::new(vec![5], vec![-2.0f64, -1.0, 0.0, 1.0, 2.0]).unwrap();
        let a = apply_activation(&kind, &x, Mode::Eval, &mut rng(3)).unwrap();
        let b = apply_activation(&kind, &x, Mode::Eval, &mut rng(4)).unwrap();
        assert_eq!(a.data(), b.data());

        // Same rng state => derivative reuses the forward slopes.
        let state = rng(42);
        let fwd = apply_activation(&kind, &x, Mode::Train, &mut state.clone()).unwrap();
        let der = activation_derivative(&kind, &x, Mode::Train, &mut state.clone()).unwrap();
        for i in 0..x.numel() {
            let xv = x.data()[i];
            if xv < 0.0 {
                let slope = fwd.data()[i] / xv;
                assert!((der.data()[i] - slope).abs() < 1e-15);
                assert!((0.125..1.0 / 3.0).contains(&slope));
            } else if xv > 0.0 {
                assert_eq!(der.data()[i], 1.0);
            } else {
                // at exactly 0 the slope side applies
                assert!((0.125..1.0 / 3.0).contains(&der.data()[i]));
            }
        }
    }

    #[test]
    fn names_round_trip() {
        for kind in ActivationKind::all() {
            let back = ActivationKind::from_name(kind.name()).unwrap();
            assert_eq!(back.name(), kind.name());
        }
        assert!(ActivationKind::from_name("swish").is_err());
        assert_eq!(ActivationKind::all().len(), 21);
    }

    #[test]
    fn rrelu_bounds_validated() {
        assert!(ActivationKind::RRelu { lower: 0.5, upper: 0.2 }.validate().is_err());
        assert!(ActivationKind::RRelu { lower: 0.0, upper: 1.0 }.validate().is_err());
    }

    proptest! {
        #[test]
        fn monotone_kinds_are_monotone(a in -20.0f64..20.0, b in -20.0f64..20.0) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            for kind in ActivationKind::all() {
                if kind.is_monotone_nondecreasing() {
                    let fa = forward_scalar(&kind, lo, 0.0);
                    let fb = forward_scalar(&kind, hi, 0.0);
                    prop_assert!(fa <= fb + 1e-12, "{} not monotone: f({lo})={fa} > f({hi})={fb}", kind.name());
                }
            }
        }

        #[test]
        fn gelu_tanh_below_relu(x in -50.0f64..50.0) {
            prop_assert!(gelu_tanh(x) <= x.max(0.0) + 1e-12);
        }

        #[test]
        fn all_kinds_finite_on_moderate_inputs(x in -30.0f64..30.0) {
            for kind in ActivationKind::all() {
                let v = forward_scalar(&kind, x, 0.2);
                prop_assert!(v.is_finite(), "{}({x}) = {v}", kind.name());
            }
        }
    }
}
