//! Kernel functions `K(x, w)` evaluated by kernelized dense units, and their
//! analytic gradients.
//!
//! Dot-product kernels (linear, polynomial) carry a non-negative bias inside
//! the kernel argument: `s = x·w + b`, `K = s` or `K = sⁿ`. Distance kernels
//! (gaussian, laplacian, abel) ignore the bias and always return a value in
//! `(0, 1]`. The laplacian uses the Euclidean distance and the abel kernel the
//! L1 distance. At the kinks of either norm the gradient is taken to be zero.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum KernelSpec {
    Linear,
    Polynomial { n: u32 },
    Gaussian { sigma: f64 },
    Laplacian { alpha: f64 },
    Abel { alpha: f64 },
}

impl fmt::Display for KernelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            KernelSpec::Linear => write!(f, "linear"),
            KernelSpec::Polynomial { n } => write!(f, "polynomial(n={n})"),
            KernelSpec::Gaussian { sigma } => write!(f, "gaussian(sigma={sigma})"),
            KernelSpec::Laplacian { alpha } => write!(f, "laplacian(alpha={alpha})"),
            KernelSpec::Abel { alpha } => write!(f, "abel(alpha={alpha})"),
        }
    }
}

impl KernelSpec {
    pub fn polynomial(n: u32) -> Self {
        KernelSpec::Polynomial { n }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            KernelSpec::Linear => true,
            KernelSpec::Polynomial { n } => n >= 1,
            KernelSpec::Gaussian { sigma } => sigma > 0.0 && sigma.is_finite(),
            KernelSpec::Laplacian { alpha } | KernelSpec::Abel { alpha } => {
                alpha > 0.0 && alpha.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::Parameter(format!("invalid kernel parameters: {self}")))
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            KernelSpec::Linear => "linear",
            KernelSpec::Polynomial { .. } => "polynomial",
            KernelSpec::Gaussian { .. } => "gaussian",
            KernelSpec::Laplacian { .. } => "laplacian",
            KernelSpec::Abel { .. } => "abel",
        }
    }

    /// Polynomial degree; 1 for the linear kernel, `None` for distance kernels.
    pub fn degree(&self) -> Option<u32> {
        match *self {
            KernelSpec::Linear => Some(1),
            KernelSpec::Polynomial { n } => Some(n),
            _ => None,
        }
    }

    /// True for kernels of the form `f(x·w + b)`.
    pub fn is_dot_product(&self) -> bool {
        self.degree().is_some()
    }

    /// Only degree-1 kernels are followed by a ReLU; every other kernel is
    /// already non-linear.
    pub fn takes_activation(&self) -> bool {
        self.degree() == Some(1)
    }

    /// `K` as a function of the pre-activation `s = x·w + b` (dot-product
    /// kernels only). Errors instead of returning infinity.
    pub(crate) fn apply_dot<T: Scalar>(&self, s: T) -> Result<T> {
        let n = match *self {
            KernelSpec::Linear => 1,
            KernelSpec::Polynomial { n } => n,
            _ => unreachable!("apply_dot on a distance kernel"),
        };
        let mag = s.abs();
        if n > 1 && mag > T::one() && n as f64 * mag.as_f64().ln() >= T::max_value().as_f64().ln() {
            return Err(Error::overflow(self.name(), Some(n), mag.as_f64()));
        }
        let k = s.powi(n as i32);
        if !k.is_finite() {
            return Err(Error::overflow(self.name(), Some(n), mag.as_f64()));
        }
        Ok(k)
    }

    /// `dK/ds` for dot-product kernels: `n·sⁿ⁻¹`.
    pub(crate) fn dot_slope<T: Scalar>(&self, s: T) -> T {
        match *self {
            KernelSpec::Linear => T::one(),
            KernelSpec::Polynomial { n } => T::of(n as f64) * s.powi(n as i32 - 1),
            _ => unreachable!("dot_slope on a distance kernel"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KernelGrad<T> {
    pub d_x: Vec<T>,
    pub d_w: Vec<T>,
    pub d_b: T,
}

fn check_args<T: Scalar>(spec: &KernelSpec, x: &[T], w: &[T], b: T) -> Result<()> {
    spec.validate()?;
    if x.len() != w.len() || x.is_empty() {
        return Err(Error::dim(
            "kernel",
            format!("x has length {}, w has length {}", x.len(), w.len()),
        ));
    }
    if spec.is_dot_product() && (b.is_nan() || b < T::zero()) {
        return Err(Error::Parameter(format!("kernel bias must be >= 0, got {b}")));
    }
    Ok(())
}

fn dot<T: Scalar>(x: &[T], w: &[T]) -> T {
    x.iter().zip(w).fold(T::zero(), |acc, (&a, &b)| acc + a * b)
}

fn sq_dist<T: Scalar>(x: &[T], w: &[T]) -> T {
    x.iter().zip(w).fold(T::zero(), |acc, (&a, &b)| {
        let d = a - b;
        acc + d * d
    })
}

fn l1_dist<T: Scalar>(x: &[T], w: &[T]) -> T {
    x.iter().zip(w).fold(T::zero(), |acc, (&a, &b)| acc + (a - b).abs())
}

/// Evaluates the kernel on one input/weight pair.
pub fn kernel_eval<T: Scalar>(spec: &KernelSpec, x: &[T], w: &[T], b: T) -> Result<T> {
    check_args(spec, x, w, b)?;
    distance_or_dot(spec, x, w, b)
}

pub(crate) fn distance_or_dot<T: Scalar>(spec: &KernelSpec, x: &[T], w: &[T], b: T) -> Result<T> {
    let k = match *spec {
        KernelSpec::Linear | KernelSpec::Polynomial { .. } => spec.apply_dot(dot(x, w) + b)?,
        KernelSpec::Gaussian { sigma } => {
            let two_s2 = T::of(2.0 * sigma * sigma);
            (-sq_dist(x, w) / two_s2).exp()
        }
        KernelSpec::Laplacian { alpha } => (-T::of(alpha) * sq_dist(x, w).sqrt()).exp(),
        KernelSpec::Abel { alpha } => (-T::of(alpha) * l1_dist(x, w)).exp(),
    };
    if !k.is_finite() {
        return Err(Error::overflow(spec.name(), spec.degree(), k.as_f64().abs()));
    }
    Ok(k)
}

/// Analytic gradient of [`kernel_eval`] with respect to `x`, `w` and `b`.
pub fn kernel_grad<T: Scalar>(spec: &KernelSpec, x: &[T], w: &[T], b: T) -> Result<KernelGrad<T>> {
    check_args(spec, x, w, b)?;
    let k = distance_or_dot(spec, x, w, b)?;
    let zero = T::zero();
    Ok(match *spec {
        KernelSpec::Linear | KernelSpec::Polynomial { .. } => {
            let c = spec.dot_slope(dot(x, w) + b);
            KernelGrad {
                d_x: w.iter().map(|&v| c * v).collect(),
                d_w: x.iter().map(|&v| c * v).collect(),
                d_b: c,
            }
        }
        KernelSpec::Gaussian { sigma } => {
            let scale = k / T::of(sigma * sigma);
            let d_x: Vec<T> = x.iter().zip(w).map(|(&a, &b)| -(a - b) * scale).collect();
            let d_w = d_x.iter().map(|&v| -v).collect();
            KernelGrad { d_x, d_w, d_b: zero }
        }
        KernelSpec::Laplacian { alpha } => {
            let r = sq_dist(x, w).sqrt();
            let d_x: Vec<T> = if r == zero {
                vec![zero; x.len()]
            } else {
                let scale = T::of(alpha) * k / r;
                x.iter().zip(w).map(|(&a, &b)| -(a - b) * scale).collect()
            };
            let d_w = d_x.iter().map(|&v| -v).collect();
            KernelGrad { d_x, d_w, d_b: zero }
        }
        KernelSpec::Abel { alpha } => {
            let scale = T::of(alpha) * k;
            let d_x: Vec<T> = x
                .iter()
                .zip(w)
                .map(|(&a, &b)| -sign(a - b) * scale)
                .collect();
            let d_w = d_x.iter().map(|&v| -v).collect();
            KernelGrad { d_x, d_w, d_b: zero }
        }
    })
}

pub(crate) fn sign<T: Scalar>(v: T) -> T {
    if v > T::zero() {
        T::one()
    } else if v < T::zero() {
        -T::one()
    } else {
        T::zero()
    }
}
