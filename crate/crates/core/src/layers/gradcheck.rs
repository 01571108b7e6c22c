//! Central finite-difference check of a layer's analytic gradients.
//!
//! The scalar loss is `L = Σ rᵢ·yᵢ` with a fixed pseudo-random projection `r`,
//! so that layers whose plain output sum is constant (softmax) or flat
//! (batch norm) still get a non-trivial check. Every perturbed evaluation runs
//! on a fresh clone of the original layer, which replays the same dropout mask.

use crate::error::{Error, Result};
use crate::layers::{GradBundle, LayerState, Mode};
use crate::rng::RngStream;
use crate::tensor::Tensor;

pub const REL_TOL: f64 = 1e-5;
pub const ABS_TOL: f64 = 1e-8;
const PROJECTION_SEED: u64 = 0x5eed_9c4e;

#[derive(Debug, Clone, PartialEq)]
pub struct CheckEntry {
    /// `"input"` or the parameter name.
    pub name: String,
    pub max_abs_err: f64,
    /// Largest `|analytic − numeric| / |numeric|` among elements where the
    /// numeric gradient or the absolute error exceeds [`ABS_TOL`].
    pub max_rel_err: f64,
    /// An element fails when its absolute error exceeds [`ABS_TOL`] and its
    /// relative error exceeds [`REL_TOL`].
    pub passed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckReport {
    pub layer: String,
    pub entries: Vec<CheckEntry>,
}

impl CheckReport {
    pub fn passed(&self) -> bool {
        self.entries.iter().all(|e| e.passed)
    }

    pub fn max_rel_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_rel_err).fold(0.0, f64::max)
    }

    pub fn max_abs_err(&self) -> f64 {
        self.entries.iter().map(|e| e.max_abs_err).fold(0.0, f64::max)
    }
}

fn projection(n: usize) -> Vec<f64> {
    let mut rng = RngStream::new(PROJECTION_SEED).derive(&[n as u64]);
    (0..n).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

fn loss(base: &LayerState<f64>, input: &Tensor<f64>, r: &[f64]) -> Result<f64> {
    let mut l = base.clone();
    let y = l.forward(input, Mode::Train)?;
    Ok(y.data().iter().zip(r).map(|(a, b)| a * b).sum())
}

fn compare(name: &str, analytic: &[f64], numeric: &[f64]) -> CheckEntry {
    let mut max_abs: f64 = 0.0;
    let mut max_rel: f64 = 0.0;
    let mut passed = analytic.len() == numeric.len();
    for (&a, &n) in analytic.iter().zip(numeric) {
        let abs = (a - n).abs();
        let rel = if n == 0.0 { f64::INFINITY } else { abs / n.abs() };
        let (abs, rel) = if abs.is_nan() { (f64::INFINITY, f64::INFINITY) } else { (abs, rel) };
        max_abs = max_abs.max(abs);
        if n.abs() > ABS_TOL || abs > ABS_TOL {
            max_rel = max_rel.max(rel);
        }
        if abs > ABS_TOL && rel > REL_TOL {
            passed = false;
        }
    }
    CheckEntry {
        name: name.to_string(),
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        passed,
    }
}

/// Checks `layer`'s backward pass on `input`. Runs in 64-bit; `eps` must lie
/// in `[1e-7, 1e-4]`.
pub fn grad_check(layer: &LayerState<f64>, input: &Tensor<f64>, eps: f64) -> Result<CheckReport> {
    grad_check_with(layer, input, eps, |_| {})
}

/// Like [`grad_check`], but lets the caller tamper with the analytic
/// gradients before comparison (fault injection).
pub fn grad_check_with(
    layer: &LayerState<f64>,
    input: &Tensor<f64>,
    eps: f64,
    tamper: impl FnOnce(&mut GradBundle<f64>),
) -> Result<CheckReport> {
    if !(1e-7..=1e-4).contains(&eps) {
        return Err(Error::Parameter(format!("eps must be in [1e-7, 1e-4], got {eps}")));
    }
    let mut probe = layer.clone();
    let out = probe.forward(input, Mode::Train)?;
    let r = projection(out.len());
    let seed = Tensor::new(out.shape().to_vec(), r.clone())?;
    let mut bundle = probe.backward(&seed)?;
    tamper(&mut bundle);

    let mut entries = Vec::new();

    let mut x = input.clone();
    let mut numeric = Vec::with_capacity(x.len());
    for i in 0..x.len() {
        let orig = x.data()[i];
        x.data_mut()[i] = orig + eps;
        let up = loss(layer, &x, &r)?;
        x.data_mut()[i] = orig - eps;
        let down = loss(layer, &x, &r)?;
        x.data_mut()[i] = orig;
        numeric.push((up - down) / (2.0 * eps));
    }
    entries.push(compare("input", bundle.d_input.data(), &numeric));

    let names: Vec<&'static str> = layer.params().iter().map(|(n, _, _)| *n).collect();
    for (pi, name) in names.iter().enumerate() {
        let analytic = bundle
            .d_params
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t.data().to_vec())
            .unwrap_or_default();
        let len = layer.params()[pi].2.len();
        let mut numeric = Vec::with_capacity(len);
        for j in 0..len {
            let eval = |delta: f64| -> Result<f64> {
                let mut l = layer.clone();
                let mut params = l.params_mut();
                let t = &mut params[pi].2;
                t.data_mut()[j] = t.data()[j] + delta;
                loss(&l, input, &r)
            };
            numeric.push((eval(eps)? - eval(-eps)?) / (2.0 * eps));
        }
        entries.push(compare(name, &analytic, &numeric));
    }

    Ok(CheckReport {
        layer: layer.kind().to_string(),
        entries,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::KernelSpec;
    use crate::layers::{Dense, KernelDense};

    #[test]
    fn cubic_kdl_passes() {
        let mut rng = RngStream::new(1);
        let l = KernelDense::he_init(KernelSpec::polynomial(3), 8, 4, false, &mut rng).unwrap();
        let x = rng.sample_normal(0.0, 1.0, [3, 8]).unwrap();
        let report = grad_check(&LayerState::Kdl(l), &x, 1e-6).unwrap();
        assert!(report.passed(), "{report:?}");
    }

    #[test]
    fn dense_passes() {
        let mut rng = RngStream::new(2);
        let l = Dense::he_init(5, 3, true, &mut rng).unwrap();
        let x = rng.sample_normal(0.0, 1.0, [4, 5]).unwrap();
        assert!(grad_check(&LayerState::Dense(l), &x, 1e-6).unwrap().passed());
    }

    #[test]
    fn doubled_weight_gradient_fails_with_unit_relative_error() {
        let mut rng = RngStream::new(1);
        let l = KernelDense::he_init(KernelSpec::polynomial(3), 8, 4, false, &mut rng).unwrap();
        let x = rng.sample_normal(0.0, 1.0, [3, 8]).unwrap();
        let report = grad_check_with(&LayerState::Kdl(l), &x, 1e-6, |b| {
            for v in b.d_params[0].1.data_mut() {
                *v *= 2.0;
            }
        })
        .unwrap();
        assert!(!report.passed());
        let w = report.entries.iter().find(|e| e.name == "weight").unwrap();
        assert!((w.max_rel_err - 1.0).abs() < 1e-3, "{}", w.max_rel_err);
    }

    #[test]
    fn eps_range_enforced() {
        let l = LayerState::Relu(crate::layers::Relu::new());
        let x = Tensor::from_rows(&[&[1.0]]);
        assert!(grad_check(&l, &x, 1e-3).is_err());
        assert!(grad_check(&l, &x, 1e-8).is_err());
    }
}
