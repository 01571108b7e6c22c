//! Kernelized dense layer: unit `u` outputs `K(x, w_u, b_u)` instead of the
//! weighted sum `x·w_u + b_u`.

use crate::error::{Error, Result};
use crate::kernel::{distance_or_dot, sign, KernelSpec};
use crate::layers::{col_sums, relu_mask_in_place, rows_of, GradBundle, Mode, ParamKind};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
struct Cache<T> {
    input: Tensor<T>,
    /// Pre-kernel `s` for dot-product kernels, `K` itself for distance kernels.
    pre: Tensor<T>,
    out: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct KernelDense<T> {
    spec: KernelSpec,
    weight: Tensor<T>,
    bias: Tensor<T>,
    activation: bool,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> KernelDense<T> {
    /// `weight` is `units × in_dim`, `bias` has one non-negative entry per unit.
    /// `activation` requests a trailing ReLU, which only takes effect for
    /// degree-1 kernels.
    pub fn new(spec: KernelSpec, weight: Tensor<T>, bias: Tensor<T>, activation: bool) -> Result<Self> {
        spec.validate()?;
        let units = match weight.shape() {
            [u, d] if *d >= 1 => *u,
            s => return Err(Error::dim("kdl", format!("weight must be units×in_dim, got {s:?}"))),
        };
        if bias.shape() != [units] {
            return Err(Error::dim(
                "kdl",
                format!("bias shape {:?} does not match {} units", bias.shape(), units),
            ));
        }
        if spec.is_dot_product() && bias.data().iter().any(|&b| b.is_nan() || b < T::zero()) {
            return Err(Error::Parameter("kdl bias must be >= 0".into()));
        }
        Ok(KernelDense {
            spec,
            weight,
            bias,
            activation,
            cache: None,
        })
    }

    /// He-normal weights (`stddev = sqrt(2 / in_dim)`) and zero bias.
    pub fn he_init(
        spec: KernelSpec,
        in_dim: usize,
        units: usize,
        activation: bool,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let std = (2.0 / in_dim as f64).sqrt();
        let weight = rng.sample_normal(0.0, std, [units, in_dim])?;
        Self::new(spec, weight, Tensor::zeros([units]), activation)
    }

    pub fn spec(&self) -> &KernelSpec {
        &self.spec
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    /// Whether a ReLU follows the kernel.
    pub fn relu_active(&self) -> bool {
        self.activation && self.spec.takes_activation()
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor<T>)> {
        let bias_kind = if self.spec.is_dot_product() {
            ParamKind::NonNegBias
        } else {
            ParamKind::Bias
        };
        vec![
            ("weight", ParamKind::Weight, &self.weight),
            ("bias", bias_kind, &self.bias),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor<T>)> {
        let bias_kind = if self.spec.is_dot_product() {
            ParamKind::NonNegBias
        } else {
            ParamKind::Bias
        };
        vec![
            ("weight", ParamKind::Weight, &mut self.weight),
            ("bias", bias_kind, &mut self.bias),
        ]
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (batch, d) = rows_of(input, "kdl")?;
        if d != self.in_dim() {
            return Err(Error::dim(
                "kdl",
                format!("input {:?} does not match weight {:?}", input.shape(), self.weight.shape()),
            ));
        }
        let units = self.units();
        let overflow_at = |i: usize| move || format!("kdl batch {} unit {}", i / units, i % units);

        let (pre, mut out) = if self.spec.is_dot_product() {
            let mut s = input.matmul(&self.weight.transpose()?)?;
            for row in s.data_mut().chunks_exact_mut(units) {
                for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                    *v = *v + b;
                }
            }
            let mut k = s.clone();
            for (i, v) in k.data_mut().iter_mut().enumerate() {
                *v = self.spec.apply_dot(*v).map_err(|e| e.at(overflow_at(i)))?;
            }
            (s, k)
        } else {
            let mut k = Tensor::zeros([batch, units]);
            for (i, v) in k.data_mut().iter_mut().enumerate() {
                let (b, u) = (i / units, i % units);
                *v = distance_or_dot(&self.spec, input.outer(b), self.weight.outer(u), T::zero())
                    .map_err(|e| e.at(overflow_at(i)))?;
            }
            (k.clone(), k)
        };
        if self.relu_active() {
            out = out.map(|v| v.max(T::zero()));
        }
        self.cache = match mode {
            Mode::Train => Some(Cache {
                input: input.clone(),
                pre,
                out: out.clone(),
            }),
            Mode::Infer => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("kdl backward without a training-mode forward".into()))?;
        if d_out.shape() != cache.out.shape() {
            return Err(Error::dim(
                "kdl backward",
                format!("d_out {:?} vs output {:?}", d_out.shape(), cache.out.shape()),
            ));
        }
        let mut g = d_out.clone();
        if self.relu_active() {
            relu_mask_in_place(&mut g, &cache.out);
        }
        let (d_input, d_weight, d_bias) = if self.spec.is_dot_product() {
            for (gv, &s) in g.data_mut().iter_mut().zip(cache.pre.data()) {
                *gv = *gv * self.spec.dot_slope(s);
            }
            let d_input = g.matmul(&self.weight)?;
            let d_weight = g.transpose()?.matmul(&cache.input)?;
            (d_input, d_weight, col_sums(&g))
        } else {
            self.distance_backward(&g, &cache)
        };
        Ok(GradBundle {
            d_input,
            d_params: vec![("weight", d_weight), ("bias", d_bias)],
        })
    }

    fn distance_backward(&self, g: &Tensor<T>, cache: &Cache<T>) -> (Tensor<T>, Tensor<T>, Tensor<T>) {
        let (batch, units, d) = (g.shape()[0], self.units(), self.in_dim());
        let mut d_input = Tensor::zeros([batch, d]);
        let mut d_weight = Tensor::zeros([units, d]);
        let mut diff = vec![T::zero(); d];
        for b in 0..batch {
            let x = cache.input.outer(b);
            for u in 0..units {
                let gk = g.data()[b * units + u];
                if gk == T::zero() {
                    continue;
                }
                let k = cache.pre.data()[b * units + u];
                let w = self.weight.outer(u);
                for ((dv, &xi), &wi) in diff.iter_mut().zip(x).zip(w) {
                    *dv = xi - wi;
                }
                // dK/dx = scale · f(x − w); dK/dw = −dK/dx
                let scale = match self.spec {
                    KernelSpec::Gaussian { sigma } => -gk * k / T::of(sigma * sigma),
                    KernelSpec::Laplacian { alpha } => {
                        let r = diff.iter().fold(T::zero(), |a, &v| a + v * v).sqrt();
                        if r == T::zero() {
                            T::zero()
                        } else {
                            -gk * T::of(alpha) * k / r
                        }
                    }
                    KernelSpec::Abel { alpha } => {
                        diff.iter_mut().for_each(|v| *v = sign(*v));
                        -gk * T::of(alpha) * k
                    }
                    _ => unreachable!(),
                };
                let dx = d_input.outer_mut(b);
                for (a, &v) in dx.iter_mut().zip(&diff) {
                    *a = *a + scale * v;
                }
                let dw = d_weight.outer_mut(u);
                for (a, &v) in dw.iter_mut().zip(&diff) {
                    *a = *a - scale * v;
                }
            }
        }
        (d_input, d_weight, Tensor::zeros([units]))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(spec: KernelSpec, w: &[&[f64]], b: &[f64], act: bool) -> KernelDense<f64> {
        KernelDense::new(spec, Tensor::from_rows(w), Tensor::new([b.len()], b.to_vec()).unwrap(), act)
            .unwrap()
    }

    #[test]
    fn quadratic_units() {
        let mut l = layer(KernelSpec::polynomial(2), &[&[1.0, 0.0], &[0.0, 1.0]], &[0.0, 0.0], false);
        let y = l.forward(&Tensor::from_rows(&[&[3.0, 4.0]]), Mode::Infer).unwrap();
        assert_eq!(y.data(), &[9.0, 16.0]);
    }

    #[test]
    fn degree_one_relu_clamps() {
        let mut l = layer(KernelSpec::polynomial(1), &[&[1.0, 0.0]], &[0.0], true);
        let y = l.forward(&Tensor::from_rows(&[&[-1.0, 2.0]]), Mode::Infer).unwrap();
        assert_eq!(y.data(), &[0.0]);
    }

    #[test]
    fn activation_flag_ignored_above_degree_one() {
        let mut l = layer(KernelSpec::polynomial(3), &[&[1.0, 0.0]], &[0.0], true);
        assert!(!l.relu_active());
        let y = l.forward(&Tensor::from_rows(&[&[-1.0, 2.0]]), Mode::Infer).unwrap();
        assert_eq!(y.data(), &[-1.0]);
    }

    #[test]
    fn empty_batch() {
        for spec in [KernelSpec::polynomial(2), KernelSpec::Gaussian { sigma: 1.0 }] {
            let mut l = layer(spec, &[&[1.0, 0.0], &[0.5, 0.5], &[0.0, 1.0]], &[0.0; 3], false);
            let y = l.forward(&Tensor::zeros([0, 2]), Mode::Train).unwrap();
            assert_eq!(y.shape(), &[0, 3]);
        }
    }

    #[test]
    fn quadratic_backward_example() {
        let mut l = layer(KernelSpec::polynomial(2), &[&[2.0, 1.0]], &[1.0], false);
        l.forward(&Tensor::from_rows(&[&[1.0, 0.0]]), Mode::Train).unwrap();
        let g = l.backward(&Tensor::from_rows(&[&[1.0]])).unwrap();
        assert_eq!(g.d_input.data(), &[12.0, 6.0]);
        assert_eq!(g.d_params[0].1.data(), &[6.0, 0.0]);
        assert_eq!(g.d_params[1].1.data(), &[6.0]);
    }

    #[test]
    fn zero_upstream_gradient() {
        let mut l = layer(KernelSpec::Gaussian { sigma: 0.5 }, &[&[2.0, 1.0], &[0.0, 1.0]], &[0.0; 2], false);
        l.forward(&Tensor::from_rows(&[&[1.0, 0.0], &[0.3, 0.3]]), Mode::Train).unwrap();
        let g = l.backward(&Tensor::zeros([2, 2])).unwrap();
        assert!(g.d_input.data().iter().all(|&v| v == 0.0));
        assert!(g.d_params.iter().all(|(_, t)| t.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn backward_requires_training_forward() {
        let mut l = layer(KernelSpec::Linear, &[&[1.0]], &[0.0], false);
        assert!(matches!(l.backward(&Tensor::zeros([1, 1])), Err(Error::State(_))));
        l.forward(&Tensor::from_rows(&[&[1.0]]), Mode::Infer).unwrap();
        assert!(matches!(l.backward(&Tensor::zeros([1, 1])), Err(Error::State(_))));
    }

    #[test]
    fn overflow_carries_location() {
        let mut l: KernelDense<f32> = KernelDense::new(
            KernelSpec::polynomial(3),
            Tensor::from_rows(&[&[1.0], &[1e14]]),
            Tensor::zeros([2]),
            false,
        )
        .unwrap();
        let err = l.forward(&Tensor::from_rows(&[&[1.0], &[1.0]]), Mode::Train).unwrap_err();
        let msg = err.to_string();
        assert!(err.is_overflow());
        assert!(msg.contains("batch 0 unit 1"), "{msg}");
    }

    #[test]
    fn negative_bias_rejected() {
        let r = KernelDense::new(
            KernelSpec::Linear,
            Tensor::<f64>::zeros([1, 2]),
            Tensor::full([1], -1.0),
            false,
        );
        assert!(matches!(r, Err(Error::Parameter(_))));
    }
}
