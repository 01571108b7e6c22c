//! Per-channel batch normalization.
//!
//! Training mode normalizes with the batch statistics over every axis except
//! the channel axis and folds them into the running statistics:
//! `running = momentum · running + (1 − momentum) · batch`.
//! Inference mode uses the running statistics and leaves them untouched.

use crate::error::{Error, Result};
use crate::layers::{GradBundle, Mode, ParamKind};
use crate::tensor::{Scalar, Tensor};

pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Cache<T> {
    xhat: Tensor<T>,
    inv_std: Vec<T>,
}

#[derive(Debug, Clone)]
pub struct BatchNorm<T> {
    gamma: Tensor<T>,
    beta: Tensor<T>,
    running_mean: Tensor<T>,
    running_var: Tensor<T>,
    momentum: f64,
    eps: f64,
    cache: Option<Cache<T>>,
}

/// (batch, channels, spatial) for `B×C` or `B×C×H×W` inputs.
fn layout(shape: &[usize], channels: usize) -> Result<(usize, usize)> {
    let ok = match shape {
        [_, c] | [_, c, _, _] => *c == channels,
        _ => false,
    };
    if !ok {
        return Err(Error::dim(
            "batchnorm",
            format!("expected B×{channels} or B×{channels}×H×W, got {shape:?}"),
        ));
    }
    Ok((shape[0], shape[2..].iter().product()))
}

impl<T: Scalar> BatchNorm<T> {
    pub fn new(channels: usize) -> Self {
        Self::with_constants(channels, DEFAULT_MOMENTUM, DEFAULT_EPS)
    }

    pub fn with_constants(channels: usize, momentum: f64, eps: f64) -> Self {
        BatchNorm {
            gamma: Tensor::full([channels], T::one()),
            beta: Tensor::zeros([channels]),
            running_mean: Tensor::zeros([channels]),
            running_var: Tensor::full([channels], T::one()),
            momentum,
            eps,
            cache: None,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn running_mean(&self) -> &Tensor<T> {
        &self.running_mean
    }

    pub fn running_var(&self) -> &Tensor<T> {
        &self.running_var
    }

    pub fn set_affine(&mut self, gamma: Tensor<T>, beta: Tensor<T>) -> Result<()> {
        if gamma.shape() != self.gamma.shape() || beta.shape() != self.beta.shape() {
            return Err(Error::dim("batchnorm", "gamma/beta must have one entry per channel"));
        }
        self.gamma = gamma;
        self.beta = beta;
        Ok(())
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor<T>)> {
        vec![
            ("gamma", ParamKind::Norm, &self.gamma),
            ("beta", ParamKind::Norm, &self.beta),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor<T>)> {
        vec![
            ("gamma", ParamKind::Norm, &mut self.gamma),
            ("beta", ParamKind::Norm, &mut self.beta),
        ]
    }

    pub(crate) fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        vec![("running_mean", &self.running_mean), ("running_var", &self.running_var)]
    }

    pub(crate) fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    pub(crate) fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        vec![
            ("gamma", &mut self.gamma),
            ("beta", &mut self.beta),
            ("running_mean", &mut self.running_mean),
            ("running_var", &mut self.running_var),
        ]
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let channels = self.channels();
        let (batch, spatial) = layout(input.shape(), channels)?;
        let count = batch * spatial;
        let x = input.data();
        let mut out = Tensor::zeros(input.shape().to_vec());
        let eps = T::of(self.eps);
        let plane = |b: usize, c: usize| (b * channels + c) * spatial..(b * channels + c + 1) * spatial;

        match mode {
            Mode::Infer => {
                for c in 0..channels {
                    let inv = T::one() / (self.running_var.data()[c] + eps).sqrt();
                    let (mu, g, be) = (self.running_mean.data()[c], self.gamma.data()[c], self.beta.data()[c]);
                    for b in 0..batch {
                        let r = plane(b, c);
                        for (o, &v) in out.data_mut()[r.clone()].iter_mut().zip(&x[r]) {
                            *o = g * (v - mu) * inv + be;
                        }
                    }
                }
                self.cache = None;
            }
            Mode::Train => {
                if count == 0 {
                    return Err(Error::dim("batchnorm", "training mode needs a non-empty batch"));
                }
                let n = T::of(count as f64);
                let mut xhat = Tensor::zeros(input.shape().to_vec());
                let mut inv_std = vec![T::zero(); channels];
                let m = T::of(self.momentum);
                for c in 0..channels {
                    let mut sum = T::zero();
                    for b in 0..batch {
                        sum = sum + x[plane(b, c)].iter().copied().sum::<T>();
                    }
                    let mean = sum / n;
                    let mut sq = T::zero();
                    for b in 0..batch {
                        sq = sq + x[plane(b, c)].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
                    }
                    let var = sq / n;
                    let inv = T::one() / (var + eps).sqrt();
                    inv_std[c] = inv;
                    let (g, be) = (self.gamma.data()[c], self.beta.data()[c]);
                    for b in 0..batch {
                        let r = plane(b, c);
                        for ((o, h), &v) in out.data_mut()[r.clone()]
                            .iter_mut()
                            .zip(&mut xhat.data_mut()[r.clone()])
                            .zip(&x[r])
                        {
                            *h = (v - mean) * inv;
                            *o = g * *h + be;
                        }
                    }
                    let rm = &mut self.running_mean.data_mut()[c];
                    *rm = m * *rm + (T::one() - m) * mean;
                    let rv = &mut self.running_var.data_mut()[c];
                    *rv = m * *rv + (T::one() - m) * var;
                }
                self.cache = Some(Cache { xhat, inv_std });
            }
        }
        out.ensure_finite("batchnorm")?;
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("batchnorm backward without a training-mode forward".into()))?;
        if d_out.shape() != cache.xhat.shape() {
            return Err(Error::dim(
                "batchnorm backward",
                format!("d_out {:?} vs input {:?}", d_out.shape(), cache.xhat.shape()),
            ));
        }
        let channels = self.channels();
        let (batch, spatial) = layout(d_out.shape(), channels)?;
        let n = T::of((batch * spatial) as f64);
        let dy = d_out.data();
        let xh = cache.xhat.data();
        let mut d_input = Tensor::zeros(d_out.shape().to_vec());
        let mut d_gamma = Tensor::zeros([channels]);
        let mut d_beta = Tensor::zeros([channels]);
        let plane = |b: usize, c: usize| (b * channels + c) * spatial..(b * channels + c + 1) * spatial;
        for c in 0..channels {
            let (mut sum_dy, mut sum_dy_xh) = (T::zero(), T::zero());
            for b in 0..batch {
                let r = plane(b, c);
                for (&g, &h) in dy[r.clone()].iter().zip(&xh[r]) {
                    sum_dy = sum_dy + g;
                    sum_dy_xh = sum_dy_xh + g * h;
                }
            }
            d_gamma.data_mut()[c] = sum_dy_xh;
            d_beta.data_mut()[c] = sum_dy;
            // dx = γ·inv_std/N · (N·dy − Σdy − x̂·Σ(dy·x̂))
            let k = self.gamma.data()[c] * cache.inv_std[c] / n;
            for b in 0..batch {
                let r = plane(b, c);
                for ((d, &g), &h) in d_input.data_mut()[r.clone()].iter_mut().zip(&dy[r.clone()]).zip(&xh[r]) {
                    *d = k * (n * g - sum_dy - h * sum_dy_xh);
                }
            }
        }
        Ok(GradBundle {
            d_input,
            d_params: vec![("gamma", d_gamma), ("beta", d_beta)],
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn training_output_is_standardized() {
        let mut rng = RngStream::new(2);
        let x: Tensor<f64> = rng.sample_normal(3.0, 2.5, [8, 3, 4, 4]).unwrap();
        let mut bn = BatchNorm::new(3);
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..8).flat_map(|b| y.outer(b)[c * 16..(c + 1) * 16].to_vec()).collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() <= 1e-5);
            assert!((var - 1.0).abs() <= 1e-4, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let x = Tensor::new([2, 1], vec![1.0f64, 3.0]).unwrap();
        let mut bn = BatchNorm::new(1);
        bn.forward(&x, Mode::Train).unwrap();
        // mean 2, biased var 1
        assert!((bn.running_mean().data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var().data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn inference_leaves_stats_and_is_repeatable() {
        let mut rng = RngStream::new(4);
        let x: Tensor<f64> = rng.sample_normal(0.0, 1.0, [4, 2, 3, 3]).unwrap();
        let mut bn = BatchNorm::new(2);
        bn.forward(&x, Mode::Train).unwrap();
        let (m, v) = (bn.running_mean().clone(), bn.running_var().clone());
        let a = bn.forward(&x, Mode::Infer).unwrap();
        let b = bn.forward(&x, Mode::Infer).unwrap();
        assert_eq!(a, b);
        assert_eq!(&m, bn.running_mean());
        assert_eq!(&v, bn.running_var());
        assert!(!bn.has_cache());
    }
}
