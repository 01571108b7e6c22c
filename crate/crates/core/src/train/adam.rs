use crate::error::{Error, Result};
use crate::layers::ParamKind;
use crate::model::ParamMut;
use crate::tensor::{Scalar, Tensor};

pub const BETA1: f64 = 0.9;
pub const BETA2: f64 = 0.999;
pub const EPSILON: f64 = 1e-8;

/// Adam with bias correction and coupled L2 weight decay.
///
/// Decay (`g += λ·θ`) applies only to dense and kernelized weight matrices.
/// Kernelized-layer biases are clamped to `>= 0` after every step.
#[derive(Debug, Clone)]
pub struct OptimState<T> {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> OptimState<T> {
    pub fn new(lr: f64, weight_decay: f64) -> Self {
        OptimState {
            lr,
            beta1: BETA1,
            beta2: BETA2,
            eps: EPSILON,
            weight_decay,
            t: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    pub fn step(&mut self, params: &mut [ParamMut<'_, T>], grads: &[Tensor<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::dim(
                "adam",
                format!("{} parameters but {} gradients", params.len(), grads.len()),
            ));
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| Tensor::zeros(p.value.shape().to_vec())).collect();
            self.v = self.m.clone();
        }
        for (p, g) in params.iter().zip(grads) {
            if p.value.shape() != g.shape() {
                return Err(Error::dim(
                    "adam",
                    format!("gradient {:?} for parameter `{}` {:?}", g.shape(), p.name, p.value.shape()),
                ));
            }
            if let Some(bad) = g.data().iter().find(|v| !v.is_finite()) {
                return Err(Error::overflow("gradient", None, bad.as_f64().abs()).at(|| p.name.clone()));
            }
        }
        self.t += 1;
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.t as i32));
        let c2 = T::of(1.0 - self.beta2.powi(self.t as i32));
        let (lr, eps, wd) = (T::of(self.lr), T::of(self.eps), T::of(self.weight_decay));
        let (one, zero) = (T::one(), T::zero());

        for ((p, g), (m, v)) in params.iter_mut().zip(grads).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            let decay = p.kind == ParamKind::Weight && self.weight_decay != 0.0;
            let theta = p.value.data_mut();
            for (((th, &gr), mi), vi) in theta
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                let gr = if decay { gr + wd * *th } else { gr };
                *mi = b1 * *mi + (one - b1) * gr;
                *vi = b2 * *vi + (one - b2) * gr * gr;
                let m_hat = *mi / c1;
                let v_hat = *vi / c2;
                *th = *th - lr * m_hat / (v_hat.sqrt() + eps);
            }
            if p.kind == ParamKind::NonNegBias {
                theta.iter_mut().for_each(|b| *b = b.max(zero));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn one(kind: ParamKind, value: &mut Tensor<f64>) -> Vec<ParamMut<'_, f64>> {
        vec![ParamMut {
            name: "p".into(),
            kind,
            value,
        }]
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut theta = Tensor::full([1], 0.0f64);
        let mut opt = OptimState::new(0.001, 0.0);
        opt.step(&mut one(ParamKind::Weight, &mut theta), &[Tensor::full([1], 1.0)]).unwrap();
        let want = -0.001 / (1.0 + 1e-8);
        assert!((theta.data()[0] - want).abs() <= 1e-15);
        assert!((theta.data()[0] + 0.000999999990).abs() <= 1e-15);
    }

    #[test]
    fn zero_gradient_no_decay_is_noop() {
        let mut theta = Tensor::full([3], 0.7f64);
        let mut opt = OptimState::new(0.001, 0.0);
        for _ in 0..5 {
            opt.step(&mut one(ParamKind::Weight, &mut theta), &[Tensor::zeros([3])]).unwrap();
        }
        assert_eq!(theta.data(), &[0.7; 3]);
    }

    #[test]
    fn decay_touches_only_weights() {
        for (kind, moves) in [
            (ParamKind::Weight, true),
            (ParamKind::Bias, false),
            (ParamKind::NonNegBias, false),
            (ParamKind::Norm, false),
            (ParamKind::ConvWeight, false),
        ] {
            let mut theta = Tensor::full([2], 0.5f64);
            let mut opt = OptimState::new(0.001, 1e-4);
            opt.step(&mut one(kind, &mut theta), &[Tensor::zeros([2])]).unwrap();
            assert_eq!(theta.data()[0] != 0.5, moves, "{kind:?}");
        }
    }

    #[test]
    fn kdl_bias_is_projected() {
        let mut b = Tensor::zeros([1]);
        let mut opt = OptimState::new(0.01, 0.0);
        opt.step(&mut one(ParamKind::NonNegBias, &mut b), &[Tensor::full([1], 1.0)]).unwrap();
        assert_eq!(b.data(), &[0.0]);
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut theta = Tensor::zeros([1]);
        let mut opt = OptimState::new(0.01, 0.0);
        let err = opt
            .step(&mut one(ParamKind::Weight, &mut theta), &[Tensor::full([1], f64::NAN)])
            .unwrap_err();
        assert!(err.is_overflow());
        assert!(err.to_string().contains(" p"), "{err}");
    }
}
