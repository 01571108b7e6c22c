use crate::error::{Error, Result};
use crate::layers::{rows_of, GradBundle, Mode};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Default)]
pub struct Relu<T> {
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Relu<T> {
    pub fn new() -> Self {
        Relu { cache: None }
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = input.map(|v| v.max(T::zero()));
        self.cache = (mode == Mode::Train).then(|| input.clone());
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let input = self
            .cache
            .take()
            .ok_or_else(|| Error::State("relu backward without a training-mode forward".into()))?;
        if input.shape() != d_out.shape() {
            return Err(Error::dim("relu backward", format!("{:?} vs {:?}", d_out.shape(), input.shape())));
        }
        let mut d_input = d_out.clone();
        super::relu_mask_in_place(&mut d_input, &input);
        Ok(GradBundle {
            d_input,
            d_params: Vec::new(),
        })
    }
}

/// Row-wise softmax over the last axis of a `B×C` tensor.
#[derive(Debug, Clone, Default)]
pub struct Softmax<T> {
    cache: Option<Tensor<T>>,
}

pub fn softmax_rows<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let (_, c) = rows_of(input, "softmax")?;
    let mut out = input.clone();
    if c == 0 {
        return Ok(out);
    }
    for row in out.data_mut().chunks_exact_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut z = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            z = z + *v;
        }
        for v in row.iter_mut() {
            *v = *v / z;
        }
    }
    out.ensure_finite("softmax")?;
    Ok(out)
}

impl<T: Scalar> Softmax<T> {
    pub fn new() -> Self {
        Softmax { cache: None }
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out = softmax_rows(input)?;
        self.cache = (mode == Mode::Train).then(|| out.clone());
        Ok(out)
    }

    /// Full Jacobian-vector product `y ⊙ (g − Σ g·y)`.
    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let y = self
            .cache
            .take()
            .ok_or_else(|| Error::State("softmax backward without a training-mode forward".into()))?;
        if y.shape() != d_out.shape() {
            return Err(Error::dim("softmax backward", format!("{:?} vs {:?}", d_out.shape(), y.shape())));
        }
        let c = y.shape()[1];
        let mut d_input = d_out.clone();
        if c > 0 {
            for (d, yr) in d_input.data_mut().chunks_exact_mut(c).zip(y.data().chunks_exact(c)) {
                let dot: T = d.iter().zip(yr).map(|(&g, &p)| g * p).sum();
                for (dv, &p) in d.iter_mut().zip(yr) {
                    *dv = p * (*dv - dot);
                }
            }
        }
        Ok(GradBundle {
            d_input,
            d_params: Vec::new(),
        })
    }
}
