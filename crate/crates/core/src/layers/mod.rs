//! Layers with explicit forward/backward passes.
//!
//! A layer caches what its backward pass needs only when the forward ran in
//! [`Mode::Train`]; backward consumes that cache. Calling backward without it
//! is a state error.

mod activation;
mod batchnorm;
mod conv;
mod dense;
mod dropout;
pub mod gradcheck;
mod kdl;
mod pool;

pub use activation::{softmax_rows, Relu, Softmax};
pub use batchnorm::BatchNorm;
pub use conv::Conv2d;
pub use dense::Dense;
pub use dropout::Dropout;
pub use gradcheck::{grad_check, grad_check_with, CheckEntry, CheckReport};
pub use kdl::KernelDense;
pub use pool::MaxPool;

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Infer,
}

/// How the optimizer treats a parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Dense and kernelized weights; subject to weight decay.
    Weight,
    /// Convolution filters.
    ConvWeight,
    Bias,
    /// Kernelized-layer bias, projected back onto `b >= 0` after each step.
    NonNegBias,
    /// Batch-norm scale and shift.
    Norm,
}

#[derive(Debug, Clone)]
pub struct GradBundle<T> {
    pub d_input: Tensor<T>,
    pub d_params: Vec<(&'static str, Tensor<T>)>,
}

#[derive(Debug, Clone, Default)]
pub struct Flatten {
    input_shape: Option<Vec<usize>>,
}

impl Flatten {
    pub fn forward<T: Scalar>(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if input.rank() == 0 {
            return Err(Error::dim("flatten", "scalar input"));
        }
        let b = input.shape()[0];
        let rest = input.shape()[1..].iter().product::<usize>();
        self.input_shape = (mode == Mode::Train).then(|| input.shape().to_vec());
        input.clone().reshape([b, rest])
    }

    pub fn backward<T: Scalar>(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let shape = self
            .input_shape
            .take()
            .ok_or_else(|| Error::State("flatten backward without a training-mode forward".into()))?;
        Ok(GradBundle {
            d_input: d_out.clone().reshape(shape)?,
            d_params: Vec::new(),
        })
    }
}

#[derive(Debug, Clone)]
pub enum LayerState<T> {
    Kdl(KernelDense<T>),
    Dense(Dense<T>),
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm<T>),
    Relu(Relu<T>),
    MaxPool(MaxPool<T>),
    Dropout(Dropout<T>),
    Softmax(Softmax<T>),
    Flatten(Flatten),
}

macro_rules! dispatch {
    ($self:expr, $l:ident => $body:expr) => {
        match $self {
            LayerState::Kdl($l) => $body,
            LayerState::Dense($l) => $body,
            LayerState::Conv2d($l) => $body,
            LayerState::BatchNorm($l) => $body,
            LayerState::Relu($l) => $body,
            LayerState::MaxPool($l) => $body,
            LayerState::Dropout($l) => $body,
            LayerState::Softmax($l) => $body,
            LayerState::Flatten($l) => $body,
        }
    };
}

impl<T: Scalar> LayerState<T> {
    pub fn kind(&self) -> &'static str {
        match self {
            LayerState::Kdl(_) => "kdl",
            LayerState::Dense(_) => "dense",
            LayerState::Conv2d(_) => "conv2d",
            LayerState::BatchNorm(_) => "batchnorm",
            LayerState::Relu(_) => "relu",
            LayerState::MaxPool(_) => "maxpool",
            LayerState::Dropout(_) => "dropout",
            LayerState::Softmax(_) => "softmax",
            LayerState::Flatten(_) => "flatten",
        }
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        dispatch!(self, l => l.forward(input, mode))
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        dispatch!(self, l => l.backward(d_out))
    }

    pub fn has_cache(&self) -> bool {
        match self {
            LayerState::Flatten(f) => f.input_shape.is_some(),
            LayerState::Kdl(l) => l.has_cache(),
            LayerState::Dense(l) => l.has_cache(),
            LayerState::Conv2d(l) => l.has_cache(),
            LayerState::BatchNorm(l) => l.has_cache(),
            LayerState::Relu(l) => l.has_cache(),
            LayerState::MaxPool(l) => l.has_cache(),
            LayerState::Dropout(l) => l.has_cache(),
            LayerState::Softmax(l) => l.has_cache(),
        }
    }

    pub fn clear_cache(&mut self) {
        match self {
            LayerState::Flatten(f) => f.input_shape = None,
            LayerState::Kdl(l) => l.clear_cache(),
            LayerState::Dense(l) => l.clear_cache(),
            LayerState::Conv2d(l) => l.clear_cache(),
            LayerState::BatchNorm(l) => l.clear_cache(),
            LayerState::Relu(l) => l.clear_cache(),
            LayerState::MaxPool(l) => l.clear_cache(),
            LayerState::Dropout(l) => l.clear_cache(),
            LayerState::Softmax(l) => l.clear_cache(),
        }
    }

    /// Trainable tensors in a fixed order.
    pub fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor<T>)> {
        match self {
            LayerState::Kdl(l) => l.params(),
            LayerState::Dense(l) => l.params(),
            LayerState::Conv2d(l) => l.params(),
            LayerState::BatchNorm(l) => l.params(),
            _ => Vec::new(),
        }
    }

    pub fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor<T>)> {
        match self {
            LayerState::Kdl(l) => l.params_mut(),
            LayerState::Dense(l) => l.params_mut(),
            LayerState::Conv2d(l) => l.params_mut(),
            LayerState::BatchNorm(l) => l.params_mut(),
            _ => Vec::new(),
        }
    }

    /// Non-trainable state that is persisted with the weights.
    pub fn buffers(&self) -> Vec<(&'static str, &Tensor<T>)> {
        match self {
            LayerState::BatchNorm(l) => l.buffers(),
            _ => Vec::new(),
        }
    }

    pub fn buffers_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            LayerState::BatchNorm(l) => l.buffers_mut(),
            _ => Vec::new(),
        }
    }

    /// Parameters followed by buffers, matching the order of `params()` then `buffers()`.
    pub fn state_mut(&mut self) -> Vec<(&'static str, &mut Tensor<T>)> {
        match self {
            LayerState::BatchNorm(l) => l.state_mut(),
            other => other.params_mut().into_iter().map(|(n, _, t)| (n, t)).collect(),
        }
    }

    pub fn param_count(&self) -> usize {
        self.params().iter().map(|(_, _, t)| t.len()).sum()
    }
}

pub(crate) fn rows_of<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize)> {
    match *t.shape() {
        [b, d] => Ok((b, d)),
        _ => Err(Error::dim(op, format!("expected a B×D batch, got {:?}", t.shape()))),
    }
}

pub(crate) fn col_sums<T: Scalar>(g: &Tensor<T>) -> Tensor<T> {
    let cols = g.shape()[1];
    let mut out = Tensor::zeros([cols]);
    if cols > 0 {
        for row in g.data().chunks_exact(cols) {
            for (o, &v) in out.data_mut().iter_mut().zip(row) {
                *o = *o + v;
            }
        }
    }
    out
}

/// Zeroes `g` wherever the reference activation is not strictly positive.
pub(crate) fn relu_mask_in_place<T: Scalar>(g: &mut Tensor<T>, reference: &Tensor<T>) {
    for (gv, &r) in g.data_mut().iter_mut().zip(reference.data()) {
        if r <= T::zero() {
            *gv = T::zero();
        }
    }
}
