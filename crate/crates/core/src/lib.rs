//! Kernelized dense layers (KDL) and the small CNN stack around them.
//!
//! A kernelized dense unit replaces the weighted sum `x·w + b` of a standard
//! neuron with a kernel `K(x, w)`, for instance the polynomial `(x·w + b)ⁿ`.
//! With `n = 1` it is exactly a standard dense unit.
//!
//! The crate is self-contained: tensors, layers with hand-written backward
//! passes, a finite-difference gradient checker, a five-block convolutional
//! model with an interchangeable head, Adam with plateau decay and early
//! stopping, affine augmentation, and CSV/synthetic data loading.

pub mod data;
pub mod error;
pub mod kernel;
pub mod layers;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod train;
pub mod weights;

pub use error::{Error, Result};
pub use kernel::{kernel_eval, kernel_grad, KernelGrad, KernelSpec};
pub use layers::{GradBundle, LayerState, Mode, ParamKind};
pub use model::{HeadConfig, HeadType, Model, ModelConfig};
pub use rng::RngStream;
pub use tensor::{Scalar, Tensor};
