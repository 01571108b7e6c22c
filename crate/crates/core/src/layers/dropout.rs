use crate::error::{Error, Result};
use crate::layers::{GradBundle, Mode};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// Inverted dropout: in training, drops each element with probability `p`
/// and scales survivors by `1/(1-p)`. Identity at inference.
#[derive(Debug, Clone)]
pub struct Dropout<T> {
    p: f64,
    rng: RngStream,
    cache: Option<Tensor<T>>,
}

impl<T: Scalar> Dropout<T> {
    pub fn new(p: f64, rng: RngStream) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Parameter(format!("dropout rate must be in [0, 1), got {p}")));
        }
        Ok(Dropout { p, rng, cache: None })
    }

    pub fn rate(&self) -> f64 {
        self.p
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        if mode == Mode::Infer {
            self.cache = None;
            return Ok(input.clone());
        }
        let mask = if self.p == 0.0 {
            Tensor::full(input.shape().to_vec(), T::one())
        } else {
            let keep = T::of(1.0 / (1.0 - self.p));
            let p = self.p;
            let rng = &mut self.rng;
            Tensor::from_fn(input.shape().to_vec(), |_| if rng.bernoulli(p) { T::zero() } else { keep })
        };
        let out = Tensor::new(
            input.shape().to_vec(),
            input.data().iter().zip(mask.data()).map(|(&x, &m)| x * m).collect(),
        )?;
        self.cache = Some(mask);
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let mask = self
            .cache
            .take()
            .ok_or_else(|| Error::State("dropout backward without a training-mode forward".into()))?;
        if mask.shape() != d_out.shape() {
            return Err(Error::dim("dropout backward", format!("{:?} vs {:?}", d_out.shape(), mask.shape())));
        }
        let d_input = Tensor::new(
            d_out.shape().to_vec(),
            d_out.data().iter().zip(mask.data()).map(|(&g, &m)| g * m).collect(),
        )?;
        Ok(GradBundle {
            d_input,
            d_params: Vec::new(),
        })
    }
}
