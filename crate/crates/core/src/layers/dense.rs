use crate::error::{Error, Result};
use crate::layers::{col_sums, relu_mask_in_place, rows_of, GradBundle, Mode, ParamKind};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
struct Cache<T> {
    input: Tensor<T>,
    out: Tensor<T>,
}

/// Standard fully connected layer `y = x·Wᵀ + b`, optionally followed by ReLU.
#[derive(Debug, Clone)]
pub struct Dense<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    relu: bool,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Dense<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, relu: bool) -> Result<Self> {
        let units = match weight.shape() {
            [u, d] if *d >= 1 => *u,
            s => return Err(Error::dim("dense", format!("weight must be units×in_dim, got {s:?}"))),
        };
        if bias.shape() != [units] {
            return Err(Error::dim(
                "dense",
                format!("bias shape {:?} does not match {} units", bias.shape(), units),
            ));
        }
        Ok(Dense {
            weight,
            bias,
            relu,
            cache: None,
        })
    }

    pub fn he_init(in_dim: usize, units: usize, relu: bool, rng: &mut RngStream) -> Result<Self> {
        let std = (2.0 / in_dim as f64).sqrt();
        let weight = rng.sample_normal(0.0, std, [units, in_dim])?;
        Self::new(weight, Tensor::zeros([units]), relu)
    }

    pub fn units(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn relu(&self) -> bool {
        self.relu
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor<T>)> {
        vec![
            ("weight", ParamKind::Weight, &self.weight),
            ("bias", ParamKind::Bias, &self.bias),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor<T>)> {
        vec![
            ("weight", ParamKind::Weight, &mut self.weight),
            ("bias", ParamKind::Bias, &mut self.bias),
        ]
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (_, d) = rows_of(input, "dense")?;
        if d != self.in_dim() {
            return Err(Error::dim(
                "dense",
                format!("input {:?} does not match weight {:?}", input.shape(), self.weight.shape()),
            ));
        }
        let units = self.units();
        let mut out = input.matmul(&self.weight.transpose()?)?;
        for row in out.data_mut().chunks_exact_mut(units) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v = *v + b;
            }
        }
        if self.relu {
            out = out.map(|v| v.max(T::zero()));
        }
        out.ensure_finite("dense")?;
        self.cache = match mode {
            Mode::Train => Some(Cache {
                input: input.clone(),
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
            .ok_or_else(|| Error::State("dense backward without a training-mode forward".into()))?;
        if d_out.shape() != cache.out.shape() {
            return Err(Error::dim(
                "dense backward",
                format!("d_out {:?} vs output {:?}", d_out.shape(), cache.out.shape()),
            ));
        }
        let mut g = d_out.clone();
        if self.relu {
            relu_mask_in_place(&mut g, &cache.out);
        }
        let d_input = g.matmul(&self.weight)?;
        let d_weight = g.transpose()?.matmul(&cache.input)?;
        Ok(GradBundle {
            d_input,
            d_params: vec![("weight", d_weight), ("bias", col_sums(&g))],
        })
    }
}
