use crate::error::{Error, Result};
use crate::layers::{GradBundle, Mode, ParamKind};
use crate::rng::RngStream;
use crate::tensor::{col2im, im2col, Scalar, Tensor, Window};

#[derive(Debug, Clone)]
struct Cache<T> {
    input_shape: Vec<usize>,
    cols: Vec<Tensor<T>>,
}

/// 2-D convolution over `B×C×H×W` batches, computed per sample as
/// `W[oc × C·kh·kw] · im2col(x)`.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    weight: Tensor<T>,
    bias: Tensor<T>,
    window: Window,
    cache: Option<Cache<T>>,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(weight: Tensor<T>, bias: Tensor<T>, stride: usize, pad: usize) -> Result<Self> {
        let (oc, kh, kw) = match weight.shape() {
            &[oc, ic, kh, kw] if oc > 0 && ic > 0 && kh > 0 && kw > 0 => (oc, kh, kw),
            s => {
                return Err(Error::dim(
                    "conv2d",
                    format!("weight must be out×in×kh×kw with non-zero dims, got {s:?}"),
                ))
            }
        };
        if bias.shape() != [oc] {
            return Err(Error::dim("conv2d", format!("bias {:?} for {} filters", bias.shape(), oc)));
        }
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be >= 1".into()));
        }
        Ok(Conv2d {
            weight,
            bias,
            window: Window::new(kh, kw, stride, pad),
            cache: None,
        })
    }

    /// He-normal filters with `fan_in = in_ch·kh·kw`, zero bias.
    pub fn he_init(
        in_ch: usize,
        out_ch: usize,
        kernel: (usize, usize),
        stride: usize,
        pad: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel.0 * kernel.1;
        let std = (2.0 / fan_in as f64).sqrt();
        let weight = rng.sample_normal(0.0, std, [out_ch, in_ch, kernel.0, kernel.1])?;
        Self::new(weight, Tensor::zeros([out_ch]), stride, pad)
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn window(&self) -> Window {
        self.window
    }

    pub fn weight(&self) -> &Tensor<T> {
        &self.weight
    }

    pub fn bias(&self) -> &Tensor<T> {
        &self.bias
    }

    pub fn output_shape(&self, input: &[usize]) -> Result<Vec<usize>> {
        match *input {
            [b, c, h, w] if c == self.in_channels() => {
                let (oh, ow) = self.window.output_hw(h, w)?;
                Ok(vec![b, self.out_channels(), oh, ow])
            }
            _ => Err(Error::dim(
                "conv2d",
                format!("expected B×{}×H×W input, got {:?}", self.in_channels(), input),
            )),
        }
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub(crate) fn params(&self) -> Vec<(&'static str, ParamKind, &Tensor<T>)> {
        vec![
            ("weight", ParamKind::ConvWeight, &self.weight),
            ("bias", ParamKind::Bias, &self.bias),
        ]
    }

    pub(crate) fn params_mut(&mut self) -> Vec<(&'static str, ParamKind, &mut Tensor<T>)> {
        vec![
            ("weight", ParamKind::ConvWeight, &mut self.weight),
            ("bias", ParamKind::Bias, &mut self.bias),
        ]
    }

    fn weight_matrix(&self) -> Result<Tensor<T>> {
        let oc = self.out_channels();
        let rest = self.weight.len() / oc;
        self.weight.clone().reshape([oc, rest])
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let out_shape = self.output_shape(input.shape())?;
        let (batch, oc, plane) = (out_shape[0], out_shape[1], out_shape[2] * out_shape[3]);
        let wmat = self.weight_matrix()?;
        let chw = [input.shape()[1], input.shape()[2], input.shape()[3]];
        let mut out = Tensor::zeros(out_shape.clone());
        let mut cols_cache = Vec::with_capacity(if mode == Mode::Train { batch } else { 0 });
        for b in 0..batch {
            let sample = Tensor::new(chw, input.outer(b).to_vec())?;
            let cols = im2col(&sample, self.window)?;
            let y = wmat.matmul(&cols)?;
            let dst = out.outer_mut(b);
            for (c, (dst_plane, src_plane)) in dst
                .chunks_exact_mut(plane)
                .zip(y.data().chunks_exact(plane))
                .enumerate()
            {
                let bias = self.bias.data()[c];
                for (d, &s) in dst_plane.iter_mut().zip(src_plane) {
                    *d = s + bias;
                }
            }
            if mode == Mode::Train {
                cols_cache.push(cols);
            }
        }
        debug_assert_eq!(out.len(), batch * oc * plane);
        out.ensure_finite("conv2d")?;
        self.cache = match mode {
            Mode::Train => Some(Cache {
                input_shape: input.shape().to_vec(),
                cols: cols_cache,
            }),
            Mode::Infer => None,
        };
        Ok(out)
    }

    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("conv2d backward without a training-mode forward".into()))?;
        let out_shape = self.output_shape(&cache.input_shape)?;
        if d_out.shape() != out_shape {
            return Err(Error::dim(
                "conv2d backward",
                format!("d_out {:?} vs output {:?}", d_out.shape(), out_shape),
            ));
        }
        let (oc, plane) = (out_shape[1], out_shape[2] * out_shape[3]);
        let chw = [cache.input_shape[1], cache.input_shape[2], cache.input_shape[3]];
        let wmat_t = self.weight_matrix()?.transpose()?;
        let mut d_input = Tensor::zeros(cache.input_shape.clone());
        let mut d_wmat = Tensor::zeros([oc, self.weight.len() / oc]);
        let mut d_bias = Tensor::zeros([oc]);
        for (b, cols) in cache.cols.iter().enumerate() {
            let dy = Tensor::new([oc, plane], d_out.outer(b).to_vec())?;
            for (db, row) in d_bias.data_mut().iter_mut().zip(dy.data().chunks_exact(plane)) {
                *db = *db + row.iter().copied().sum::<T>();
            }
            let dw = dy.matmul(&cols.transpose()?)?;
            for (a, &v) in d_wmat.data_mut().iter_mut().zip(dw.data()) {
                *a = *a + v;
            }
            let dcols = wmat_t.matmul(&dy)?;
            let dx = col2im(&dcols, chw, self.window)?;
            d_input.outer_mut(b).copy_from_slice(dx.data());
        }
        let d_weight = d_wmat.reshape(self.weight.shape().to_vec())?;
        Ok(GradBundle {
            d_input,
            d_params: vec![("weight", d_weight), ("bias", d_bias)],
        })
    }
}
