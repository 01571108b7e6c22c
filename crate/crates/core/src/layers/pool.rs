use crate::error::{Error, Result};
use crate::layers::{GradBundle, Mode};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
struct Cache {
    input_shape: Vec<usize>,
    argmax: Vec<usize>,
}

/// Max pooling over `B×C×H×W`; odd trailing rows/columns are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool<T> {
    size: usize,
    stride: usize,
    cache: Option<Cache>,
    _t: std::marker::PhantomData<T>,
}

impl<T: Scalar> Default for MaxPool<T> {
    fn default() -> Self {
        Self::new(2, 2).expect("2x2 pooling is valid")
    }
}

impl<T: Scalar> MaxPool<T> {
    pub fn new(size: usize, stride: usize) -> Result<Self> {
        if size == 0 || stride == 0 {
            return Err(Error::Parameter("pool size and stride must be >= 1".into()));
        }
        Ok(MaxPool {
            size,
            stride,
            cache: None,
            _t: std::marker::PhantomData,
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn output_hw(&self, h: usize, w: usize) -> (usize, usize) {
        let f = |d: usize| if d < self.size { 0 } else { (d - self.size) / self.stride + 1 };
        (f(h), f(w))
    }

    pub(crate) fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub(crate) fn clear_cache(&mut self) {
        self.cache = None;
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        let (b, c, h, w) = match *input.shape() {
            [b, c, h, w] => (b, c, h, w),
            _ => return Err(Error::dim("maxpool", format!("expected B×C×H×W, got {:?}", input.shape()))),
        };
        let (oh, ow) = self.output_hw(h, w);
        if oh == 0 || ow == 0 {
            return Err(Error::dim(
                "maxpool",
                format!("{h}x{w} input is smaller than the {0}x{0} window", self.size),
            ));
        }
        let x = input.data();
        let mut out = Vec::with_capacity(b * c * oh * ow);
        let mut argmax = Vec::with_capacity(out.capacity());
        for plane in 0..b * c {
            let base = plane * h * w;
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut best = base + oy * self.stride * w + ox * self.stride;
                    for i in 0..self.size {
                        for j in 0..self.size {
                            let idx = base + (oy * self.stride + i) * w + ox * self.stride + j;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    argmax.push(best);
                }
            }
        }
        self.cache = (mode == Mode::Train).then(|| Cache {
            input_shape: input.shape().to_vec(),
            argmax,
        });
        Tensor::new([b, c, oh, ow], out)
    }

    /// Routes each output gradient to the input position that won the max.
    pub fn backward(&mut self, d_out: &Tensor<T>) -> Result<GradBundle<T>> {
        let cache = self
            .cache
            .take()
            .ok_or_else(|| Error::State("maxpool backward without a training-mode forward".into()))?;
        if d_out.len() != cache.argmax.len() {
            return Err(Error::dim(
                "maxpool backward",
                format!("d_out {:?} does not match the pooled output", d_out.shape()),
            ));
        }
        let mut d_input = Tensor::zeros(cache.input_shape);
        let d = d_input.data_mut();
        for (&idx, &g) in cache.argmax.iter().zip(d_out.data()) {
            d[idx] = d[idx] + g;
        }
        Ok(GradBundle {
            d_input,
            d_params: Vec::new(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::RngStream;

    #[test]
    fn two_by_two_max() {
        let mut p = MaxPool::<f64>::default();
        let y = p.forward(&Tensor::new([1, 1, 2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(), Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[1, 1, 1, 1]);
        assert_eq!(y.data(), &[4.0]);
    }

    #[test]
    fn odd_sizes_floor() {
        let mut p = MaxPool::<f64>::default();
        let y = p.forward(&Tensor::zeros([2, 3, 5, 7]), Mode::Infer).unwrap();
        assert_eq!(y.shape(), &[2, 3, 2, 3]);
    }

    #[test]
    fn backward_conserves_gradient_mass() {
        let mut rng = RngStream::new(8);
        let x: Tensor<f64> = rng.sample_normal(0.0, 1.0, [2, 2, 6, 6]).unwrap();
        let mut p = MaxPool::default();
        let y = p.forward(&x, Mode::Train).unwrap();
        let g: Tensor<f64> = rng.sample_normal(0.0, 1.0, y.shape().to_vec()).unwrap();
        let d = p.backward(&g).unwrap();
        assert!((d.d_input.sum() - g.sum()).abs() < 1e-12);
        assert_eq!(d.d_input.data().iter().filter(|&&v| v != 0.0).count(), g.len());
    }
}
