//! Dense row-major tensors and the handful of kernels the layers are built on:
//! matrix multiplication, transposition, and the `im2col` / `col2im` pair
//! that turns convolution into a matrix product.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::OnceLock;

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point element type. `f32` is used for training, `f64` for
/// gradient checks.
pub trait Scalar:
    Float + FromPrimitive + ToPrimitive + Default + Debug + Display + Sum + Send + Sync + 'static
{
    const NAME: &'static str;

    fn of(v: f64) -> Self;

    fn as_f64(self) -> f64;
}

impl Scalar for f32 {
    const NAME: &'static str = "f32";

    fn of(v: f64) -> Self {
        v as f32
    }

    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    const NAME: &'static str = "f64";

    fn of(v: f64) -> Self {
        v
    }

    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::dim(
                "tensor",
                format!("shape {:?} needs {} elements, got {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    pub fn from_fn(shape: impl Into<Vec<usize>>, mut f: impl FnMut(usize) -> T) -> Self {
        let shape = shape.into();
        let n = shape.iter().product();
        Tensor {
            shape,
            data: (0..n).map(&mut f).collect(),
        }
    }

    /// Builds a 2-D tensor from nested rows. Panics on ragged input.
    pub fn from_rows(rows: &[&[T]]) -> Self {
        let cols = rows.first().map_or(0, |r| r.len());
        assert!(rows.iter().all(|r| r.len() == cols), "ragged rows");
        Tensor {
            shape: vec![rows.len(), cols],
            data: rows.iter().flat_map(|r| r.iter().copied()).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::dim(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape, shape),
            ));
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::of(v.as_f64())).collect(),
        }
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// Slice of the `i`-th entry along the leading axis.
    pub fn outer(&self, i: usize) -> &[T] {
        let stride = self.data.len() / self.shape[0].max(1);
        &self.data[i * stride..(i + 1) * stride]
    }

    pub fn outer_mut(&mut self, i: usize) -> &mut [T] {
        let stride = self.data.len() / self.shape[0].max(1);
        &mut self.data[i * stride..(i + 1) * stride]
    }

    /// Errors if any element is NaN or infinite.
    pub fn ensure_finite(&self, op: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(Error::overflow(op, None, self.data[i].as_f64().abs())
                .at(|| format!("element {i}"))),
        }
    }

    fn dims2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::dim(op, format!("expected a matrix, got shape {:?}", self.shape))),
        }
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.dims2("transpose")?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::new([c, r], out)
    }

    /// `self[M×K] · rhs[K×N]`. Each output element accumulates over `k` in
    /// ascending order starting from zero, so the result matches a naive
    /// triple loop exactly.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.dims2("matmul")?;
        let (k2, n) = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dimensions differ: {:?} · {:?}", self.shape, rhs.shape),
            ));
        }
        let mut out = vec![T::zero(); m * n];
        matmul_into(&self.data, &rhs.data, &mut out, m, k, n);
        let out = Tensor::new([m, n], out)?;
        out.ensure_finite("matmul")?;
        Ok(out)
    }
}

static NUM_THREADS: OnceLock<AtomicUsize> = OnceLock::new();

fn thread_setting() -> &'static AtomicUsize {
    NUM_THREADS.get_or_init(|| {
        let n = std::env::var("KDL_NUM_THREADS")
            .ok()
            .and_then(|v| v.trim().parse::<usize>().ok())
            .filter(|&n| n >= 1)
            .unwrap_or(1);
        AtomicUsize::new(n)
    })
}

/// Worker threads used by [`Tensor::matmul`]. Defaults to `KDL_NUM_THREADS`
/// or 1. Results do not depend on this value.
pub fn num_threads() -> usize {
    thread_setting().load(Ordering::Relaxed)
}

pub fn set_num_threads(n: usize) {
    thread_setting().store(n.max(1), Ordering::Relaxed);
}

fn matmul_rows<T: Scalar>(a: &[T], b: &[T], out: &mut [T], k: usize, n: usize) {
    for (a_row, c_row) in a.chunks_exact(k).zip(out.chunks_exact_mut(n)) {
        for (kk, &aik) in a_row.iter().enumerate() {
            let b_row = &b[kk * n..(kk + 1) * n];
            for (c, &bkj) in c_row.iter_mut().zip(b_row) {
                *c = *c + aik * bkj;
            }
        }
    }
}

pub(crate) fn matmul_into<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    if m == 0 || n == 0 {
        return;
    }
    if k == 0 {
        out.iter_mut().for_each(|v| *v = T::zero());
        return;
    }
    let threads = num_threads().min(m);
    if threads <= 1 || m * k * n < 1 << 16 {
        matmul_rows(a, b, out, k, n);
        return;
    }
    let rows_per = m.div_ceil(threads);
    std::thread::scope(|s| {
        for (a_chunk, c_chunk) in a.chunks(rows_per * k).zip(out.chunks_mut(rows_per * n)) {
            s.spawn(move || matmul_rows(a_chunk, b, c_chunk, k, n));
        }
    });
}

/// Spatial geometry of a 2-D sliding window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Window {
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: usize,
}

impl Window {
    pub fn new(kh: usize, kw: usize, stride: usize, pad: usize) -> Self {
        Window { kh, kw, stride, pad }
    }

    /// Output size for an `h × w` input, or a dimension error when the
    /// window does not fit.
    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        if self.kh == 0 || self.kw == 0 || self.stride == 0 {
            return Err(Error::dim(
                "im2col",
                format!("window {}x{} stride {} is degenerate", self.kh, self.kw, self.stride),
            ));
        }
        let (ph, pw) = (h + 2 * self.pad, w + 2 * self.pad);
        if self.kh > ph || self.kw > pw {
            return Err(Error::dim(
                "im2col",
                format!("kernel {}x{} larger than padded input {}x{}", self.kh, self.kw, ph, pw),
            ));
        }
        Ok(((ph - self.kh) / self.stride + 1, (pw - self.kw) / self.stride + 1))
    }
}

fn chw<T: Scalar>(t: &Tensor<T>, op: &'static str) -> Result<(usize, usize, usize)> {
    match t.shape()[..] {
        [c, h, w] => Ok((c, h, w)),
        _ => Err(Error::dim(op, format!("expected C×H×W, got {:?}", t.shape()))),
    }
}

/// Unfolds a `C×H×W` image into a `(C·kh·kw) × (out_h·out_w)` matrix whose
/// column `j` is the zero-padded receptive field of output position `j`.
pub fn im2col<T: Scalar>(input: &Tensor<T>, win: Window) -> Result<Tensor<T>> {
    let (c, h, w) = chw(input, "im2col")?;
    let (oh, ow) = win.output_hw(h, w)?;
    let cols = oh * ow;
    let rows = c * win.kh * win.kw;
    let mut out = vec![T::zero(); rows * cols];
    let src = input.data();
    for ch in 0..c {
        for i in 0..win.kh {
            for j in 0..win.kw {
                let row = (ch * win.kh + i) * win.kw + j;
                let dst = &mut out[row * cols..(row + 1) * cols];
                for oy in 0..oh {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let base = (ch * h + y as usize) * w;
                    for ox in 0..ow {
                        let x = (ox * win.stride + j) as isize - win.pad as isize;
                        if x >= 0 && x < w as isize {
                            dst[oy * ow + ox] = src[base + x as usize];
                        }
                    }
                }
            }
        }
    }
    Tensor::new([rows, cols], out)
}

/// Adjoint of [`im2col`]: scatters columns back onto a `C×H×W` image,
/// accumulating where receptive fields overlap.
pub fn col2im<T: Scalar>(cols: &Tensor<T>, chw_shape: [usize; 3], win: Window) -> Result<Tensor<T>> {
    let [c, h, w] = chw_shape;
    let (oh, ow) = win.output_hw(h, w)?;
    let expect = [c * win.kh * win.kw, oh * ow];
    if cols.shape() != expect {
        return Err(Error::dim(
            "col2im",
            format!("columns {:?} do not match image {:?} ({:?})", cols.shape(), chw_shape, expect),
        ));
    }
    let ncols = oh * ow;
    let mut out = vec![T::zero(); c * h * w];
    let src = cols.data();
    for ch in 0..c {
        for i in 0..win.kh {
            for j in 0..win.kw {
                let row = (ch * win.kh + i) * win.kw + j;
                let col = &src[row * ncols..(row + 1) * ncols];
                for oy in 0..oh {
                    let y = (oy * win.stride + i) as isize - win.pad as isize;
                    if y < 0 || y >= h as isize {
                        continue;
                    }
                    let base = (ch * h + y as usize) * w;
                    for ox in 0..ow {
                        let x = (ox * win.stride + j) as isize - win.pad as isize;
                        if x >= 0 && x < w as isize {
                            out[base + x as usize] = out[base + x as usize] + col[oy * ow + ox];
                        }
                    }
                }
            }
        }
    }
    Tensor::new(chw_shape, out)
}
