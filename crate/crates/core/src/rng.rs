//! Seeded random streams. Every stochastic part of the library (weight init,
//! dropout masks, augmentation, shuffling) draws from an [`RngStream`], so a
//! fixed seed reproduces a run bit for bit.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone)]
pub struct RngStream {
    seed: u64,
    inner: ChaCha8Rng,
}

// splitmix64 finalizer
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

impl RngStream {
    pub fn new(seed: u64) -> Self {
        RngStream {
            seed,
            inner: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Independent stream keyed by `(seed, tags...)`. Does not advance `self`.
    pub fn derive(&self, tags: &[u64]) -> Self {
        let s = tags.iter().fold(mix(self.seed), |acc, &t| mix(acc ^ mix(t)));
        RngStream::new(s)
    }

    pub fn uniform(&mut self) -> f64 {
        self.inner.random::<f64>()
    }

    pub fn uniform_range(&mut self, lo: f64, hi: f64) -> f64 {
        lo + (hi - lo) * self.uniform()
    }

    pub fn bernoulli(&mut self, p: f64) -> bool {
        self.uniform() < p
    }

    pub fn standard_normal(&mut self) -> f64 {
        StandardNormal.sample(&mut self.inner)
    }

    pub fn below(&mut self, n: usize) -> usize {
        self.inner.random_range(0..n)
    }

    /// Fisher–Yates shuffle.
    pub fn shuffle<X>(&mut self, items: &mut [X]) {
        for i in (1..items.len()).rev() {
            let j = self.below(i + 1);
            items.swap(i, j);
        }
    }

    pub fn sample_normal<T: Scalar>(
        &mut self,
        mean: f64,
        stddev: f64,
        shape: impl Into<Vec<usize>>,
    ) -> Result<Tensor<T>> {
        if !stddev.is_finite() || stddev < 0.0 {
            return Err(Error::Parameter(format!(
                "normal stddev must be finite and >= 0, got {stddev}"
            )));
        }
        Ok(Tensor::from_fn(shape, |_| {
            T::of(mean + stddev * self.standard_normal())
        }))
    }
}
