//! Random affine augmentation: rotation, shear, zoom and horizontal flip,
//! composed into one transform about the image centre and applied by
//! inverse mapping with bilinear sampling. Pixels mapped from outside the
//! source image are zero.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AugmentConfig {
    pub rotation_range_deg: f64,
    pub shear_intensity: f64,
    pub zoom_range: f64,
    pub horizontal_flip: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            rotation_range_deg: 20.0,
            shear_intensity: 0.2,
            zoom_range: 0.2,
            horizontal_flip: true,
        }
    }
}

impl AugmentConfig {
    pub fn identity() -> Self {
        AugmentConfig {
            rotation_range_deg: 0.0,
            shear_intensity: 0.0,
            zoom_range: 0.0,
            horizontal_flip: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let vals = [self.rotation_range_deg, self.shear_intensity, self.zoom_range];
        if vals.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::Config(format!("augmentation ranges must be finite and >= 0: {self:?}")));
        }
        if self.zoom_range >= 1.0 {
            return Err(Error::Config("zoom_range must be < 1".into()));
        }
        Ok(())
    }

    /// Draws one transform. Always consumes exactly four values from `rng`.
    pub fn sample(&self, rng: &mut RngStream) -> Affine {
        let r = self.rotation_range_deg;
        let s = self.shear_intensity;
        let z = self.zoom_range;
        let rotation_deg = rng.uniform_range(-r, r);
        let shear = rng.uniform_range(-s, s);
        let zoom = rng.uniform_range(1.0 - z, 1.0 + z);
        let flip = rng.uniform() < 0.5 && self.horizontal_flip;
        Affine {
            rotation_deg,
            shear,
            zoom,
            flip,
        }
    }
}

/// Concrete transform parameters, applied in the order rotation, shear,
/// zoom, flip. Coordinates are (x = column, y = row).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Affine {
    pub rotation_deg: f64,
    pub shear: f64,
    pub zoom: f64,
    pub flip: bool,
}

impl Affine {
    pub const IDENTITY: Affine = Affine {
        rotation_deg: 0.0,
        shear: 0.0,
        zoom: 1.0,
        flip: false,
    };

    /// Forward 2×2 matrix `F·Z·S·R` as `[[a, b], [c, d]]`.
    pub fn matrix(&self) -> [[f64; 2]; 2] {
        let (sin, cos) = self.rotation_deg.to_radians().sin_cos();
        let r = [[cos, -sin], [sin, cos]];
        let s = [[1.0, self.shear], [0.0, 1.0]];
        let z = [[self.zoom, 0.0], [0.0, self.zoom]];
        let f = [[if self.flip { -1.0 } else { 1.0 }, 0.0], [0.0, 1.0]];
        mul(f, mul(z, mul(s, r)))
    }
}

fn mul(a: [[f64; 2]; 2], b: [[f64; 2]; 2]) -> [[f64; 2]; 2] {
    let mut out = [[0.0; 2]; 2];
    for i in 0..2 {
        for j in 0..2 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j];
        }
    }
    out
}

/// Applies `t` to a `C×H×W` image.
pub fn warp<T: Scalar>(image: &Tensor<T>, t: &Affine) -> Result<Tensor<T>> {
    let (c, h, w) = match *image.shape() {
        [c, h, w] => (c, h, w),
        _ => return Err(Error::dim("augment", format!("expected C×H×W, got {:?}", image.shape()))),
    };
    if *t == Affine::IDENTITY {
        return Ok(image.clone());
    }
    let [[a, b], [cc, d]] = t.matrix();
    let det = a * d - b * cc;
    if det.abs() < 1e-12 {
        return Err(Error::Parameter(format!("singular transform {t:?}")));
    }
    let inv = [[d / det, -b / det], [-cc / det, a / det]];
    let (cx, cy) = ((w as f64 - 1.0) / 2.0, (h as f64 - 1.0) / 2.0);

    let mut out = Tensor::zeros([c, h, w]);
    let src = image.data();
    for y in 0..h {
        for x in 0..w {
            let (dx, dy) = (x as f64 - cx, y as f64 - cy);
            let sx = inv[0][0] * dx + inv[0][1] * dy + cx;
            let sy = inv[1][0] * dx + inv[1][1] * dy + cy;
            let (x0, y0) = (sx.floor(), sy.floor());
            let (fx, fy) = (sx - x0, sy - y0);
            let taps = [
                (x0, y0, (1.0 - fx) * (1.0 - fy)),
                (x0 + 1.0, y0, fx * (1.0 - fy)),
                (x0, y0 + 1.0, (1.0 - fx) * fy),
                (x0 + 1.0, y0 + 1.0, fx * fy),
            ];
            for ch in 0..c {
                let plane = &src[ch * h * w..(ch + 1) * h * w];
                let mut acc = 0.0;
                for &(tx, ty, wt) in &taps {
                    if wt == 0.0 || tx < 0.0 || ty < 0.0 || tx >= w as f64 || ty >= h as f64 {
                        continue;
                    }
                    acc += wt * plane[ty as usize * w + tx as usize].as_f64();
                }
                out.data_mut()[(ch * h + y) * w + x] = T::of(acc);
            }
        }
    }
    Ok(out)
}

/// Draws a transform from `cfg` and applies it.
pub fn augment<T: Scalar>(image: &Tensor<T>, cfg: &AugmentConfig, rng: &mut RngStream) -> Result<Tensor<T>> {
    let t = cfg.sample(rng);
    warp(image, &t)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp() -> Tensor<f64> {
        Tensor::from_fn([2, 5, 6], |i| (i as f64 * 0.37).sin())
    }

    #[test]
    fn zero_ranges_are_identity() {
        let img = ramp();
        let mut rng = RngStream::new(3);
        for _ in 0..5 {
            assert_eq!(augment(&img, &AugmentConfig::identity(), &mut rng).unwrap(), img);
        }
    }

    #[test]
    fn flip_twice_restores() {
        let img = ramp();
        let flip = Affine {
            flip: true,
            ..Affine::IDENTITY
        };
        let once = warp(&img, &flip).unwrap();
        assert_ne!(once, img);
        assert_eq!(once.data()[0], img.data()[5]);
        assert_eq!(warp(&once, &flip).unwrap(), img);
    }

    #[test]
    fn quarter_turn_moves_bright_pixel() {
        let (h, w) = (7usize, 7usize);
        let (r, c) = (1usize, 5usize);
        let mut img = Tensor::<f64>::zeros([1, h, w]);
        img.data_mut()[r * w + c] = 1.0;
        let rot = Affine {
            rotation_deg: 90.0,
            ..Affine::IDENTITY
        };
        let out = warp(&img, &rot).unwrap();
        // Independent oracle: (dx, dy) -> (-dy, dx) about the centre.
        let (cx, cy) = ((w - 1) as f64 / 2.0, (h - 1) as f64 / 2.0);
        let (dx, dy) = (c as f64 - cx, r as f64 - cy);
        let (nx, ny) = (-dy + cx, dx + cy);
        let (nr, nc) = (ny.round() as usize, nx.round() as usize);
        assert!((out.data()[nr * w + nc] - 1.0).abs() < 1e-9);
        assert!((out.sum() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn sampling_draws_four_values() {
        let mut a = RngStream::new(8);
        let mut b = RngStream::new(8);
        AugmentConfig::identity().sample(&mut a);
        AugmentConfig::default().sample(&mut b);
        assert_eq!(a.uniform(), b.uniform());
    }

    #[test]
    fn sampled_parameters_respect_ranges() {
        let cfg = AugmentConfig::default();
        let mut rng = RngStream::new(4);
        for _ in 0..1000 {
            let t = cfg.sample(&mut rng);
            assert!(t.rotation_deg.abs() <= 20.0);
            assert!(t.shear.abs() <= 0.2);
            assert!((0.8..=1.2).contains(&t.zoom));
        }
    }
}
