//! Labeled image datasets: CSV loading, synthetic generators and seeded splits.
//!
//! The CSV format is one image per row, `label,pixels[,usage]`, where
//! `pixels` holds `C·H·W` space-separated integers in `0..=255` and `usage`
//! is one of `Training`, `PublicTest` or `PrivateTest`.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::rng::RngStream;
use crate::tensor::{Scalar, Tensor};

/// The seven expression classes in label order.
pub const FER_CLASSES: [&str; 7] = ["anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    images: Tensor<f32>,
    labels: Vec<usize>,
    num_classes: usize,
    pub class_names: Option<Vec<String>>,
}

impl Dataset {
    /// `images` is `N×C×H×W`; `num_classes` must exceed every label.
    pub fn new(images: Tensor<f32>, labels: Vec<usize>, num_classes: usize) -> Result<Self> {
        if images.rank() != 4 {
            return Err(Error::dim("dataset", format!("images must be N×C×H×W, got {:?}", images.shape())));
        }
        if images.shape()[0] != labels.len() {
            return Err(Error::dim(
                "dataset",
                format!("{} images but {} labels", images.shape()[0], labels.len()),
            ));
        }
        if let Some((row, &l)) = labels.iter().enumerate().find(|(_, &l)| l >= num_classes) {
            return Err(Error::Data {
                row,
                msg: format!("label {l} outside [0, {num_classes})"),
            });
        }
        images.ensure_finite("dataset")?;
        Ok(Dataset {
            images,
            labels,
            num_classes,
            class_names: None,
        })
    }

    pub fn empty(image_shape: [usize; 3], num_classes: usize) -> Self {
        let [c, h, w] = image_shape;
        Dataset {
            images: Tensor::zeros([0, c, h, w]),
            labels: Vec::new(),
            num_classes,
            class_names: None,
        }
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// `[C, H, W]`
    pub fn image_shape(&self) -> [usize; 3] {
        let s = self.images.shape();
        [s[1], s[2], s[3]]
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn images(&self) -> &Tensor<f32> {
        &self.images
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn image(&self, i: usize) -> &[f32] {
        self.images.outer(i)
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// Gathers `indices` into a `B×C×H×W` batch.
    pub fn batch<T: Scalar>(&self, indices: &[usize]) -> (Tensor<T>, Vec<usize>) {
        let [c, h, w] = self.image_shape();
        let per = c * h * w;
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend(self.image(i).iter().map(|&v| T::of(v as f64)));
        }
        let labels = indices.iter().map(|&i| self.labels[i]).collect();
        (Tensor::new([indices.len(), c, h, w], data).expect("batch shape"), labels)
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let (images, labels) = self.batch::<f32>(indices);
        Dataset {
            images,
            labels,
            num_classes: self.num_classes,
            class_names: self.class_names.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DatasetSplit {
    pub train: Dataset,
    pub val: Dataset,
    pub test: Dataset,
}

impl DatasetSplit {
    pub fn get(&self, part: Part) -> &Dataset {
        match part {
            Part::Train => &self.train,
            Part::Val => &self.val,
            Part::Test => &self.test,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Part {
    Train,
    Val,
    Test,
}

impl FromStr for Part {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" | "Training" => Ok(Part::Train),
            "val" | "PublicTest" => Ok(Part::Val),
            "test" | "PrivateTest" => Ok(Part::Test),
            _ => Err(Error::Parameter(format!("unknown split {s:?}; expected train, val or test"))),
        }
    }
}

impl Part {
    pub fn usage_tag(self) -> &'static str {
        match self {
            Part::Train => "Training",
            Part::Val => "PublicTest",
            Part::Test => "PrivateTest",
        }
    }
}

/// Result of [`load_csv`]: a split when the file carries a usage column.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Loaded {
    Single(Dataset),
    Split(DatasetSplit),
}

pub fn load_csv(path: &Path, image_hw: (usize, usize), has_usage: bool) -> Result<Loaded> {
    parse_csv(&fs::read_to_string(path)?, image_hw, has_usage)
}

pub fn parse_csv(text: &str, (h, w): (usize, usize), has_usage: bool) -> Result<Loaded> {
    if h == 0 || w == 0 {
        return Err(Error::Parameter(format!("image size must be non-zero, got {h}x{w}")));
    }
    let mut channels = None;
    let mut rows: [(Vec<f32>, Vec<usize>); 3] = Default::default();
    let mut max_label = None;
    for (i, line) in text.lines().enumerate() {
        let row = i + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if i == 0 && fields[0].trim().parse::<i64>().is_err() {
            continue; // header
        }
        let want = if has_usage { 3 } else { 2 };
        if fields.len() != want {
            return Err(Error::Data {
                row,
                msg: format!("expected {want} comma-separated fields, found {}", fields.len()),
            });
        }
        let label: usize = fields[0].trim().parse().map_err(|_| Error::Data {
            row,
            msg: format!("label {:?} is not a non-negative integer", fields[0]),
        })?;
        let part = if has_usage {
            match fields[2].trim() {
                "Training" => Part::Train,
                "PublicTest" => Part::Val,
                "PrivateTest" => Part::Test,
                other => {
                    return Err(Error::Data {
                        row,
                        msg: format!("unknown usage tag {other:?}"),
                    })
                }
            }
        } else {
            Part::Train
        };
        let dst = &mut rows[part as usize];
        let before = dst.0.len();
        for tok in fields[1].split_whitespace() {
            let v: u8 = tok.parse().map_err(|_| Error::Data {
                row,
                msg: format!("pixel {tok:?} is not an integer in 0..=255"),
            })?;
            dst.0.push(v as f32 / 255.0);
        }
        let count = dst.0.len() - before;
        let c = match count {
            n if n == h * w => 1,
            n if n == 3 * h * w => 3,
            n => {
                return Err(Error::Data {
                    row,
                    msg: format!("{n} pixels, expected {} (grayscale {h}x{w}) or {}", h * w, 3 * h * w),
                })
            }
        };
        if *channels.get_or_insert(c) != c {
            return Err(Error::Data {
                row,
                msg: "mixed grayscale and colour rows".into(),
            });
        }
        dst.1.push(label);
        max_label = max_label.max(Some(label));
    }
    let c = channels.unwrap_or(1);
    let num_classes = max_label.map_or(0, |m| m + 1);
    let build = |(pixels, labels): (Vec<f32>, Vec<usize>)| -> Result<Dataset> {
        let n = labels.len();
        Dataset::new(Tensor::new([n, c, h, w], pixels)?, labels, num_classes)
    };
    let [tr, va, te] = rows;
    if has_usage {
        Ok(Loaded::Split(DatasetSplit {
            train: build(tr)?,
            val: build(va)?,
            test: build(te)?,
        }))
    } else {
        Ok(Loaded::Single(build(tr)?))
    }
}

/// Serializes datasets back to CSV; pixels are written as `round(v·255)`.
/// Each entry's usage tag is emitted when `with_usage` is set.
pub fn to_csv(parts: &[(&Dataset, Part)], with_usage: bool) -> String {
    let mut out = String::from(if with_usage { "emotion,pixels,Usage\n" } else { "emotion,pixels\n" });
    for (ds, part) in parts {
        for i in 0..ds.len() {
            let _ = write!(out, "{},", ds.labels[i]);
            for (j, v) in ds.image(i).iter().enumerate() {
                if j > 0 {
                    out.push(' ');
                }
                let _ = write!(out, "{}", (v.clamp(0.0, 1.0) * 255.0).round() as u8);
            }
            if with_usage {
                let _ = write!(out, ",{}", part.usage_tag());
            }
            out.push('\n');
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SyntheticKind {
    Blobs,
    Spiral,
    CheckerboardImage,
}

impl FromStr for SyntheticKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "blobs" => Ok(SyntheticKind::Blobs),
            "spiral" => Ok(SyntheticKind::Spiral),
            "checkerboard-image" => Ok(SyntheticKind::CheckerboardImage),
            _ => Err(Error::Parameter(format!(
                "unknown synthetic dataset {s:?}; expected blobs, spiral or checkerboard-image"
            ))),
        }
    }
}

/// Side length of `checkerboard-image` samples.
pub const CHECKERBOARD_SIZE: usize = 32;
const BLOB_RADIUS: f64 = 2.0;
const BLOB_SIGMA: f64 = 0.3;
const SPIRAL_ANGLE_SIGMA: f64 = 0.1;

/// Generates `n_per_class` samples of each class, in class order.
///
/// `blobs` and `spiral` yield two raw coordinates per sample as `1×1×2`
/// images. `checkerboard-image` yields `1×32×32` images where the class
/// index, read as a 4-bit mask, selects which quadrants are bright.
pub fn gen_synthetic(kind: SyntheticKind, n_per_class: usize, num_classes: usize, seed: u64) -> Result<Dataset> {
    if n_per_class == 0 || num_classes == 0 {
        return Err(Error::Parameter("n_per_class and num_classes must be >= 1".into()));
    }
    if kind == SyntheticKind::CheckerboardImage && num_classes > 16 {
        return Err(Error::Parameter("checkerboard-image supports at most 16 classes".into()));
    }
    let mut rng = RngStream::new(seed);
    let k = num_classes as f64;
    let mut pixels = Vec::new();
    let mut labels = Vec::new();
    for c in 0..num_classes {
        for i in 0..n_per_class {
            match kind {
                SyntheticKind::Blobs => {
                    let a = 2.0 * PI * c as f64 / k;
                    pixels.push((BLOB_RADIUS * a.cos() + BLOB_SIGMA * rng.standard_normal()) as f32);
                    pixels.push((BLOB_RADIUS * a.sin() + BLOB_SIGMA * rng.standard_normal()) as f32);
                }
                SyntheticKind::Spiral => {
                    let r = i as f64 / n_per_class as f64;
                    let a = 4.0 * PI * r + 2.0 * PI * c as f64 / k + SPIRAL_ANGLE_SIGMA * rng.standard_normal();
                    pixels.push((r * a.cos()) as f32);
                    pixels.push((r * a.sin()) as f32);
                }
                SyntheticKind::CheckerboardImage => {
                    let s = CHECKERBOARD_SIZE;
                    for y in 0..s {
                        for x in 0..s {
                            let quadrant = 2 * (y >= s / 2) as usize + (x >= s / 2) as usize;
                            let base = if c >> quadrant & 1 == 1 { 0.8 } else { 0.2 };
                            let v = (base + 0.1 * rng.standard_normal()).clamp(0.0, 1.0);
                            pixels.push(v as f32);
                        }
                    }
                }
            }
            labels.push(c);
        }
    }
    let n = labels.len();
    let shape = match kind {
        SyntheticKind::CheckerboardImage => [n, 1, CHECKERBOARD_SIZE, CHECKERBOARD_SIZE],
        _ => [n, 1, 1, 2],
    };
    Dataset::new(Tensor::new(shape, pixels)?, labels, num_classes)
}

/// Seeded shuffle of `0..n`, then contiguous train/val/test ranges of sizes
/// `floor(n·train)`, `floor(n·val)` and the remainder.
pub fn split_indices(n: usize, fractions: (f64, f64, f64), seed: u64) -> Result<[Vec<usize>; 3]> {
    let (a, b, c) = fractions;
    if [a, b, c].iter().any(|f| !f.is_finite() || *f < 0.0) || ((a + b + c) - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter(format!(
            "split fractions must be >= 0 and sum to 1, got ({a}, {b}, {c})"
        )));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    RngStream::new(seed).shuffle(&mut idx);
    // The epsilon keeps products like 0.7·10 from flooring to 6.
    let n_train = ((n as f64 * a + 1e-9).floor() as usize).min(n);
    let n_val = ((n as f64 * b + 1e-9).floor() as usize).min(n - n_train);
    let test = idx.split_off(n_train + n_val);
    let val = idx.split_off(n_train);
    Ok([idx, val, test])
}

pub fn split(data: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<DatasetSplit> {
    let [tr, va, te] = split_indices(data.len(), fractions, seed)?;
    Ok(DatasetSplit {
        train: data.subset(&tr),
        val: data.subset(&va),
        test: data.subset(&te),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeros_row(label: usize, n: usize, usage: &str) -> String {
        format!("{label},{},{usage}", vec!["0"; n].join(" "))
    }

    #[test]
    fn zero_image_row() {
        let text = zeros_row(3, 2304, "Training");
        let Loaded::Split(s) = parse_csv(&text, (48, 48), true).unwrap() else {
            panic!()
        };
        assert_eq!(s.train.len(), 1);
        assert_eq!(s.train.labels(), &[3]);
        assert_eq!(s.train.image_shape(), [1, 48, 48]);
        assert!(s.train.image(0).iter().all(|&v| v == 0.0));
        assert!(s.val.is_empty() && s.test.is_empty());
    }

    #[test]
    fn short_row_cites_row() {
        let text = format!("emotion,pixels,Usage\n{}\n{}\n", zeros_row(0, 2304, "Training"), zeros_row(1, 2303, "Training"));
        match parse_csv(&text, (48, 48), true) {
            Err(Error::Data { row, msg }) => {
                assert_eq!(row, 3);
                assert!(msg.contains("2303"));
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn bad_pixel_and_usage_are_data_errors() {
        assert!(matches!(parse_csv("0,1 x 3 4,Training", (2, 2), true), Err(Error::Data { row: 1, .. })));
        assert!(matches!(parse_csv("0,1 2 3 4,Validation", (2, 2), true), Err(Error::Data { row: 1, .. })));
        assert!(matches!(parse_csv("0,1 2 3 256", (2, 2), false), Err(Error::Data { row: 1, .. })));
    }

    #[test]
    fn private_test_only_loads() {
        let text = "0,1 2 3 4,PrivateTest\r\n1,5 6 7 8,PrivateTest\r\n";
        let Loaded::Split(s) = parse_csv(text, (2, 2), true).unwrap() else {
            panic!()
        };
        assert!(s.train.is_empty());
        assert_eq!(s.test.len(), 2);
        assert_eq!(s.test.image(1)[0], 5.0 / 255.0);
    }

    #[test]
    fn colour_rows() {
        let px: Vec<String> = (0..12).map(|v| v.to_string()).collect();
        let Loaded::Single(d) = parse_csv(&format!("2,{}", px.join(" ")), (2, 2), false).unwrap() else {
            panic!()
        };
        assert_eq!(d.image_shape(), [3, 2, 2]);
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut rng = RngStream::new(1);
        let rows: Vec<String> = (0..20)
            .map(|i| {
                let px: Vec<String> = (0..6).map(|_| rng.below(256).to_string()).collect();
                format!("{},{},{}", i % 7, px.join(" "), ["Training", "PublicTest", "PrivateTest"][i % 3])
            })
            .collect();
        let text = format!("emotion,pixels,Usage\n{}\n", rows.join("\n"));
        let Loaded::Split(s) = parse_csv(&text, (2, 3), true).unwrap() else {
            panic!()
        };
        let again = to_csv(&[(&s.train, Part::Train), (&s.val, Part::Val), (&s.test, Part::Test)], true);
        let Loaded::Split(s2) = parse_csv(&again, (2, 3), true).unwrap() else {
            panic!()
        };
        assert_eq!(s, s2);
    }

    #[test]
    fn synthetic_counts_and_determinism() {
        for kind in [SyntheticKind::Blobs, SyntheticKind::Spiral, SyntheticKind::CheckerboardImage] {
            let d = gen_synthetic(kind, 1, 7, 5).unwrap();
            assert_eq!(d.len(), 7);
            let s = gen_synthetic(kind, 13, 3, 5).unwrap();
            assert_eq!(s.class_counts(), vec![13; 3]);
            assert_eq!(s, gen_synthetic(kind, 13, 3, 5).unwrap());
        }
    }

    #[test]
    fn blobs_are_linearly_separable() {
        let d = gen_synthetic(SyntheticKind::Blobs, 200, 2, 11).unwrap();
        // Nearest-centroid oracle with centroids estimated from the data.
        let mut cent = [[0.0f64; 2]; 2];
        for i in 0..d.len() {
            let l = d.labels()[i];
            cent[l][0] += d.image(i)[0] as f64 / 200.0;
            cent[l][1] += d.image(i)[1] as f64 / 200.0;
        }
        let correct = (0..d.len())
            .filter(|&i| {
                let p = d.image(i);
                let dist = |c: [f64; 2]| (p[0] as f64 - c[0]).powi(2) + (p[1] as f64 - c[1]).powi(2);
                (dist(cent[1]) < dist(cent[0])) as usize == d.labels()[i]
            })
            .count();
        assert!(correct as f64 / d.len() as f64 >= 0.99);
    }

    #[test]
    fn split_sizes() {
        let [a, b, c] = split_indices(10, (0.8, 0.1, 0.1), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (8, 1, 1));
        let [a, b, c] = split_indices(10, (1.0, 0.0, 0.0), 3).unwrap();
        assert_eq!((a.len(), b.len(), c.len()), (10, 0, 0));
        assert_eq!(split_indices(10, (0.7, 0.2, 0.1), 9).unwrap(), split_indices(10, (0.7, 0.2, 0.1), 9).unwrap());
        assert!(matches!(split_indices(10, (0.5, 0.2, 0.2), 0), Err(Error::Parameter(_))));
    }
}
