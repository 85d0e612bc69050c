//! Noise-reduction filters. RGB images are split into their three planes,
//! each plane is filtered on its own, and the planes are merged back.
//!
//! Borders use replicate-edge padding. Weighted masks round half up after
//! the division and clamp into `[0, 255]`.

use std::fmt;
use std::str::FromStr;

use crate::raster::{merge_channels, split_channels, GrayImage, RgbImage};

/// Square weighted mask with an integer divisor. Weights are listed
/// row-major, top row first, so a 3x3 mask holds `w1..w9` in reading order.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    size: usize,
    weights: Vec<i32>,
    divisor: i32,
}

impl Mask {
    /// Panics unless `divisor > 0`.
    pub fn new3(weights: [[i32; 3]; 3], divisor: i32) -> Self {
        assert!(divisor > 0, "mask divisor must be positive");
        Self {
            size: 3,
            weights: weights.iter().flatten().copied().collect(),
            divisor,
        }
    }

    /// Odd-sized square mask from row-major weights.
    pub fn new(size: usize, weights: Vec<i32>, divisor: i32) -> Self {
        assert!(size % 2 == 1, "mask size must be odd");
        assert_eq!(weights.len(), size * size, "mask needs size*size weights");
        assert!(divisor > 0, "mask divisor must be positive");
        Self {
            size,
            weights,
            divisor,
        }
    }

    /// All-ones 3x3 mask over 9.
    pub fn mean3() -> Self {
        Self::new3([[1; 3]; 3], 9)
    }

    /// All-ones 5x5 mask over 25, for heavier smoothing.
    pub fn mean5() -> Self {
        Self::new(5, vec![1; 25], 25)
    }

    /// `[1 2 1; 2 4 2; 1 2 1] / 16`.
    pub fn gaussian3() -> Self {
        Self::new3([[1, 2, 1], [2, 4, 2], [1, 2, 1]], 16)
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn weights(&self) -> &[i32] {
        &self.weights
    }

    pub fn divisor(&self) -> i32 {
        self.divisor
    }
}

/// `floor(sum / divisor + 1/2)` in exact integer arithmetic, clamped to a level.
#[inline]
fn round_half_up_clamped(sum: i64, divisor: i64) -> u8 {
    (2 * sum + divisor).div_euclid(2 * divisor).clamp(0, 255) as u8
}

/// Centers `mask` on every pixel and replaces it with the weighted sum of
/// its neighborhood divided by the mask divisor.
pub fn apply_mask(image: &GrayImage, mask: &Mask) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let r = (mask.size / 2) as isize;
    let mut out = Vec::with_capacity(w * h);
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut sum = 0i64;
            let mut k = 0;
            for dy in -r..=r {
                for dx in -r..=r {
                    sum += mask.weights[k] as i64 * image.get_clamped(x + dx, y + dy) as i64;
                    k += 1;
                }
            }
            out.push(round_half_up_clamped(sum, mask.divisor as i64));
        }
    }
    GrayImage::from_levels(w, h, out).expect("dimensions preserved")
}

/// 3x3 median: each level becomes the 5th smallest of its 9 neighbors.
pub fn median3(image: &GrayImage) -> GrayImage {
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(w * h);
    let mut window = [0u8; 9];
    for y in 0..h as isize {
        for x in 0..w as isize {
            let mut k = 0;
            for dy in -1..=1 {
                for dx in -1..=1 {
                    window[k] = image.get_clamped(x + dx, y + dy);
                    k += 1;
                }
            }
            window.sort_unstable();
            out.push(window[4]);
        }
    }
    GrayImage::from_levels(w, h, out).expect("dimensions preserved")
}

fn per_channel(image: &RgbImage, f: impl Fn(&GrayImage) -> GrayImage) -> RgbImage {
    let (r, g, b) = split_channels(image);
    merge_channels(&f(&r), &f(&g), &f(&b)).expect("filters preserve dimensions")
}

pub fn mean_filter(image: &RgbImage) -> RgbImage {
    let mask = Mask::mean3();
    per_channel(image, |plane| apply_mask(plane, &mask))
}

pub fn median_filter(image: &RgbImage) -> RgbImage {
    per_channel(image, median3)
}

pub fn gaussian_filter(image: &RgbImage) -> RgbImage {
    let mask = Mask::gaussian3();
    per_channel(image, |plane| apply_mask(plane, &mask))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FilterKind {
    None,
    Mean,
    Median,
    Gaussian,
}

impl FilterKind {
    pub fn apply(self, image: &RgbImage) -> RgbImage {
        match self {
            FilterKind::None => image.clone(),
            FilterKind::Mean => mean_filter(image),
            FilterKind::Median => median_filter(image),
            FilterKind::Gaussian => gaussian_filter(image),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FilterKind::None => "none",
            FilterKind::Mean => "mean",
            FilterKind::Median => "median",
            FilterKind::Gaussian => "gaussian",
        }
    }
}

impl fmt::Display for FilterKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FilterKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "none" => Ok(FilterKind::None),
            "mean" => Ok(FilterKind::Mean),
            "median" => Ok(FilterKind::Median),
            "gaussian" => Ok(FilterKind::Gaussian),
            other => Err(format!(
                "unknown filter kind {other:?} (expected none, mean, median or gaussian)"
            )),
        }
    }
}
