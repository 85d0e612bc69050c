//! RGB to HSI conversion and the per-pixel hue/saturation feature fed to the
//! classifier. Intensity is computed but never used as a feature, which
//! makes the features insensitive to uniform brightness changes.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::raster::{Rgb, RgbImage};

/// Side length of the square image the network consumes.
pub const INPUT_SIDE: usize = 64;
/// Per-pixel features plus one bias entry.
pub const FEATURE_LEN: usize = INPUT_SIDE * INPUT_SIDE + 1;

#[derive(Debug, Error)]
pub enum ColorError {
    #[error("feature extraction needs a {INPUT_SIDE}x{INPUT_SIDE} image, got {width}x{height}")]
    Dimensions { width: usize, height: usize },
}

/// Hue in degrees `[0, 360]`, saturation in percent `[0, 100]`, intensity
/// in `[0, 255]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HsiPixel {
    pub hue: f64,
    pub saturation: f64,
    pub intensity: f64,
}

/// Chromaticity coordinates `(R, G, B) / (R + G + B)`. Black has no
/// chromaticity and maps to the neutral point `(1/3, 1/3, 1/3)`.
pub fn normalize_rgb(px: Rgb) -> (f64, f64, f64) {
    let [r, g, b] = px.map(f64::from);
    let sum = r + g + b;
    if sum == 0.0 {
        return (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
    }
    (r / sum, g / sum, b / sum)
}

pub fn rgb_to_hsi(px: Rgb) -> HsiPixel {
    let (r, g, b) = normalize_rgb(px);
    let num = 0.5 * ((r - g) + (r - b));
    let den = ((r - g) * (r - g) + (r - b) * (g - b)).sqrt();
    // r == g == b: hue is undefined, report 0.
    let h = if den < 1e-12 {
        0.0
    } else {
        let theta = (num / den).clamp(-1.0, 1.0).acos();
        if b <= g {
            theta
        } else {
            2.0 * PI - theta
        }
    };
    let s = (1.0 - 3.0 * r.min(g).min(b)).clamp(0.0, 1.0);
    let i = (px[0] as f64 + px[1] as f64 + px[2] as f64) / (3.0 * 255.0);
    HsiPixel {
        hue: h * 180.0 / PI,
        saturation: s * 100.0,
        intensity: i * 255.0,
    }
}

/// How hue and saturation are combined into one scalar per pixel.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Aggregate {
    /// `(H/360 + S/100) / 2`, in `[0, 1]`.
    Mean,
    /// `H/360 + S/100`, in `[0, 2]`.
    Sum,
    /// `w * H/360 + (1 - w) * S/100` with `w` in `[0, 1]`.
    Weighted(f64),
}

impl Aggregate {
    pub fn combine(self, hsi: HsiPixel) -> f64 {
        let (h, s) = (hsi.hue / 360.0, hsi.saturation / 100.0);
        match self {
            Aggregate::Mean => 0.5 * (h + s),
            Aggregate::Sum => h + s,
            Aggregate::Weighted(w) => w * h + (1.0 - w) * s,
        }
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Aggregate::Mean => f.write_str("mean"),
            Aggregate::Sum => f.write_str("sum"),
            Aggregate::Weighted(w) => write!(f, "weighted:{w}"),
        }
    }
}

impl FromStr for Aggregate {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "mean" => Ok(Aggregate::Mean),
            "sum" => Ok(Aggregate::Sum),
            _ => {
                let w = s
                    .strip_prefix("weighted:")
                    .and_then(|w| w.parse::<f64>().ok())
                    .filter(|w| (0.0..=1.0).contains(w))
                    .ok_or_else(|| {
                        format!("unknown aggregate {s:?} (expected mean, sum or weighted:<0..1>)")
                    })?;
                Ok(Aggregate::Weighted(w))
            }
        }
    }
}

/// HS feature of one pixel under the default mean aggregate.
pub fn hs_feature(px: Rgb) -> f64 {
    Aggregate::Mean.combine(rgb_to_hsi(px))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureParams {
    pub aggregate: Aggregate,
    /// Every per-pixel feature is divided by this.
    pub scale_factor: f64,
    /// Value of the trailing bias input.
    pub bias: f64,
}

impl Default for FeatureParams {
    fn default() -> Self {
        Self {
            aggregate: Aggregate::Mean,
            scale_factor: 64.0,
            bias: 1.0,
        }
    }
}

/// Network input: 4,096 scaled per-pixel features in row-major order
/// followed by the bias entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureVector(Vec<f64>);

impl FeatureVector {
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn bias(&self) -> f64 {
        self.0[self.0.len() - 1]
    }
}

pub fn image_to_features(image: &RgbImage, params: &FeatureParams) -> Result<FeatureVector, ColorError> {
    if image.width() != INPUT_SIDE || image.height() != INPUT_SIDE {
        return Err(ColorError::Dimensions {
            width: image.width(),
            height: image.height(),
        });
    }
    let mut values: Vec<f64> = image
        .pixels()
        .iter()
        .map(|&px| params.aggregate.combine(rgb_to_hsi(px)) / params.scale_factor)
        .collect();
    values.push(params.bias);
    Ok(FeatureVector(values))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn close(a: f64, b: f64) -> bool {
        (a - b).abs() < 1e-9
    }

    #[test]
    fn normalizes_primaries_grays_and_black() {
        assert_eq!(normalize_rgb([255, 0, 0]), (1.0, 0.0, 0.0));
        let third = (1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0);
        assert_eq!(normalize_rgb([90, 90, 90]), third);
        assert_eq!(normalize_rgb([0, 0, 0]), third);
    }

    #[test]
    fn pure_red() {
        let p = rgb_to_hsi([255, 0, 0]);
        assert!(close(p.hue, 0.0) && close(p.saturation, 100.0) && close(p.intensity, 85.0));
    }

    #[test]
    fn pure_green() {
        let p = rgb_to_hsi([0, 255, 0]);
        assert!(close(p.hue, 120.0), "{p:?}");
        assert!(close(p.saturation, 100.0) && close(p.intensity, 85.0));
    }

    #[test]
    fn pure_blue_takes_the_reflex_branch() {
        // b > g: H = 360 - acos(-0.5) = 240
        let p = rgb_to_hsi([0, 0, 255]);
        assert!(close(p.hue, 240.0), "{p:?}");
    }

    #[test]
    fn gray_is_achromatic() {
        let p = rgb_to_hsi([128, 128, 128]);
        assert_eq!((p.hue, p.saturation), (0.0, 0.0));
        assert!(close(p.intensity, 128.0));
        let black = rgb_to_hsi([0, 0, 0]);
        assert_eq!((black.hue, black.saturation, black.intensity), (0.0, 0.0, 0.0));
    }

    #[test]
    fn feature_values() {
        assert_eq!(hs_feature([40, 40, 40]), 0.0);
        assert!(close(hs_feature([255, 0, 0]), 0.5));
        assert!(close(hs_feature([0, 255, 0]), 2.0 / 3.0));
    }

    #[test]
    fn aggregates() {
        let p = rgb_to_hsi([0, 255, 0]);
        assert!(close(Aggregate::Sum.combine(p), 4.0 / 3.0));
        assert!(close(Aggregate::Weighted(1.0).combine(p), 1.0 / 3.0));
        assert!(close(Aggregate::Weighted(0.0).combine(p), 1.0));
        assert_eq!("weighted:0.25".parse::<Aggregate>().unwrap(), Aggregate::Weighted(0.25));
        assert!("weighted:2".parse::<Aggregate>().is_err());
        assert!("max".parse::<Aggregate>().is_err());
    }

    #[test]
    fn achromatic_image_gives_bias_only() {
        let img = RgbImage::filled(64, 64, [77, 77, 77]);
        let fv = image_to_features(&img, &FeatureParams::default()).unwrap();
        assert_eq!(fv.len(), FEATURE_LEN);
        assert!(fv.as_slice()[..4096].iter().all(|&v| v == 0.0));
        assert_eq!(fv.bias(), 1.0);
    }

    #[test]
    fn scale_factor_divides_pixels_not_bias() {
        let img = RgbImage::from_fn(64, 64, |x, y| [(x * 4) as u8, (y * 4) as u8, 30]);
        let one = FeatureParams {
            scale_factor: 1.0,
            ..FeatureParams::default()
        };
        let two = FeatureParams {
            scale_factor: 2.0,
            ..one
        };
        let a = image_to_features(&img, &one).unwrap();
        let b = image_to_features(&img, &two).unwrap();
        for (x, y) in a.as_slice()[..4096].iter().zip(&b.as_slice()[..4096]) {
            assert!(close(*x / 2.0, *y));
        }
        assert_eq!(a.bias(), b.bias());
    }

    #[test]
    fn wrong_size_is_rejected() {
        let img = RgbImage::filled(65, 64, [1, 2, 3]);
        assert!(matches!(
            image_to_features(&img, &FeatureParams::default()),
            Err(ColorError::Dimensions { width: 65, height: 64 })
        ));
    }

    #[test]
    fn lattice_sweep_stays_in_range() {
        for r in (0..=255).step_by(17) {
            for g in (0..=255).step_by(17) {
                for b in (0..=255).step_by(17) {
                    let p = rgb_to_hsi([r as u8, g as u8, b as u8]);
                    assert!((0.0..=360.0).contains(&p.hue), "{r},{g},{b}: {p:?}");
                    assert!((0.0..=100.0).contains(&p.saturation), "{r},{g},{b}: {p:?}");
                    assert!((0.0..=255.0).contains(&p.intensity), "{r},{g},{b}: {p:?}");
                }
            }
        }
    }

    proptest! {
        #[test]
        fn chromaticities_sum_to_one(px in any::<[u8; 3]>()) {
            let (r, g, b) = normalize_rgb(px);
            prop_assert!((r + g + b - 1.0).abs() < 1e-12);
        }

        #[test]
        fn hue_and_saturation_ignore_brightness(px in prop::array::uniform3(0u8..=31), c in 2u32..=8) {
            prop_assume!(px.iter().any(|&v| v > 0));
            let scaled = px.map(|v| (v as u32 * c) as u8);
            let (a, b) = (rgb_to_hsi(px), rgb_to_hsi(scaled));
            prop_assert!((a.hue - b.hue).abs() < 1e-9);
            prop_assert!((a.saturation - b.saturation).abs() < 1e-9);
        }
    }
}
