//! Region-of-interest detection by blank-row/column scans, cropping and
//! nearest-neighbor rescaling to the network's fixed input size.

use thiserror::Error;

use crate::color::INPUT_SIDE;
use crate::raster::RgbImage;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoiError {
    #[error("image has no content above blank level {0}")]
    NoContent(u64),
    #[error("rectangle {rect:?} does not fit a {width}x{height} image")]
    OutOfBounds {
        rect: Rect,
        width: usize,
        height: usize,
    },
}

/// Inclusive pixel rectangle: `x1..=x2` by `y1..=y2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Rect {
    pub x1: usize,
    pub y1: usize,
    pub x2: usize,
    pub y2: usize,
}

impl Rect {
    pub fn new(x1: usize, y1: usize, x2: usize, y2: usize) -> Self {
        debug_assert!(x1 <= x2 && y1 <= y2);
        Self { x1, y1, x2, y2 }
    }

    pub fn full(image: &RgbImage) -> Self {
        Self::new(0, 0, image.width() - 1, image.height() - 1)
    }

    pub fn width(&self) -> usize {
        self.x2 - self.x1 + 1
    }

    pub fn height(&self) -> usize {
        self.y2 - self.y1 + 1
    }

    pub fn area(&self) -> usize {
        self.width() * self.height()
    }

    pub fn contains(&self, x: usize, y: usize) -> bool {
        (self.x1..=self.x2).contains(&x) && (self.y1..=self.y2).contains(&y)
    }

    pub fn fits(&self, width: usize, height: usize) -> bool {
        self.x1 <= self.x2 && self.y1 <= self.y2 && self.x2 < width && self.y2 < height
    }

    /// Shifts the rectangle by a non-negative offset.
    pub fn offset(&self, dx: usize, dy: usize) -> Self {
        Self::new(self.x1 + dx, self.y1 + dy, self.x2 + dx, self.y2 + dy)
    }

    pub fn intersection_area(&self, other: &Rect) -> usize {
        let x1 = self.x1.max(other.x1);
        let y1 = self.y1.max(other.y1);
        let x2 = self.x2.min(other.x2);
        let y2 = self.y2.min(other.y2);
        if x1 > x2 || y1 > y2 {
            0
        } else {
            (x2 - x1 + 1) * (y2 - y1 + 1)
        }
    }

    pub fn iou(&self, other: &Rect) -> f64 {
        let inter = self.intersection_area(other);
        inter as f64 / (self.area() + other.area() - inter) as f64
    }
}

fn level_sum(px: [u8; 3]) -> u64 {
    px.iter().map(|&v| v as u64).sum()
}

/// Tight bounding box of every row and column whose summed channel levels
/// exceed `blank_level`.
///
/// Equivalent to scanning inward from each of the four sides and stopping
/// at the first non-blank row or column.
pub fn find_roi(image: &RgbImage, blank_level: u64) -> Result<Rect, RoiError> {
    let (w, h) = (image.width(), image.height());
    let mut rows = vec![0u64; h];
    let mut cols = vec![0u64; w];
    for (row_sum, row) in rows.iter_mut().zip(image.pixels().chunks(w.max(1))) {
        for (col_sum, &px) in cols.iter_mut().zip(row) {
            let s = level_sum(px);
            *row_sum += s;
            *col_sum += s;
        }
    }
    let filled = |s: &u64| *s > blank_level;
    let y1 = rows.iter().position(filled).ok_or(RoiError::NoContent(blank_level))?;
    let y2 = rows.iter().rposition(filled).expect("a filled row exists");
    let x1 = cols.iter().position(filled).ok_or(RoiError::NoContent(blank_level))?;
    let x2 = cols.iter().rposition(filled).expect("a filled column exists");
    Ok(Rect::new(x1, y1, x2, y2))
}

pub fn crop(image: &RgbImage, rect: Rect) -> Result<RgbImage, RoiError> {
    if !rect.fits(image.width(), image.height()) {
        return Err(RoiError::OutOfBounds {
            rect,
            width: image.width(),
            height: image.height(),
        });
    }
    Ok(RgbImage::from_fn(rect.width(), rect.height(), |x, y| {
        image.get(rect.x1 + x, rect.y1 + y)
    }))
}

/// Nearest-neighbor resample to `width x height`; output pixel `(x, y)`
/// reads source `(x * src_w / width, y * src_h / height)`.
pub fn scale_nearest(image: &RgbImage, width: usize, height: usize) -> RgbImage {
    let (sw, sh) = (image.width(), image.height());
    RgbImage::from_fn(width, height, |x, y| image.get(x * sw / width, y * sh / height))
}

pub fn scale_to_64(image: &RgbImage) -> RgbImage {
    scale_nearest(image, INPUT_SIDE, INPUT_SIDE)
}
