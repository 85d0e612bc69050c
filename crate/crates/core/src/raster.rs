//! 8-bit RGB and grayscale rasters, binary PPM (P6) I/O and the channel
//! split/merge used by the per-channel filters.
//!
//! Storage is row-major with the origin at the top-left corner; `x` grows to
//! the right and `y` grows downward.

use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use thiserror::Error;

/// One RGB sample.
pub type Rgb = [u8; 3];

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error("bad magic number: expected P6, found {0:?}")]
    BadMagic(String),
    #[error("malformed PPM header: {0}")]
    MalformedHeader(String),
    #[error("unsupported maxval {0}, only 255 is accepted")]
    UnsupportedMaxval(u32),
    #[error("pixel data truncated: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("image dimensions must be at least 1x1, got {width}x{height}")]
    ZeroDimensions { width: usize, height: usize },
    #[error("buffer holds {actual} pixels but {width}x{height} needs {expected}")]
    BufferSize {
        width: usize,
        height: usize,
        expected: usize,
        actual: usize,
    },
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
}

fn check_dims(width: usize, height: usize, actual: usize) -> Result<(), RasterError> {
    if width == 0 || height == 0 {
        return Err(RasterError::ZeroDimensions { width, height });
    }
    let expected = width * height;
    if actual != expected {
        return Err(RasterError::BufferSize {
            width,
            height,
            expected,
            actual,
        });
    }
    Ok(())
}

/// A rectangular 8-bit RGB image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct RgbImage {
    width: usize,
    height: usize,
    pixels: Vec<Rgb>,
}

impl RgbImage {
    pub fn from_pixels(width: usize, height: usize, pixels: Vec<Rgb>) -> Result<Self, RasterError> {
        check_dims(width, height, pixels.len())?;
        Ok(Self {
            width,
            height,
            pixels,
        })
    }

    /// Image filled with a single color.
    ///
    /// Panics if either dimension is zero.
    pub fn filled(width: usize, height: usize, color: Rgb) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            pixels: vec![color; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Rgb) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        let mut pixels = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                pixels.push(f(x, y));
            }
        }
        Self {
            width,
            height,
            pixels,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn pixels(&self) -> &[Rgb] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<Rgb> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Rgb {
        self.pixels[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, color: Rgb) {
        self.pixels[y * self.width + x] = color;
    }

    pub fn same_size(&self, other: &RgbImage) -> bool {
        self.width == other.width && self.height == other.height
    }

    /// Encodes the image as binary PPM (`P6`, maxval 255).
    pub fn to_ppm_bytes(&self) -> Vec<u8> {
        let header = format!("P6\n{} {}\n255\n", self.width, self.height);
        let mut out = Vec::with_capacity(header.len() + self.pixels.len() * 3);
        out.extend_from_slice(header.as_bytes());
        for px in &self.pixels {
            out.extend_from_slice(px);
        }
        out
    }

    /// Decodes a binary PPM. Comments (`#` to end of line) are allowed
    /// anywhere in the header.
    pub fn from_ppm_bytes(bytes: &[u8]) -> Result<Self, RasterError> {
        let mut header = HeaderReader { bytes, pos: 0 };
        let magic = header.token()?;
        if magic != "P6" {
            return Err(RasterError::BadMagic(magic));
        }
        let width = header.number("width")?;
        let height = header.number("height")?;
        let maxval = header.number("maxval")?;
        if maxval != 255 {
            return Err(RasterError::UnsupportedMaxval(maxval));
        }
        // Exactly one whitespace byte separates maxval from the raster.
        match bytes.get(header.pos) {
            Some(b) if b.is_ascii_whitespace() => header.pos += 1,
            _ => {
                return Err(RasterError::MalformedHeader(
                    "missing whitespace after maxval".into(),
                ))
            }
        }
        let (width, height) = (width as usize, height as usize);
        if width == 0 || height == 0 {
            return Err(RasterError::ZeroDimensions { width, height });
        }
        let expected = width * height * 3;
        let data = &bytes[header.pos..];
        if data.len() < expected {
            return Err(RasterError::Truncated {
                expected,
                found: data.len(),
            });
        }
        let pixels = data[..expected]
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect();
        Ok(Self {
            width,
            height,
            pixels,
        })
    }
}

struct HeaderReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl HeaderReader<'_> {
    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    if c == b'\n' {
                        break;
                    }
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn token(&mut self) -> Result<String, RasterError> {
        self.skip_space_and_comments();
        let start = self.pos;
        while let Some(&b) = self.bytes.get(self.pos) {
            if b.is_ascii_whitespace() || b == b'#' {
                break;
            }
            self.pos += 1;
        }
        if start == self.pos {
            return Err(RasterError::MalformedHeader("unexpected end of header".into()));
        }
        Ok(String::from_utf8_lossy(&self.bytes[start..self.pos]).into_owned())
    }

    fn number(&mut self, what: &str) -> Result<u32, RasterError> {
        let tok = self.token()?;
        tok.parse()
            .map_err(|_| RasterError::MalformedHeader(format!("invalid {what} {tok:?}")))
    }
}

/// A rectangular 8-bit single-channel image.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct GrayImage {
    width: usize,
    height: usize,
    levels: Vec<u8>,
}

impl GrayImage {
    pub fn from_levels(width: usize, height: usize, levels: Vec<u8>) -> Result<Self, RasterError> {
        check_dims(width, height, levels.len())?;
        Ok(Self {
            width,
            height,
            levels,
        })
    }

    pub fn filled(width: usize, height: usize, level: u8) -> Self {
        assert!(width > 0 && height > 0, "image must be at least 1x1");
        Self {
            width,
            height,
            levels: vec![level; width * height],
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn levels(&self) -> &[u8] {
        &self.levels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.levels[y * self.width + x]
    }

    /// Level at `(x, y)` with coordinates clamped into the image, i.e.
    /// replicate-edge padding.
    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> u8 {
        let cx = x.clamp(0, self.width as isize - 1) as usize;
        let cy = y.clamp(0, self.height as isize - 1) as usize;
        self.levels[cy * self.width + cx]
    }
}

pub fn load_ppm(path: impl AsRef<Path>) -> Result<RgbImage, RasterError> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    RgbImage::from_ppm_bytes(&bytes)
}

pub fn save_ppm(image: &RgbImage, path: impl AsRef<Path>) -> Result<(), RasterError> {
    let path = path.as_ref();
    let io_err = |source| RasterError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut file = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    file.write_all(&image.to_ppm_bytes()).map_err(io_err)?;
    file.flush().map_err(io_err)
}

/// Splits an RGB image into its red, green and blue planes, in that order.
pub fn split_channels(image: &RgbImage) -> (GrayImage, GrayImage, GrayImage) {
    let plane = |c: usize| GrayImage {
        width: image.width,
        height: image.height,
        levels: image.pixels.iter().map(|px| px[c]).collect(),
    };
    (plane(0), plane(1), plane(2))
}

pub fn merge_channels(r: &GrayImage, g: &GrayImage, b: &GrayImage) -> Result<RgbImage, RasterError> {
    for (name, plane) in [("green", g), ("blue", b)] {
        if plane.width != r.width || plane.height != r.height {
            return Err(RasterError::DimensionMismatch(format!(
                "red plane is {}x{} but {name} plane is {}x{}",
                r.width, r.height, plane.width, plane.height
            )));
        }
    }
    let pixels = r
        .levels
        .iter()
        .zip(&g.levels)
        .zip(&b.levels)
        .map(|((&r, &g), &b)| [r, g, b])
        .collect();
    Ok(RgbImage {
        width: r.width,
        height: r.height,
        pixels,
    })
}
