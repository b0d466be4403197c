//! Grayscale rasters with a per-pixel validity mask.

use crate::error::{Error, Result};

/// Row-major grayscale image with intensities in `[0, 1]`.
///
/// Pixels flagged invalid (padding, undistortion holes) never contribute to
/// patch statistics or residuals.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    width: usize,
    height: usize,
    data: Vec<f64>,
    valid: Vec<bool>,
    all_valid: bool,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, data: Vec<f64>) -> Result<Self> {
        let valid = vec![true; data.len()];
        Self::with_validity(width, height, data, valid)
    }

    pub fn with_validity(
        width: usize,
        height: usize,
        data: Vec<f64>,
        valid: Vec<bool>,
    ) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        let n = width * height;
        if data.len() != n || valid.len() != n {
            return Err(Error::BufferSize {
                width,
                height,
                len: data.len().min(valid.len()),
            });
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite() || **v < 0.0 || **v > 1.0) {
            return Err(Error::Format {
                kind: "image",
                msg: format!("intensity {bad} outside [0, 1]"),
            });
        }
        let all_valid = valid.iter().all(|&v| v);
        Ok(Self {
            width,
            height,
            data,
            valid,
            all_valid,
        })
    }

    /// Uniform image, all pixels valid.
    pub fn constant(width: usize, height: usize, value: f64) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    /// Builds an image from a closure evaluated at every integer pixel.
    pub fn from_fn(
        width: usize,
        height: usize,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    /// Interleaved 8-bit RGB to Rec.601 luma in `[0, 1]`.
    pub fn from_rgb8(width: usize, height: usize, rgb: &[u8]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        if rgb.len() != width * height * 3 {
            return Err(Error::BufferSize {
                width,
                height,
                len: rgb.len(),
            });
        }
        let data = rgb
            .chunks_exact(3)
            .map(|px| {
                let luma = 0.299 * px[0] as f64 + 0.587 * px[1] as f64 + 0.114 * px[2] as f64;
                (luma / 255.0).clamp(0.0, 1.0)
            })
            .collect();
        Self::new(width, height, data)
    }

    /// Interleaved 8-bit RGBA; pixels with zero alpha are marked invalid.
    pub fn from_rgba8(width: usize, height: usize, rgba: &[u8]) -> Result<Self> {
        if rgba.len() != width * height * 4 {
            return Err(Error::BufferSize {
                width,
                height,
                len: rgba.len(),
            });
        }
        let rgb: Vec<u8> = rgba
            .chunks_exact(4)
            .flat_map(|px| [px[0], px[1], px[2]])
            .collect();
        let mut img = Self::from_rgb8(width, height, &rgb)?;
        img.valid = rgba.chunks_exact(4).map(|px| px[3] != 0).collect();
        Ok(img)
    }

    pub fn from_gray8(width: usize, height: usize, gray: &[u8]) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::EmptyImage { width, height });
        }
        if gray.len() != width * height {
            return Err(Error::BufferSize {
                width,
                height,
                len: gray.len(),
            });
        }
        Self::new(width, height, gray.iter().map(|&v| v as f64 / 255.0).collect())
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
    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn validity(&self) -> &[bool] {
        &self.valid
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f64 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn is_valid(&self, x: usize, y: usize) -> bool {
        self.valid[y * self.width + x]
    }

    #[inline]
    pub fn all_valid(&self) -> bool {
        self.all_valid
    }

    /// Marks a pixel invalid.
    pub fn invalidate(&mut self, x: usize, y: usize) {
        self.valid[y * self.width + x] = false;
        self.all_valid = false;
    }

    /// Bilinear read at a sub-pixel position.
    ///
    /// Returns `None` outside `[0, w-1] x [0, h-1]` or when any pixel with a
    /// non-zero interpolation weight is invalid.
    #[inline]
    pub fn sample(&self, x: f64, y: f64) -> Option<f64> {
        const EDGE: f64 = 1e-9;
        if !(x >= -EDGE && y >= -EDGE)
            || x > (self.width - 1) as f64 + EDGE
            || y > (self.height - 1) as f64 + EDGE
        {
            return None;
        }
        let x = x.clamp(0.0, (self.width - 1) as f64);
        let y = y.clamp(0.0, (self.height - 1) as f64);
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let row0 = y0 * self.width;
        let top = self.lerp_row(row0, x0, fx)?;
        if fy == 0.0 {
            return Some(top);
        }
        let bottom = self.lerp_row(row0 + self.width, x0, fx)?;
        Some(top + fy * (bottom - top))
    }

    #[inline]
    fn lerp_row(&self, row: usize, x0: usize, fx: f64) -> Option<f64> {
        let i = row + x0;
        if !self.valid[i] {
            return None;
        }
        if fx == 0.0 {
            return Some(self.data[i]);
        }
        if !self.valid[i + 1] {
            return None;
        }
        let a = self.data[i];
        Some(a + fx * (self.data[i + 1] - a))
    }
}

/// Rec.601 luma conversion of an interleaved 8-bit RGB buffer.
pub fn to_grayscale(width: usize, height: usize, rgb: &[u8]) -> Result<GrayImage> {
    GrayImage::from_rgb8(width, height, rgb)
}
