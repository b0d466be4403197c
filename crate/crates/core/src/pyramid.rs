//! Coarse-to-fine stereo pyramid.

use crate::error::{Error, Result};
use crate::image::GrayImage;

/// One scale of the stereo pyramid: level `exp` holds images downsampled by `2^exp`.
#[derive(Debug, Clone)]
pub struct PyramidLevel {
    pub exp: u32,
    pub left: GrayImage,
    pub right: GrayImage,
    /// Horizontal gradient of `left`, row-major.
    pub grad_x: Vec<f64>,
}

impl PyramidLevel {
    pub fn width(&self) -> usize {
        self.left.width()
    }

    pub fn height(&self) -> usize {
        self.left.height()
    }
}

/// Levels ordered from `coarsest_exp` down to `finest_exp`.
#[derive(Debug, Clone)]
pub struct Pyramid {
    levels: Vec<PyramidLevel>,
    coarsest_exp: u32,
    finest_exp: u32,
}

impl Pyramid {
    /// Builds the pyramid by repeated 2x2 box downsampling.
    ///
    /// `min_size` is the patch side length; the coarsest level must hold at
    /// least one patch.
    pub fn build(
        left: &GrayImage,
        right: &GrayImage,
        coarsest_exp: u32,
        finest_exp: u32,
        min_size: usize,
    ) -> Result<Self> {
        if left.dims() != right.dims() {
            return Err(Error::DimensionMismatch {
                left: left.dims(),
                right: right.dims(),
            });
        }
        if finest_exp > coarsest_exp || coarsest_exp > 16 {
            return Err(Error::PyramidRange {
                coarsest: coarsest_exp,
                finest: finest_exp,
            });
        }
        let (cw, ch) = level_dims(left.width(), left.height(), coarsest_exp);
        if cw < min_size || ch < min_size {
            return Err(Error::LevelTooSmall {
                level: coarsest_exp,
                width: cw,
                height: ch,
                patch_size: min_size,
            });
        }

        let mut levels = Vec::with_capacity((coarsest_exp - finest_exp + 1) as usize);
        let mut l = left.clone();
        let mut r = right.clone();
        for exp in 0..=coarsest_exp {
            if exp > 0 {
                l = downsample(&l);
                r = downsample(&r);
            }
            if exp >= finest_exp {
                let grad_x = horizontal_gradient(&l);
                levels.push(PyramidLevel {
                    exp,
                    left: l.clone(),
                    right: r.clone(),
                    grad_x,
                });
            }
        }
        levels.reverse();
        Ok(Self {
            levels,
            coarsest_exp,
            finest_exp,
        })
    }

    pub fn levels(&self) -> &[PyramidLevel] {
        &self.levels
    }

    pub fn level(&self, exp: u32) -> Option<&PyramidLevel> {
        self.levels.iter().find(|l| l.exp == exp)
    }

    pub fn coarsest_exp(&self) -> u32 {
        self.coarsest_exp
    }

    pub fn finest_exp(&self) -> u32 {
        self.finest_exp
    }
}

/// `ceil(w / 2^exp) x ceil(h / 2^exp)`.
pub fn level_dims(width: usize, height: usize, exp: u32) -> (usize, usize) {
    let mut w = width;
    let mut h = height;
    for _ in 0..exp {
        w = w.div_ceil(2);
        h = h.div_ceil(2);
    }
    (w, h)
}

/// Factor-2 box downsample. Border blocks on odd sizes average the pixels
/// that exist; an output pixel is invalid if any source pixel is.
pub fn downsample(img: &GrayImage) -> GrayImage {
    let (w, h) = img.dims();
    let (nw, nh) = (w.div_ceil(2), h.div_ceil(2));
    let mut data = Vec::with_capacity(nw * nh);
    let mut valid = Vec::with_capacity(nw * nh);
    for y in 0..nh {
        let ys = [2 * y, (2 * y + 1).min(h - 1)];
        let ny = if ys[0] == ys[1] { 1 } else { 2 };
        for x in 0..nw {
            let xs = [2 * x, (2 * x + 1).min(w - 1)];
            let nx = if xs[0] == xs[1] { 1 } else { 2 };
            let mut sum = 0.0;
            let mut ok = true;
            for &sy in &ys[..ny] {
                for &sx in &xs[..nx] {
                    sum += img.get(sx, sy);
                    ok &= img.is_valid(sx, sy);
                }
            }
            data.push((sum / (nx * ny) as f64).clamp(0.0, 1.0));
            valid.push(ok);
        }
    }
    GrayImage::with_validity(nw, nh, data, valid).expect("downsampled buffer is consistent")
}

/// Central differences, one-sided at the left/right border.
pub fn horizontal_gradient(img: &GrayImage) -> Vec<f64> {
    let (w, h) = img.dims();
    let data = img.data();
    let mut grad = vec![0.0; w * h];
    if w < 2 {
        return grad;
    }
    for y in 0..h {
        let row = &data[y * w..(y + 1) * w];
        let out = &mut grad[y * w..(y + 1) * w];
        out[0] = row[1] - row[0];
        out[w - 1] = row[w - 1] - row[w - 2];
        for x in 1..w - 1 {
            out[x] = 0.5 * (row[x + 1] - row[x - 1]);
        }
    }
    grad
}
