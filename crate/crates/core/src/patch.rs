//! Mean-normalized square patches.

use crate::error::{Error, Result};
use crate::image::GrayImage;

#[derive(Debug, Clone, PartialEq)]
pub struct Patch {
    pub center_x: f64,
    pub center_y: f64,
    pub size: usize,
    /// Row-major, mean removed; invalid entries hold 0.
    pub template: Vec<f64>,
    pub valid: Vec<bool>,
    pub mean: f64,
    pub valid_fraction: f64,
}

impl Patch {
    /// Offset of the first pixel from the center, `(size - 1) / 2`.
    #[inline]
    pub fn half_extent(size: usize) -> f64 {
        (size as f64 - 1.0) * 0.5
    }

    /// Top-left sample position.
    #[inline]
    pub fn origin(&self) -> (f64, f64) {
        let h = Self::half_extent(self.size);
        (self.center_x - h, self.center_y - h)
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }
}

/// Samples a `size x size` patch centred at `(cx, cy)` with bilinear
/// interpolation and removes the mean of its valid pixels.
pub fn extract_patch(image: &GrayImage, cx: f64, cy: f64, size: usize) -> Result<Patch> {
    let h = Patch::half_extent(size);
    let (x0, y0) = (cx - h, cy - h);
    let n = size * size;
    let mut template = vec![0.0; n];
    let mut valid = vec![false; n];
    let mut sum = 0.0;
    let mut count = 0usize;
    for j in 0..size {
        for i in 0..size {
            if let Some(v) = image.sample(x0 + i as f64, y0 + j as f64) {
                template[j * size + i] = v;
                valid[j * size + i] = true;
                sum += v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(Error::EmptyPatch { x: cx, y: cy });
    }
    let mean = sum / count as f64;
    for (t, &ok) in template.iter_mut().zip(&valid) {
        if ok {
            *t -= mean;
        }
    }
    Ok(Patch {
        center_x: cx,
        center_y: cy,
        size,
        template,
        valid,
        mean,
        valid_fraction: count as f64 / n as f64,
    })
}

/// Bilinear read from a raw row-major field, clamped at the borders.
#[inline]
pub fn sample_field(field: &[f64], width: usize, height: usize, x: f64, y: f64) -> f64 {
    let x = x.clamp(0.0, (width - 1) as f64);
    let y = y.clamp(0.0, (height - 1) as f64);
    let x0 = x.floor() as usize;
    let y0 = y.floor() as usize;
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = x - x0 as f64;
    let fy = y - y0 as f64;
    let top = field[y0 * width + x0] * (1.0 - fx) + field[y0 * width + x1] * fx;
    if fy == 0.0 {
        return top;
    }
    let bottom = field[y1 * width + x0] * (1.0 - fx) + field[y1 * width + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}
