//! Dense per-pixel scalar maps with a validity mask.

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

/// Per-pixel disparity in pixels of the field's own resolution.
pub type DisparityField = Field;
/// Per-pixel fused probability in `[0, 1]`.
pub type ProbabilityField = Field;

impl Field {
    /// All pixels invalid, values zero.
    pub fn invalid(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![0.0; width * height],
            valid: vec![false; width * height],
        }
    }

    /// All pixels valid with the given value.
    pub fn filled(width: usize, height: usize, value: f64) -> Self {
        Self {
            width,
            height,
            values: vec![value; width * height],
            valid: vec![true; width * height],
        }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> Option<f64>) -> Self {
        let mut field = Self::invalid(width, height);
        for y in 0..height {
            for x in 0..width {
                if let Some(v) = f(x, y) {
                    field.set(x, y, v);
                }
            }
        }
        field
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.width + x;
        self.values[i] = v;
        self.valid[i] = true;
    }

    #[inline]
    pub fn invalidate_index(&mut self, i: usize) {
        self.valid[i] = false;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    /// Values with invalid pixels replaced by `sentinel`.
    pub fn with_sentinel(&self, sentinel: f64) -> Vec<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .map(|(&v, &ok)| if ok { v } else { sentinel })
            .collect()
    }

    /// Nearest-neighbour upsample to `width x height` by integer `factor`,
    /// multiplying valid values by `scale`.
    pub fn upsample(&self, factor: usize, width: usize, height: usize, scale: f64) -> Field {
        let mut out = Field::invalid(width, height);
        for y in 0..height {
            let sy = (y / factor).min(self.height - 1);
            for x in 0..width {
                let sx = (x / factor).min(self.width - 1);
                if let Some(v) = self.get(sx, sy) {
                    out.set(x, y, v * scale);
                }
            }
        }
        out
    }
}
