//! Spatial confidence mask: an isotropic Gaussian over patch pixels with unit
//! mixture weights, computed once per run.

use crate::fastexp::fast_exp;
use crate::patch::Patch;

#[derive(Debug, Clone, PartialEq)]
pub struct SpatialMask {
    pub size: usize,
    pub sigma_s: f64,
    /// Row-major, not normalized.
    pub weights: Vec<f64>,
}

impl SpatialMask {
    /// Weight at pixel `(i, j)` of the patch is
    /// `exp(-(dx^2 + dy^2) / (2 sigma_s^2))` with offsets taken from the
    /// geometric patch centre (half-integers for even sizes).
    pub fn new(size: usize, sigma_s: f64) -> Self {
        assert!(size >= 1 && sigma_s > 0.0);
        let h = Patch::half_extent(size);
        let denom = 2.0 * sigma_s * sigma_s;
        let mut weights = Vec::with_capacity(size * size);
        for j in 0..size {
            let dy = j as f64 - h;
            for i in 0..size {
                let dx = i as f64 - h;
                weights.push(fast_exp(-(dx * dx + dy * dy) / denom));
            }
        }
        Self {
            size,
            sigma_s,
            weights,
        }
    }

    /// Equal weights everywhere (sGMM disabled).
    pub fn uniform(size: usize) -> Self {
        Self {
            size,
            sigma_s: f64::INFINITY,
            weights: vec![1.0; size * size],
        }
    }

    #[inline]
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        self.weights[j * self.size + i]
    }
}

pub fn build_spatial_mask(size: usize, sigma_s: f64) -> SpatialMask {
    SpatialMask::new(size, sigma_s)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn odd_center_is_one() {
        let m = SpatialMask::new(5, 2.0);
        assert!((m.weight(2, 2) - 1.0).abs() <= 0.04);
    }

    #[test]
    fn wide_sigma_is_uniform() {
        let m = SpatialMask::new(10, 1e6);
        assert!(m.weights.iter().all(|&w| (w - 1.0).abs() <= 0.04));
    }

    #[test]
    fn corner_weight() {
        let m = SpatialMask::new(10, 4.0);
        let oracle = (-40.5f64 / 32.0).exp();
        assert!((oracle - 0.282).abs() < 1e-3);
        assert!((m.weight(0, 0) - oracle).abs() / oracle <= 0.04);
        assert!((m.weight(9, 9) - oracle).abs() / oracle <= 0.04);
    }

    #[test]
    fn symmetric_and_peaked() {
        for size in [4usize, 7, 10] {
            let m = SpatialMask::new(size, 4.0);
            let n = size - 1;
            for j in 0..size {
                for i in 0..size {
                    let w = m.weight(i, j);
                    assert_eq!(w, m.weight(n - i, j));
                    assert_eq!(w, m.weight(i, n - j));
                    assert_eq!(w, m.weight(j, i));
                }
            }
            let max = m.weights.iter().cloned().fold(0.0, f64::max);
            if size % 2 == 0 {
                let c = size / 2;
                for (i, j) in [(c - 1, c - 1), (c, c - 1), (c - 1, c), (c, c)] {
                    assert_eq!(m.weight(i, j), max);
                }
            } else {
                assert_eq!(m.weight(size / 2, size / 2), max);
            }
        }
    }

    #[test]
    fn radially_decreasing() {
        let m = SpatialMask::new(10, 4.0);
        let h = 4.5;
        let mut pts: Vec<(f64, f64)> = (0..100)
            .map(|k| {
                let (i, j) = (k % 10, k / 10);
                let r2 = (i as f64 - h).powi(2) + (j as f64 - h).powi(2);
                (r2, m.weight(i, j))
            })
            .collect();
        pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
        for w in pts.windows(2) {
            if w[1].0 > w[0].0 {
                assert!(w[1].1 <= w[0].1);
            }
        }
    }
}
