//! Patch grids, cross-level probability weights and pixel-wise fusion.

use crate::error::{Error, Result};
use crate::field::{DisparityField, Field, ProbabilityField};
use crate::patch::Patch;
use crate::spatial::SpatialMask;

/// Regular lattice of patch centres on one level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchGrid {
    pub level: u32,
    pub size: usize,
    pub stride: usize,
    pub centers: Vec<(f64, f64)>,
}

/// `round_half_even(size * (1 - overlap))`, at least 1.
pub fn grid_stride(size: usize, overlap: f64) -> usize {
    ((size as f64 * (1.0 - overlap)).round_ties_even() as usize).max(1)
}

fn axis_origins(extent: usize, size: usize, stride: usize) -> Vec<usize> {
    let last = extent - size;
    let mut v: Vec<usize> = (0..=last).step_by(stride).collect();
    if *v.last().unwrap() != last {
        v.push(last);
    }
    v
}

/// Tiles a `width x height` level with `size`-pixel patches overlapping by
/// `overlap`. Border patches are clamped so they stay inside the image.
pub fn make_patch_grid(
    level: u32,
    width: usize,
    height: usize,
    size: usize,
    overlap: f64,
) -> Result<PatchGrid> {
    if size == 0 || width < size || height < size {
        return Err(Error::LevelTooSmall {
            level,
            width,
            height,
            patch_size: size,
        });
    }
    if !(0.0..1.0).contains(&overlap) {
        return Err(Error::Config(format!("overlap {overlap} outside [0, 1)")));
    }
    let stride = grid_stride(size, overlap);
    let h = Patch::half_extent(size);
    let xs = axis_origins(width, size, stride);
    let ys = axis_origins(height, size, stride);
    let centers = ys
        .iter()
        .flat_map(|&y| xs.iter().map(move |&x| (x as f64 + h, y as f64 + h)))
        .collect();
    Ok(PatchGrid {
        level,
        size,
        stride,
        centers,
    })
}

/// Share of level `exp` in the multi-scale probability: `2^n / sum_m 2^m`.
pub fn level_weight(exp: u32, levels: &[u32]) -> Result<f64> {
    if levels.is_empty() {
        return Err(Error::EmptyLevelSet);
    }
    if !levels.contains(&exp) {
        return Err(Error::Config(format!("level {exp} not in level set")));
    }
    let total: f64 = levels.iter().map(|&m| 2f64.powi(m as i32)).sum();
    Ok(2f64.powi(exp as i32) / total)
}

/// Adds this level's weighted posterior to the probability inherited from
/// the coarser levels.
#[inline]
pub fn propagate_probability(posterior: f64, inherited: f64, weight: f64) -> f64 {
    inherited + weight * posterior
}

/// One surviving patch as seen by the fusion step.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FusionInput {
    pub center_x: f64,
    pub center_y: f64,
    pub u: f64,
    /// Propagated multi-scale probability.
    pub probability: f64,
    /// Disparity standard deviation, when variance estimation is on.
    pub sigma: Option<f64>,
}

/// Fused maps of one level.
#[derive(Debug, Clone)]
pub struct FusedLevel {
    pub disparity: DisparityField,
    pub probability: ProbabilityField,
    /// `sum_k w_k` per pixel.
    pub weight_sum: Vec<f64>,
    /// `sum_k (w_k / sum w)^2 sigma_k^2` per pixel, when every patch carries a sigma.
    pub variance_sum: Option<Field>,
}

/// Pixel-wise weighted fusion of patch disparities.
///
/// Patch `k` contributes `w_k(x) = P_k * mask(x - c_k)` at every covered pixel;
/// the fused disparity and probability are the `w`-weighted means.
pub fn fuse_level(
    inputs: &[FusionInput],
    mask: &SpatialMask,
    width: usize,
    height: usize,
) -> FusedLevel {
    let n = width * height;
    let mut wsum = vec![0.0; n];
    let mut usum = vec![0.0; n];
    let mut psum = vec![0.0; n];
    let with_var = !inputs.is_empty() && inputs.iter().all(|p| p.sigma.is_some());
    let mut vsum = if with_var { vec![0.0; n] } else { Vec::new() };
    let s = mask.size;
    let h = Patch::half_extent(s);

    for p in inputs {
        let ox = (p.center_x - h).round() as isize;
        let oy = (p.center_y - h).round() as isize;
        let var = p.sigma.map(|s| s * s).unwrap_or(0.0);
        for j in 0..s {
            let y = oy + j as isize;
            if y < 0 || y >= height as isize {
                continue;
            }
            let row = y as usize * width;
            for i in 0..s {
                let x = ox + i as isize;
                if x < 0 || x >= width as isize {
                    continue;
                }
                let w = p.probability * mask.weights[j * s + i];
                let idx = row + x as usize;
                wsum[idx] += w;
                usum[idx] += w * p.u;
                psum[idx] += w * p.probability;
                if with_var {
                    vsum[idx] += w * w * var;
                }
            }
        }
    }

    let mut disparity = Field::invalid(width, height);
    let mut probability = Field::invalid(width, height);
    let mut variance = with_var.then(|| Field::invalid(width, height));
    for i in 0..n {
        let w = wsum[i];
        if w > 0.0 {
            disparity.values[i] = usum[i] / w;
            disparity.valid[i] = true;
            probability.values[i] = (psum[i] / w).clamp(0.0, 1.0);
            probability.valid[i] = true;
            if let Some(v) = variance.as_mut() {
                v.values[i] = vsum[i] / (w * w);
                v.valid[i] = true;
            }
        }
    }
    FusedLevel {
        disparity,
        probability,
        weight_sum: wsum,
        variance_sum: variance,
    }
}

/// Disparity initialisation for the next finer level: nearest-neighbour
/// upsample with values doubled; invalid coarse pixels give 0.
pub fn init_next_level(coarse: &DisparityField, fine_width: usize, fine_height: usize) -> Vec<f64> {
    let mut out = vec![0.0; fine_width * fine_height];
    for y in 0..fine_height {
        let cy = (y / 2).min(coarse.height - 1);
        for x in 0..fine_width {
            let cx = (x / 2).min(coarse.width - 1);
            if let Some(v) = coarse.get(cx, cy) {
                out[y * fine_width + x] = 2.0 * v;
            }
        }
    }
    out
}

/// Pixel index nearest to a (possibly half-integer) patch centre.
#[inline]
pub fn center_pixel(cx: f64, cy: f64, width: usize, height: usize) -> (usize, usize) {
    let x = (cx + 0.5).floor().clamp(0.0, (width - 1) as f64) as usize;
    let y = (cy + 0.5).floor().clamp(0.0, (height - 1) as f64) as usize;
    (x, y)
}
