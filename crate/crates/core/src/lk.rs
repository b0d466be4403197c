//! Inverse-compositional Lucas-Kanade search along the epipolar line.
//!
//! The template (left patch) is linearized once, so each patch carries a
//! fixed Jacobian row and a scalar Hessian. Every iteration samples the right
//! image at the current disparity, mean-normalizes the sample against the
//! template and applies `du = sum(J * r) / H` with `r = template - right`.

use crate::error::{Error, Result};
use crate::image::GrayImage;
use crate::patch::{sample_field, Patch};

/// Below this the patch carries no horizontal texture.
pub const HESSIAN_EPSILON: f64 = 1e-8;
/// Updates smaller than this (pixels) terminate the search as converged.
pub const UPDATE_EPSILON: f64 = 1e-2;

/// Early-stopping thresholds in the order `(dp, dr, res)`.
///
/// * `dp`: update magnitude (px) under which a stalled search counts as converged.
/// * `dr`: residual ratio `rms_k / rms_{k-1}` above which the search is stalled.
/// * `res`: RMS residual in 8-bit intensity units under which the fit is exact enough.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EarlyStop {
    pub update: f64,
    pub ratio: f64,
    pub residual: f64,
}

impl Default for EarlyStop {
    fn default() -> Self {
        Self {
            update: 0.05,
            ratio: 0.95,
            residual: 0.10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SearchParams {
    pub max_iterations: usize,
    pub early_stop: EarlyStop,
    /// Minimum fraction of the template's valid pixels that must have a
    /// valid right-image sample.
    pub min_overlap: f64,
}

impl Default for SearchParams {
    fn default() -> Self {
        Self {
            max_iterations: 12,
            early_stop: EarlyStop::default(),
            min_overlap: 0.75,
        }
    }
}

/// A patch prepared for inverse search.
#[derive(Debug, Clone)]
pub struct PatchSystem {
    pub patch: Patch,
    /// Horizontal gradient at each template pixel (0 where invalid).
    pub jacobian: Vec<f64>,
    pub hessian: f64,
    pub level: u32,
}

/// Outcome of one patch search.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LkResult {
    pub u: f64,
    pub converged: bool,
    pub iterations: usize,
    /// Mean squared residual at the last evaluated disparity.
    pub final_residual: f64,
    pub last_update: f64,
}

/// Mean-normalized residual statistics of a patch against the right image.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResidualEval {
    pub mse: f64,
    pub sum_jr: f64,
    pub hessian: f64,
    pub count: usize,
}

/// Samples the gradient field at the patch pixels and sums its squares.
///
/// Fails with [`Error::DegeneratePatch`] when the Hessian is below
/// [`HESSIAN_EPSILON`].
pub fn precompute_patch_system(
    patch: Patch,
    grad_x: &[f64],
    width: usize,
    height: usize,
    level: u32,
) -> Result<PatchSystem> {
    let system = build_patch_system(patch, grad_x, width, height, level);
    if system.is_degenerate() {
        return Err(Error::DegeneratePatch {
            hessian: system.hessian,
        });
    }
    Ok(system)
}

/// Like [`precompute_patch_system`] but keeps degenerate systems.
pub fn build_patch_system(
    patch: Patch,
    grad_x: &[f64],
    width: usize,
    height: usize,
    level: u32,
) -> PatchSystem {
    let s = patch.size;
    let (ox, oy) = patch.origin();
    let mut jacobian = vec![0.0; s * s];
    let mut hessian = 0.0;
    for j in 0..s {
        for i in 0..s {
            let k = j * s + i;
            if patch.valid[k] {
                let g = sample_field(grad_x, width, height, ox + i as f64, oy + j as f64);
                jacobian[k] = g;
                hessian += g * g;
            }
        }
    }
    PatchSystem {
        patch,
        jacobian,
        hessian,
        level,
    }
}

impl PatchSystem {
    pub fn is_degenerate(&self) -> bool {
        !(self.hessian >= HESSIAN_EPSILON)
    }

    /// Evaluates the mean-normalized residual with the patch displaced by
    /// `u` pixels in the right image.
    ///
    /// Only pixels valid in both the template and the right sample take part;
    /// both sides are re-centred on that common set. Returns `None` when the
    /// common set is smaller than `min_overlap` of the template.
    pub fn residual(&self, right: &GrayImage, u: f64, min_overlap: f64) -> Option<ResidualEval> {
        if let Some(eval) = self.residual_interior(right, u) {
            return Some(eval);
        }
        let s = self.patch.size;
        let (ox, oy) = self.patch.origin();
        let mut n = 0usize;
        let (mut sd, mut sdd, mut sj, mut sjd, mut sjj) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..s {
            let y = oy + j as f64;
            for i in 0..s {
                let k = j * s + i;
                if !self.patch.valid[k] {
                    continue;
                }
                let Some(r) = right.sample(ox + i as f64 + u, y) else {
                    continue;
                };
                let d = self.patch.template[k] - r;
                let g = self.jacobian[k];
                n += 1;
                sd += d;
                sdd += d * d;
                sj += g;
                sjd += g * d;
                sjj += g * g;
            }
        }
        let needed = (min_overlap * self.patch.valid_count() as f64).ceil().max(1.0) as usize;
        if n < needed {
            return None;
        }
        let nf = n as f64;
        let mean_d = sd / nf;
        Some(ResidualEval {
            mse: ((sdd - sd * mean_d) / nf).max(0.0),
            sum_jr: sjd - mean_d * sj,
            hessian: sjj,
            count: n,
        })
    }

    /// Fast path of [`Self::residual`] for a fully valid template whose
    /// displaced footprint lies strictly inside a fully valid right image.
    /// All samples then share the same bilinear weights.
    fn residual_interior(&self, right: &GrayImage, u: f64) -> Option<ResidualEval> {
        let s = self.patch.size;
        if !right.all_valid() || self.patch.valid_count() != s * s {
            return None;
        }
        let (ox, oy) = self.patch.origin();
        let (x, y) = (ox + u, oy);
        let (w, h) = right.dims();
        if !(x >= 0.0 && y >= 0.0) || x + s as f64 >= (w - 1) as f64 || y + (s - 1) as f64 > (h - 1) as f64 {
            return None;
        }
        let (x0, y0) = (x.floor() as usize, y.floor() as usize);
        let (fx, fy) = (x - x0 as f64, y - y0 as f64);
        if fy != 0.0 && y0 + s > h - 1 {
            return None;
        }
        let data = right.data();
        let row = |yy: usize, i: usize| {
            let k = yy * w + x0 + i;
            data[k] + fx * (data[k + 1] - data[k])
        };
        let (mut sd, mut sdd, mut sj, mut sjd, mut sjj) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for j in 0..s {
            for i in 0..s {
                let top = row(y0 + j, i);
                let r = if fy == 0.0 {
                    top
                } else {
                    top + fy * (row(y0 + j + 1, i) - top)
                };
                let k = j * s + i;
                let d = self.patch.template[k] - r;
                let g = self.jacobian[k];
                sd += d;
                sdd += d * d;
                sj += g;
                sjd += g * d;
                sjj += g * g;
            }
        }
        let n = s * s;
        let nf = n as f64;
        let mean_d = sd / nf;
        Some(ResidualEval {
            mse: ((sdd - sd * mean_d) / nf).max(0.0),
            sum_jr: sjd - mean_d * sj,
            hessian: sjj,
            count: n,
        })
    }

    /// Iterates inverse-compositional updates from `u_init`.
    pub fn solve(&self, right: &GrayImage, u_init: f64, params: &SearchParams) -> LkResult {
        let mut u = u_init;
        let mut prev_rms: Option<f64> = None;
        let mut result = LkResult {
            u,
            converged: false,
            iterations: 0,
            final_residual: f64::INFINITY,
            last_update: f64::INFINITY,
        };
        if !u_init.is_finite() {
            return result;
        }
        let stop = params.early_stop;
        for it in 1..=params.max_iterations {
            let Some(eval) = self.residual(right, u, params.min_overlap) else {
                result.converged = false;
                return result;
            };
            result.iterations = it;
            result.final_residual = eval.mse;
            if !(eval.hessian >= HESSIAN_EPSILON) {
                return result;
            }
            let du = eval.sum_jr / eval.hessian;
            if !du.is_finite() {
                return result;
            }
            u += du;
            result.u = u;
            result.last_update = du.abs();

            let rms8 = eval.mse.sqrt() * 255.0;
            let stalled = prev_rms
                .map(|p| p > 0.0 && rms8 / p > stop.ratio && du.abs() < stop.update)
                .unwrap_or(false);
            if du.abs() < UPDATE_EPSILON || rms8 < stop.residual || stalled {
                result.converged = true;
                return result;
            }
            prev_rms = Some(rms8);
        }
        result
    }
}

/// Free-function form of [`PatchSystem::solve`].
pub fn solve_patch_disparity(
    system: &PatchSystem,
    right: &GrayImage,
    u_init: f64,
    params: &SearchParams,
) -> LkResult {
    system.solve(right, u_init, params)
}
