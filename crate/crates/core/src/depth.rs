//! Disparity to depth, validity filtering and the optional MAP variance
//! estimate.

use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::field::{DisparityField, Field, ProbabilityField};
use crate::posterior::WindowSamples;

/// Disparities at or below this (px) are treated as invalid.
pub const MIN_DISPARITY: f64 = 0.1;
/// Disparity deviation (px) assigned to patches whose window is not Gaussian.
pub const SIGMA_FALLBACK: f64 = 2.0;
/// Largest accepted sum of squared fit residuals.
pub const FIT_RESIDUAL_LIMIT: f64 = 0.1;
/// Windows whose priors spread less than this fraction of their maximum are flat.
pub const FLAT_TOLERANCE: f64 = 1e-2;
pub const GN_ITERATIONS: usize = 10;
pub const GN_INITIAL_SIGMA: f64 = 0.316_227_766_016_837_94; // sqrt(0.1)

/// Rectified pinhole pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraParams {
    /// Focal length in pixels.
    pub focal_length: f64,
    /// Baseline in output depth units.
    pub baseline: f64,
}

impl CameraParams {
    pub fn new(focal_length: f64, baseline: f64) -> Result<Self> {
        if !(focal_length > 0.0 && focal_length.is_finite() && baseline > 0.0 && baseline.is_finite())
        {
            return Err(Error::Calibration(format!(
                "focal length {focal_length} and baseline {baseline} must be positive"
            )));
        }
        Ok(Self {
            focal_length,
            baseline,
        })
    }

    #[inline]
    pub fn fb(&self) -> f64 {
        self.focal_length * self.baseline
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct DepthResult {
    pub width: usize,
    pub height: usize,
    pub depth: Vec<f64>,
    pub valid: Vec<bool>,
    /// Per-pixel depth standard deviation, same units as `depth`.
    pub sigma: Option<Vec<f64>>,
}

impl DepthResult {
    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&v| v).count()
    }

    pub fn as_field(&self) -> Field {
        Field {
            width: self.width,
            height: self.height,
            values: self.depth.clone(),
            valid: self.valid.clone(),
        }
    }

    pub fn sigma_field(&self) -> Option<Field> {
        self.sigma.as_ref().map(|s| Field {
            width: self.width,
            height: self.height,
            values: s.clone(),
            valid: self.valid.clone(),
        })
    }
}

/// `depth = f * b / disparity` on valid pixels with disparity above
/// [`MIN_DISPARITY`].
pub fn disparity_to_depth(disparity: &DisparityField, cam: &CameraParams) -> DepthResult {
    let fb = cam.fb();
    let mut depth = vec![0.0; disparity.values.len()];
    let mut valid = vec![false; disparity.values.len()];
    for (i, (&d, &ok)) in disparity.values.iter().zip(&disparity.valid).enumerate() {
        if ok && d > MIN_DISPARITY && d.is_finite() {
            depth[i] = fb / d;
            valid[i] = true;
        }
    }
    DepthResult {
        width: disparity.width,
        height: disparity.height,
        depth,
        valid,
        sigma: None,
    }
}

/// Inverse of [`disparity_to_depth`].
pub fn depth_to_disparity(depth: &DepthResult, cam: &CameraParams) -> DisparityField {
    let fb = cam.fb();
    Field {
        width: depth.width,
        height: depth.height,
        values: depth
            .depth
            .iter()
            .zip(&depth.valid)
            .map(|(&z, &ok)| if ok { fb / z } else { 0.0 })
            .collect(),
        valid: depth.valid.clone(),
    }
}

/// Drops pixels whose fused probability is below `pixel_threshold`, then
/// removes 4-connected valid regions smaller than `gamma * patch_size^2`.
pub fn filter_validity(
    disparity: &DisparityField,
    probability: &ProbabilityField,
    gamma: f64,
    pixel_threshold: f64,
    patch_size: usize,
) -> DisparityField {
    let mut out = disparity.clone();
    for i in 0..out.values.len() {
        if !(probability.valid[i] && probability.values[i] >= pixel_threshold) {
            out.invalidate_index(i);
        }
    }
    let min_pixels = gamma * (patch_size * patch_size) as f64;
    remove_small_components(&mut out, min_pixels);
    out
}

/// Invalidates 4-connected components with fewer than `min_pixels` pixels.
pub fn remove_small_components(field: &mut Field, min_pixels: f64) {
    let (w, h) = (field.width, field.height);
    let mut label = vec![usize::MAX; w * h];
    let mut queue = VecDeque::new();
    let mut members = Vec::new();
    for start in 0..w * h {
        if !field.valid[start] || label[start] != usize::MAX {
            continue;
        }
        members.clear();
        label[start] = start;
        queue.push_back(start);
        while let Some(i) = queue.pop_front() {
            members.push(i);
            let (x, y) = (i % w, i / w);
            let mut visit = |j: usize| {
                if field.valid[j] && label[j] == usize::MAX {
                    label[j] = start;
                    queue.push_back(j);
                }
            };
            if x > 0 {
                visit(i - 1);
            }
            if x + 1 < w {
                visit(i + 1);
            }
            if y > 0 {
                visit(i - w);
            }
            if y + 1 < h {
                visit(i + w);
            }
        }
        if (members.len() as f64) < min_pixels {
            for &i in &members {
                field.valid[i] = false;
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RejectionReason {
    None,
    ResidualTooLarge,
    NotGaussian,
    Unconverged,
}

/// Gaussian fitted to a patch's window priors.
///
/// `c_k` absorbs the `1 / (sigma sqrt(2 pi))` density factor, so it is a
/// fitted amplitude rather than a calibrated density height.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PatchVariance {
    /// Disparity standard deviation in pixels of the window's level.
    pub sigma_k: f64,
    pub c_k: f64,
    pub accepted: bool,
    pub rejection: RejectionReason,
    /// Sum of squared residuals of the final fit.
    pub fit_residual: f64,
}

impl PatchVariance {
    fn rejected(reason: RejectionReason, c_k: f64, fit_residual: f64) -> Self {
        Self {
            sigma_k: SIGMA_FALLBACK,
            c_k,
            accepted: false,
            rejection: reason,
            fit_residual,
        }
    }

    /// Placeholder for patches whose search did not converge.
    pub fn unconverged() -> Self {
        Self::rejected(RejectionReason::Unconverged, 0.0, f64::INFINITY)
    }
}

fn fit_objective(offsets: &[f64], priors: &[f64], c: f64, sigma: f64) -> f64 {
    offsets
        .iter()
        .zip(priors)
        .map(|(&d, &p)| {
            let r = c * (-(d * d) / (2.0 * sigma * sigma)).exp() - p;
            r * r
        })
        .sum()
}

/// Fits `c * exp(-(u_i - u_k)^2 / (2 sigma^2))` to the window priors by
/// Gauss-Newton on `(c, sigma)`.
///
/// Starts from `c = 1`, `sigma = sqrt(0.1)` and runs exactly
/// [`GN_ITERATIONS`] undamped steps; each 2x2 normal system is solved by
/// Cholesky. Flat windows, an off-centre maximum or a diverging fit reject
/// with [`RejectionReason::NotGaussian`]; a final residual above
/// [`FIT_RESIDUAL_LIMIT`] rejects with [`RejectionReason::ResidualTooLarge`].
/// Rejected patches get `sigma_k = SIGMA_FALLBACK`.
pub fn estimate_patch_variance(samples: &WindowSamples, priors: &[f64], u_k: f64) -> PatchVariance {
    let _ = u_k; // offsets are already relative to u_k
    let (offsets, values): (Vec<f64>, Vec<f64>) = samples
        .offsets
        .iter()
        .zip(&samples.residuals)
        .zip(priors)
        .filter(|((_, r), _)| r.is_some())
        .map(|((&o, _), &p)| (o, p))
        .unzip();
    fit_gaussian(&offsets, &values)
}

/// [`estimate_patch_variance`] on raw `(offset, prior)` pairs. The sample at
/// offset 0 is the centre.
pub fn fit_gaussian(offsets: &[f64], priors: &[f64]) -> PatchVariance {
    let Some(center) = offsets.iter().position(|&o| o == 0.0) else {
        return PatchVariance::rejected(RejectionReason::NotGaussian, 0.0, f64::INFINITY);
    };
    let max = priors.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let min = priors.iter().cloned().fold(f64::INFINITY, f64::min);
    if offsets.len() < 3 || !(max > 0.0) || (max - min) < FLAT_TOLERANCE * max {
        return PatchVariance::rejected(RejectionReason::NotGaussian, 0.0, f64::INFINITY);
    }
    let pc = priors[center];
    if priors
        .iter()
        .enumerate()
        .any(|(i, &p)| i != center && p >= pc)
    {
        return PatchVariance::rejected(RejectionReason::NotGaussian, 0.0, f64::INFINITY);
    }

    let mut c = 1.0;
    let mut sigma = GN_INITIAL_SIGMA;
    for _ in 0..GN_ITERATIONS {
        // normal equations J^T J dx = -J^T r
        let (mut a11, mut a12, mut a22, mut b1, mut b2) = (0.0, 0.0, 0.0, 0.0, 0.0);
        for (&d, &p) in offsets.iter().zip(priors) {
            let d2 = d * d;
            let g = (-d2 / (2.0 * sigma * sigma)).exp();
            let r = c * g - p;
            let jc = g;
            let js = c * g * d2 / (sigma * sigma * sigma);
            a11 += jc * jc;
            a12 += jc * js;
            a22 += js * js;
            b1 -= jc * r;
            b2 -= js * r;
        }
        let Some((dc, ds)) = cholesky_solve_2x2(a11, a12, a22, b1, b2) else {
            return PatchVariance::rejected(RejectionReason::NotGaussian, c, f64::INFINITY);
        };
        c += dc;
        sigma += ds;
        if !(c.is_finite() && sigma.is_finite()) || sigma <= 0.0 {
            return PatchVariance::rejected(RejectionReason::NotGaussian, c, f64::INFINITY);
        }
    }
    let fit_residual = fit_objective(offsets, priors, c, sigma);
    if !(fit_residual <= FIT_RESIDUAL_LIMIT) {
        return PatchVariance::rejected(RejectionReason::ResidualTooLarge, c, fit_residual);
    }
    PatchVariance {
        sigma_k: sigma,
        c_k: c,
        accepted: true,
        rejection: RejectionReason::None,
        fit_residual,
    }
}

/// Solves the SPD system `[a11 a12; a12 a22] x = b` via `L L^T`.
fn cholesky_solve_2x2(a11: f64, a12: f64, a22: f64, b1: f64, b2: f64) -> Option<(f64, f64)> {
    if !(a11 > 0.0) {
        return None;
    }
    let l11 = a11.sqrt();
    let l21 = a12 / l11;
    let d = a22 - l21 * l21;
    if !(d > a22 * 1e-14) || !(d > 0.0) {
        return None;
    }
    let l22 = d.sqrt();
    let y1 = b1 / l11;
    let y2 = (b2 - l21 * y1) / l22;
    let x2 = y2 / l22;
    let x1 = (y1 - l21 * x2) / l11;
    Some((x1, x2))
}

/// Depth standard deviation from the fused disparity variance:
/// `sigma_x^2 = (f b)^2 / u^4 * sum_k wbar_k^2 sigma_k^2`.
///
/// `variance_sum` holds `sum_k wbar_k^2 sigma_k^2` in squared pixels of the
/// same resolution as `disparity`.
pub fn propagate_variance(
    variance_sum: &Field,
    disparity: &DisparityField,
    cam: &CameraParams,
) -> Field {
    let fb = cam.fb();
    Field::from_fn(disparity.width, disparity.height, |x, y| {
        let u = disparity.get(x, y)?;
        let v = variance_sum.get(x, y)?;
        if u <= MIN_DISPARITY {
            return None;
        }
        Some(fb / (u * u) * v.max(0.0).sqrt())
    })
}
