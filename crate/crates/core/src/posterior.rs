//! Window-normalized Boltzmann posterior of a patch disparity.
//!
//! Around a converged disparity `u_k` the residual is sampled at a few
//! epipolar offsets. Each sample gets the prior `exp(-e_i / (2 sigma_r^2 s^2))`
//! and the patch posterior is the centre prior over the window sum. `sigma_r`
//! is the spread of the window residuals themselves, so no tuning is needed.

use crate::fastexp::ExpMode;
use crate::lk::PatchSystem;
use crate::image::GrayImage;

/// Lower bound for the dynamic deviation.
pub const SIGMA_FLOOR: f64 = 1e-4;

/// Default disparity perturbations (px) around the converged solution.
pub const DEFAULT_OFFSETS: [f64; 5] = [-1.0, -0.5, 0.0, 0.5, 1.0];

/// Residuals at `u_k + offsets[i]`; `None` marks a sample that left the image.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowSamples {
    pub offsets: Vec<f64>,
    pub residuals: Vec<Option<f64>>,
    pub center_index: usize,
}

impl WindowSamples {
    /// Builds a window from fully valid residuals. `offsets` must contain 0.
    pub fn from_residuals(offsets: &[f64], residuals: &[f64]) -> Self {
        assert_eq!(offsets.len(), residuals.len());
        Self {
            offsets: offsets.to_vec(),
            residuals: residuals.iter().map(|&r| Some(r)).collect(),
            center_index: center_index(offsets),
        }
    }

    pub fn valid_residuals(&self) -> impl Iterator<Item = f64> + '_ {
        self.residuals.iter().flatten().copied()
    }

    pub fn center_residual(&self) -> Option<f64> {
        self.residuals[self.center_index]
    }

    pub fn invalid_count(&self) -> usize {
        self.residuals.iter().filter(|r| r.is_none()).count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatchPosterior {
    pub probability: f64,
    pub sigma_r: f64,
    pub is_local_minimum: bool,
    /// Un-normalized window priors, shifted so the smallest residual maps to
    /// `exp(0)`; `0` for invalid samples.
    pub priors: Vec<f64>,
}

fn center_index(offsets: &[f64]) -> usize {
    offsets
        .iter()
        .position(|&o| o == 0.0)
        .expect("window offsets must include 0")
}

/// Samples the residual window around `u_k`.
///
/// Returns `None` if the centre sample or more than one sample is invalid.
pub fn sample_window(
    system: &PatchSystem,
    right: &GrayImage,
    u_k: f64,
    offsets: &[f64],
    min_overlap: f64,
) -> Option<WindowSamples> {
    let residuals: Vec<Option<f64>> = offsets
        .iter()
        .map(|&o| system.residual(right, u_k + o, min_overlap).map(|e| e.mse))
        .collect();
    let samples = WindowSamples {
        offsets: offsets.to_vec(),
        residuals,
        center_index: center_index(offsets),
    };
    if samples.center_residual().is_none() || samples.invalid_count() > 1 {
        return None;
    }
    Some(samples)
}

/// Population standard deviation of the valid residuals, floored at
/// [`SIGMA_FLOOR`].
pub fn dynamic_sigma(samples: &WindowSamples) -> f64 {
    let n = samples.valid_residuals().count();
    if n < 2 {
        return SIGMA_FLOOR;
    }
    let mean = samples.valid_residuals().sum::<f64>() / n as f64;
    let var = samples
        .valid_residuals()
        .map(|r| (r - mean) * (r - mean))
        .sum::<f64>()
        / n as f64;
    var.sqrt().max(SIGMA_FLOOR)
}

/// Computes the window posterior without applying the discard rules.
///
/// Residuals are shifted by the window minimum before exponentiation; the
/// normalized probability is unchanged and uniform windows stay at `1/n`
/// instead of underflowing.
pub fn evaluate_posterior(
    samples: &WindowSamples,
    sigma_r: f64,
    patch_size: usize,
    exp: ExpMode,
) -> PatchPosterior {
    let s = patch_size as f64;
    let scale = 1.0 / (2.0 * sigma_r * sigma_r * s * s);
    let min = samples.valid_residuals().fold(f64::INFINITY, f64::min);
    let priors: Vec<f64> = samples
        .residuals
        .iter()
        .map(|r| match r {
            Some(r) => exp.eval(-(r - min) * scale),
            None => 0.0,
        })
        .collect();
    let total: f64 = priors.iter().sum();
    let center = samples.center_residual();
    let is_local_minimum = match center {
        Some(c) => samples
            .residuals
            .iter()
            .enumerate()
            .all(|(i, r)| i == samples.center_index || r.is_none_or(|r| c < r)),
        None => false,
    };
    let probability = if total > 0.0 {
        (priors[samples.center_index] / total).clamp(0.0, 1.0)
    } else {
        0.0
    };
    PatchPosterior {
        probability,
        sigma_r,
        is_local_minimum,
        priors,
    }
}

/// Window posterior for a patch, or `None` if the centre is not the strict
/// window minimum (a saddle or unconverged point) or every prior underflowed.
pub fn patch_posterior(
    samples: &WindowSamples,
    sigma_r: f64,
    patch_size: usize,
    exp: ExpMode,
) -> Option<PatchPosterior> {
    let post = evaluate_posterior(samples, sigma_r, patch_size, exp);
    if !post.is_local_minimum || post.priors.iter().all(|&p| p == 0.0) {
        return None;
    }
    Some(post)
}
