//! Browser bindings for the bdis matcher.
//!
//! Three operations back the demo page in `www/`:
//! [`match_scene`] renders a synthetic pair and matches it,
//! [`posterior_window`] evaluates the patch posterior for a residual window,
//! and [`spatial_mask`] returns the fusion weights of one patch.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use bdis::depth::fit_gaussian;
use bdis::posterior::{dynamic_sigma, evaluate_posterior, WindowSamples};
use bdis::synth::{render_scene, RigGeometry, Shading, Surface, SyntheticScene};
use bdis::{CameraParams, ExpMode, Field, Matcher, PipelineConfig, SpatialMask};
use wasm_bindgen::prelude::*;

fn js_err(e: bdis::Error) -> JsError {
    JsError::new(&e.to_string())
}

/// Result of [`match_scene`]: colour-mapped images and summary numbers.
#[wasm_bindgen]
pub struct MatchView {
    width: usize,
    height: usize,
    left: Vec<u8>,
    disparity: Vec<u8>,
    error: Vec<u8>,
    median_error: f64,
    mean_error: f64,
    valid_fraction: f64,
    min_disparity: f64,
    max_disparity: f64,
}

#[wasm_bindgen]
impl MatchView {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }
    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }
    /// Left input as RGBA bytes.
    pub fn left_rgba(&self) -> Vec<u8> {
        self.left.clone()
    }
    /// Estimated disparity as RGBA bytes; invalid pixels are black.
    pub fn disparity_rgba(&self) -> Vec<u8> {
        self.disparity.clone()
    }
    /// Absolute disparity error, 0 to 1 px mapped from dark to bright.
    pub fn error_rgba(&self) -> Vec<u8> {
        self.error.clone()
    }
    #[wasm_bindgen(getter)]
    pub fn median_error(&self) -> f64 {
        self.median_error
    }
    #[wasm_bindgen(getter)]
    pub fn mean_error(&self) -> f64 {
        self.mean_error
    }
    #[wasm_bindgen(getter)]
    pub fn valid_fraction(&self) -> f64 {
        self.valid_fraction
    }
    #[wasm_bindgen(getter)]
    pub fn min_disparity(&self) -> f64 {
        self.min_disparity
    }
    #[wasm_bindgen(getter)]
    pub fn max_disparity(&self) -> f64 {
        self.max_disparity
    }
}

/// Scene knobs exposed to the page.
#[derive(Debug, Clone, Copy)]
pub struct SceneParams {
    pub sphere: bool,
    pub disparity: f64,
    pub specular: f64,
    pub noise_std: f64,
    pub width: usize,
    pub height: usize,
    pub seed: u64,
}

impl SceneParams {
    fn scene(&self) -> SyntheticScene {
        let surface = if self.sphere {
            Surface::SpherePatch {
                center_depth: 250.0,
                radius: 100.0,
            }
        } else {
            Surface::Plane {
                disparity: self.disparity,
            }
        };
        let mut scene = SyntheticScene::new(surface)
            .with_noise(self.noise_std)
            .with_seed(self.seed);
        if self.specular > 0.0 {
            scene = scene.with_shading(Shading::NonLambertian {
                highlight_center: (self.width as f64 / 2.0, self.height as f64 / 2.0),
                falloff: self.width as f64 / 16.0,
                specular: self.specular,
            });
        }
        scene
    }
}

/// Jet-like colour map for `t` in `[0, 1]`.
pub fn colormap(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    let channel = |c: f64| ((1.5 - (4.0 * t - c).abs()).clamp(0.0, 1.0) * 255.0).round() as u8;
    [channel(3.0), channel(2.0), channel(1.0)]
}

fn field_rgba(field: &Field, lo: f64, hi: f64) -> Vec<u8> {
    let span = (hi - lo).max(1e-9);
    let mut out = Vec::with_capacity(field.values.len() * 4);
    for (v, ok) in field.values.iter().zip(&field.valid) {
        let [r, g, b] = if *ok { colormap((v - lo) / span) } else { [0, 0, 0] };
        out.extend_from_slice(&[r, g, b, 255]);
    }
    out
}

/// Renders and matches a scene; native entry point behind [`match_scene`].
pub fn run_match(params: &SceneParams, config: PipelineConfig) -> bdis::Result<MatchView> {
    let geo = RigGeometry::new(CameraParams::new(500.0, 5.0)?, params.width, params.height);
    let pair = render_scene(&params.scene(), &geo)?;
    let result = Matcher::new(config)?.run(&pair.left, &pair.right)?;

    let mut errors = Vec::new();
    let mut err_field = Field::invalid(params.width, params.height);
    for i in 0..result.disparity.values.len() {
        if result.disparity.valid[i] {
            let e = (result.disparity.values[i] - pair.disparity.values[i]).abs();
            err_field.values[i] = e;
            err_field.valid[i] = true;
            errors.push(e);
        }
    }
    let n = errors.len();
    let mean_error = if n > 0 { errors.iter().sum::<f64>() / n as f64 } else { f64::NAN };
    let median_error = bdis::synth::median(&mut errors).unwrap_or(f64::NAN);
    let (lo, hi) = pair
        .disparity
        .values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let (lo, hi) = if hi - lo < 1.0 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let left = pair
        .left
        .data()
        .iter()
        .flat_map(|&v| {
            let g = (v * 255.0).round() as u8;
            [g, g, g, 255]
        })
        .collect();
    Ok(MatchView {
        width: params.width,
        height: params.height,
        left,
        disparity: field_rgba(&result.disparity, lo, hi),
        error: field_rgba(&err_field, 0.0, 1.0),
        median_error,
        mean_error,
        valid_fraction: n as f64 / result.disparity.values.len() as f64,
        min_disparity: lo,
        max_disparity: hi,
    })
}

/// Renders a plane (`sphere = false`) or sphere scene and runs the matcher
/// with default settings and `coarsest_exp` pyramid levels.
#[wasm_bindgen]
#[allow(clippy::too_many_arguments)]
pub fn match_scene(
    sphere: bool,
    disparity: f64,
    specular: f64,
    noise_std: f64,
    width: usize,
    height: usize,
    coarsest_exp: u32,
    seed: u32,
) -> Result<MatchView, JsError> {
    let params = SceneParams {
        sphere,
        disparity,
        specular,
        noise_std,
        width,
        height,
        seed: seed as u64,
    };
    let config = PipelineConfig {
        coarsest_exp,
        ..Default::default()
    };
    run_match(&params, config).map_err(js_err)
}

/// Posterior of a residual window at the default offsets `-1..1`.
///
/// Returns `[probability, sigma_r, is_local_minimum, fitted_sigma,
/// fit_accepted, p_-1, p_-0.5, p_0, p_0.5, p_1]` where the last five are the
/// normalized window probabilities.
#[wasm_bindgen]
pub fn posterior_window(residuals: &[f64], patch_size: usize, fast_exp: bool) -> Result<Vec<f64>, JsError> {
    let offsets = bdis::posterior::DEFAULT_OFFSETS;
    if residuals.len() != offsets.len() {
        return Err(JsError::new("expected five residuals"));
    }
    if residuals.iter().any(|r| !(r.is_finite() && *r >= 0.0)) {
        return Err(JsError::new("residuals must be finite and non-negative"));
    }
    Ok(window_summary(residuals, patch_size, fast_exp))
}

/// Native form of [`posterior_window`]; `residuals` must hold five values.
pub fn window_summary(residuals: &[f64], patch_size: usize, fast_exp: bool) -> Vec<f64> {
    let offsets = bdis::posterior::DEFAULT_OFFSETS;
    let samples = WindowSamples::from_residuals(&offsets, residuals);
    let sigma_r = dynamic_sigma(&samples);
    let mode = if fast_exp { ExpMode::Fast } else { ExpMode::Exact };
    let post = evaluate_posterior(&samples, sigma_r, patch_size.max(1), mode);
    let total: f64 = post.priors.iter().sum();
    let fit = fit_gaussian(&offsets, &post.priors);
    let mut out = vec![
        post.probability,
        sigma_r,
        post.is_local_minimum as u8 as f64,
        fit.sigma_k,
        fit.accepted as u8 as f64,
    ];
    out.extend(post.priors.iter().map(|p| if total > 0.0 { p / total } else { 0.0 }));
    out
}

/// Row-major fusion weights of a `size x size` patch.
#[wasm_bindgen]
pub fn spatial_mask(size: usize, sigma_s: f64) -> Result<Vec<f64>, JsError> {
    if size == 0 || size > 64 || !(sigma_s > 0.0) {
        return Err(JsError::new("size must be 1..=64 and sigma_s positive"));
    }
    Ok(SpatialMask::new(size, sigma_s).weights)
}
