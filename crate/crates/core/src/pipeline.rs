//! The coarse-to-fine matching loop.
//!
//! Each level runs: patch grid -> inverse search from the upsampled coarser
//! disparity -> window posterior -> probability propagation -> pixel-wise
//! fusion. The finest level is validity-filtered and upsampled to the input
//! resolution.

use crate::config::PipelineConfig;
use crate::depth::{disparity_to_depth, estimate_patch_variance, filter_validity, propagate_variance};
use crate::depth::{CameraParams, DepthResult, PatchVariance};
use crate::error::Result;
use crate::fastexp::ExpMode;
use crate::field::{DisparityField, Field};
use crate::fusion::{
    center_pixel, fuse_level, init_next_level, level_weight, make_patch_grid,
    propagate_probability, FusedLevel, FusionInput,
};
use crate::image::GrayImage;
use crate::lk::{build_patch_system, LkResult, SearchParams};
use crate::patch::extract_patch;
use crate::posterior::{dynamic_sigma, patch_posterior, sample_window};
use crate::pyramid::{Pyramid, PyramidLevel};
use crate::spatial::SpatialMask;

/// A patch that survived every gate on its level.
#[derive(Debug, Clone, PartialEq)]
pub struct PatchEstimate {
    pub center_x: f64,
    pub center_y: f64,
    pub u_init: f64,
    pub lk: LkResult,
    /// Window posterior at this level.
    pub posterior: f64,
    /// Multi-scale probability inherited from coarser levels.
    pub inherited: f64,
    pub propagated: f64,
    pub variance: Option<PatchVariance>,
}

impl PatchEstimate {
    pub fn u(&self) -> f64 {
        self.lk.u
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Discard {
    LowValidity,
    Degenerate,
    Unconverged,
    WindowInvalid,
    NotMinimum,
}

/// Patch counts per outcome on one level.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct LevelStats {
    pub patches: usize,
    pub low_validity: usize,
    pub degenerate: usize,
    pub unconverged: usize,
    pub window_invalid: usize,
    pub not_minimum: usize,
    pub accepted: usize,
    pub variance_accepted: usize,
}

#[derive(Debug, Clone)]
pub struct LevelEstimate {
    pub exp: u32,
    pub width: usize,
    pub height: usize,
    pub patches: Vec<PatchEstimate>,
    pub fused: FusedLevel,
    pub stats: LevelStats,
}

impl LevelEstimate {
    pub fn disparity(&self) -> &DisparityField {
        &self.fused.disparity
    }

    pub fn probability(&self) -> &Field {
        &self.fused.probability
    }
}

#[derive(Debug, Clone)]
pub struct MatchResult {
    pub width: usize,
    pub height: usize,
    /// Per-level estimates, coarsest first.
    pub levels: Vec<LevelEstimate>,
    /// Finest processed level after probability and island filtering.
    pub filtered: DisparityField,
    /// Disparity at input resolution, in input pixels.
    pub disparity: DisparityField,
    /// `sum_k wbar_k^2 sigma_k^2` at input resolution (squared input pixels).
    pub variance_sum: Option<Field>,
}

impl MatchResult {
    pub fn finest(&self) -> &LevelEstimate {
        self.levels.last().expect("at least one level")
    }

    /// Metric depth, with per-pixel deviation when variance was estimated.
    pub fn depth(&self, cam: &CameraParams) -> DepthResult {
        let mut depth = disparity_to_depth(&self.disparity, cam);
        if let Some(var) = &self.variance_sum {
            let sigma = propagate_variance(var, &self.disparity, cam);
            depth.sigma = Some(
                sigma
                    .values
                    .iter()
                    .zip(&sigma.valid)
                    .map(|(&s, &ok)| if ok { s } else { 0.0 })
                    .collect(),
            );
        }
        depth
    }
}

/// Reusable matcher; holds the precomputed spatial mask and thread pool.
pub struct Matcher {
    config: PipelineConfig,
    mask: SpatialMask,
    #[cfg(feature = "parallel")]
    pool: Option<rayon::ThreadPool>,
}

impl std::fmt::Debug for Matcher {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Matcher").field("config", &self.config).finish()
    }
}

impl Matcher {
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let mask = SpatialMask::new(config.patch_size, config.sigma_s);
        Self::with_mask(config, mask)
    }

    /// Uses a caller-supplied spatial mask (e.g. uniform weights).
    pub fn with_mask(config: PipelineConfig, mask: SpatialMask) -> Result<Self> {
        config.validate()?;
        assert_eq!(mask.size, config.patch_size, "mask size must equal patch size");
        #[cfg(feature = "parallel")]
        let pool = if config.threads > 1 {
            Some(
                rayon::ThreadPoolBuilder::new()
                    .num_threads(config.threads)
                    .build()
                    .map_err(|e| crate::Error::Config(format!("thread pool: {e}")))?,
            )
        } else {
            None
        };
        Ok(Self {
            config,
            mask,
            #[cfg(feature = "parallel")]
            pool,
        })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn mask(&self) -> &SpatialMask {
        &self.mask
    }

    /// Runs the full coarse-to-fine pipeline on a rectified pair.
    pub fn run(&self, left: &GrayImage, right: &GrayImage) -> Result<MatchResult> {
        let cfg = &self.config;
        let pyramid = Pyramid::build(left, right, cfg.coarsest_exp, cfg.finest_exp, cfg.patch_size)?;
        let level_set = cfg.levels();
        let mut levels: Vec<LevelEstimate> = Vec::with_capacity(level_set.len());
        for level in pyramid.levels() {
            let weight = level_weight(level.exp, &level_set)?;
            let init = levels
                .last()
                .map(|c| init_next_level(c.disparity(), level.width(), level.height()));
            let coarse_prob = levels.last().map(|c| c.probability());
            let finest = level.exp == cfg.finest_exp;
            let est = self.process_level(level, init.as_deref(), coarse_prob, weight, finest)?;
            levels.push(est);
        }

        let fin = levels.last().expect("pyramid has levels");
        let filtered = filter_validity(
            fin.disparity(),
            fin.probability(),
            cfg.gamma,
            cfg.pixel_threshold,
            cfg.patch_size,
        );
        let factor = 1usize << cfg.finest_exp;
        let (w, h) = left.dims();
        let disparity = filtered.upsample(factor, w, h, factor as f64);
        let variance_sum = fin.fused.variance_sum.as_ref().map(|v| {
            let mut masked = v.clone();
            for (ok, keep) in masked.valid.iter_mut().zip(&filtered.valid) {
                *ok &= *keep;
            }
            masked.upsample(factor, w, h, (factor * factor) as f64)
        });
        Ok(MatchResult {
            width: w,
            height: h,
            levels,
            filtered,
            disparity,
            variance_sum,
        })
    }

    fn process_level(
        &self,
        level: &PyramidLevel,
        init: Option<&[f64]>,
        coarse_prob: Option<&Field>,
        weight: f64,
        finest: bool,
    ) -> Result<LevelEstimate> {
        let cfg = &self.config;
        let (w, h) = (level.width(), level.height());
        let grid = make_patch_grid(level.exp, w, h, cfg.patch_size, cfg.overlap)?;
        let params = cfg.search_params();
        let with_variance = finest && cfg.estimate_variance;

        let solve = |&(cx, cy): &(f64, f64)| -> std::result::Result<PatchEstimate, Discard> {
            self.solve_patch(level, cx, cy, init, coarse_prob, weight, &params, with_variance)
        };

        #[cfg(feature = "parallel")]
        let outcomes: Vec<_> = match &self.pool {
            Some(pool) => {
                use rayon::prelude::*;
                pool.install(|| grid.centers.par_iter().map(solve).collect())
            }
            None => grid.centers.iter().map(solve).collect(),
        };
        #[cfg(not(feature = "parallel"))]
        let outcomes: Vec<_> = grid.centers.iter().map(solve).collect();

        let mut stats = LevelStats {
            patches: grid.centers.len(),
            ..Default::default()
        };
        let mut patches = Vec::with_capacity(outcomes.len());
        for o in outcomes {
            match o {
                Ok(p) => {
                    stats.accepted += 1;
                    if p.variance.is_some_and(|v| v.accepted) {
                        stats.variance_accepted += 1;
                    }
                    patches.push(p);
                }
                Err(Discard::LowValidity) => stats.low_validity += 1,
                Err(Discard::Degenerate) => stats.degenerate += 1,
                Err(Discard::Unconverged) => stats.unconverged += 1,
                Err(Discard::WindowInvalid) => stats.window_invalid += 1,
                Err(Discard::NotMinimum) => stats.not_minimum += 1,
            }
        }

        let inputs: Vec<FusionInput> = patches
            .iter()
            .map(|p| FusionInput {
                center_x: p.center_x,
                center_y: p.center_y,
                u: p.lk.u,
                probability: p.propagated,
                sigma: p.variance.map(|v| v.sigma_k),
            })
            .collect();
        let fused = fuse_level(&inputs, &self.mask, w, h);
        Ok(LevelEstimate {
            exp: level.exp,
            width: w,
            height: h,
            patches,
            fused,
            stats,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn solve_patch(
        &self,
        level: &PyramidLevel,
        cx: f64,
        cy: f64,
        init: Option<&[f64]>,
        coarse_prob: Option<&Field>,
        weight: f64,
        params: &SearchParams,
        with_variance: bool,
    ) -> std::result::Result<PatchEstimate, Discard> {
        let cfg = &self.config;
        let (w, h) = (level.width(), level.height());
        let patch = extract_patch(&level.left, cx, cy, cfg.patch_size)
            .map_err(|_| Discard::LowValidity)?;
        if patch.valid_fraction < cfg.valid_patch_ratio {
            return Err(Discard::LowValidity);
        }
        let system = build_patch_system(patch, &level.grad_x, w, h, level.exp);
        if system.is_degenerate() {
            return Err(Discard::Degenerate);
        }
        let (px, py) = center_pixel(cx, cy, w, h);
        let u_init = init.map_or(0.0, |f| f[py * w + px]);
        let lk = system.solve(&level.right, u_init, params);
        if !lk.converged {
            return Err(Discard::Unconverged);
        }
        let window = sample_window(&system, &level.right, lk.u, &cfg.window_offsets, params.min_overlap)
            .ok_or(Discard::WindowInvalid)?;
        let sigma_r = dynamic_sigma(&window);
        let post = patch_posterior(&window, sigma_r, cfg.patch_size, ExpMode::Fast)
            .ok_or(Discard::NotMinimum)?;
        let inherited = coarse_prob
            .and_then(|f| f.get((px / 2).min(f.width - 1), (py / 2).min(f.height - 1)))
            .unwrap_or(0.0);
        let propagated = propagate_probability(post.probability, inherited, weight);
        let variance = with_variance.then(|| estimate_patch_variance(&window, &post.priors, lk.u));
        Ok(PatchEstimate {
            center_x: cx,
            center_y: cy,
            u_init,
            lk,
            posterior: post.probability,
            inherited,
            propagated,
            variance,
        })
    }
}

/// One-shot convenience wrapper around [`Matcher`].
pub fn match_stereo(config: &PipelineConfig, left: &GrayImage, right: &GrayImage) -> Result<MatchResult> {
    Matcher::new(config.clone())?.run(left, right)
}
