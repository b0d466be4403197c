use crate::error::{Error, Result};
use crate::kv::KeyValues;
use crate::lk::{EarlyStop, SearchParams};
use crate::posterior::DEFAULT_OFFSETS;

/// All tunables of the matcher, with defaults tuned for 640x480 input.
#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub coarsest_exp: u32,
    pub finest_exp: u32,
    pub patch_size: usize,
    pub overlap: f64,
    pub max_iterations: usize,
    pub early_stop: EarlyStop,
    pub window_offsets: Vec<f64>,
    pub sigma_s: f64,
    pub pixel_threshold: f64,
    pub gamma: f64,
    pub valid_patch_ratio: f64,
    pub estimate_variance: bool,
    pub threads: usize,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            coarsest_exp: 5,
            finest_exp: 1,
            patch_size: 10,
            overlap: 0.55,
            max_iterations: 12,
            early_stop: EarlyStop::default(),
            window_offsets: DEFAULT_OFFSETS.to_vec(),
            sigma_s: 4.0,
            pixel_threshold: 0.15,
            gamma: 0.75,
            valid_patch_ratio: 0.75,
            estimate_variance: false,
            threads: 1,
            seed: 0,
        }
    }
}

/// Config-file keys, one per field.
pub const CONFIG_KEYS: &[&str] = &[
    "coarsest_exp",
    "finest_exp",
    "patch_size",
    "overlap",
    "max_iterations",
    "early_stop",
    "window_offsets",
    "sigma_s",
    "pixel_threshold",
    "gamma",
    "valid_patch_ratio",
    "estimate_variance",
    "threads",
    "seed",
];

impl PipelineConfig {
    pub fn search_params(&self) -> SearchParams {
        SearchParams {
            max_iterations: self.max_iterations,
            early_stop: self.early_stop,
            min_overlap: self.valid_patch_ratio,
        }
    }

    /// Levels processed, coarsest first.
    pub fn levels(&self) -> Vec<u32> {
        (self.finest_exp..=self.coarsest_exp).rev().collect()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if self.finest_exp > self.coarsest_exp {
            return bad(format!(
                "finest_exp {} exceeds coarsest_exp {}",
                self.finest_exp, self.coarsest_exp
            ));
        }
        if self.coarsest_exp > 12 {
            return bad(format!("coarsest_exp {} is too large", self.coarsest_exp));
        }
        if self.patch_size < 2 {
            return bad(format!("patch_size {} must be at least 2", self.patch_size));
        }
        if !(0.0..1.0).contains(&self.overlap) {
            return bad(format!("overlap {} outside [0, 1)", self.overlap));
        }
        if self.max_iterations == 0 {
            return bad("max_iterations must be at least 1".into());
        }
        let es = self.early_stop;
        if !(es.update >= 0.0 && es.ratio > 0.0 && es.residual >= 0.0) {
            return bad(format!("early_stop {es:?} must be non-negative"));
        }
        let offs = &self.window_offsets;
        if offs.len() < 3 || !offs.contains(&0.0) || offs.iter().any(|o| !o.is_finite()) {
            return bad(format!("window_offsets {offs:?} must hold at least 3 values including 0"));
        }
        if offs.iter().any(|o| !offs.contains(&-o)) {
            return bad(format!("window_offsets {offs:?} must be symmetric about 0"));
        }
        if !(self.sigma_s > 0.0) {
            return bad(format!("sigma_s {} must be positive", self.sigma_s));
        }
        if !(0.0..=1.0).contains(&self.pixel_threshold) {
            return bad(format!("pixel_threshold {} outside [0, 1]", self.pixel_threshold));
        }
        if !(self.gamma >= 0.0 && self.gamma.is_finite()) {
            return bad(format!("gamma {} must be non-negative", self.gamma));
        }
        if !(self.valid_patch_ratio > 0.0 && self.valid_patch_ratio <= 1.0) {
            return bad(format!(
                "valid_patch_ratio {} outside (0, 1]",
                self.valid_patch_ratio
            ));
        }
        if self.threads == 0 {
            return bad("threads must be at least 1".into());
        }
        Ok(())
    }

    /// Overrides fields present in a `key = value` file.
    pub fn apply_file(&mut self, kv: &KeyValues) -> Result<()> {
        if let Some(k) = kv.keys().find(|k| !CONFIG_KEYS.contains(k)) {
            return Err(Error::Config(format!("unknown config key `{k}`")));
        }
        let cfg = |e: Error| Error::Config(e.to_string());
        macro_rules! take {
            ($field:ident) => {
                if let Some(v) = kv.get(stringify!($field)).map_err(cfg)? {
                    self.$field = v;
                }
            };
        }
        take!(coarsest_exp);
        take!(finest_exp);
        take!(patch_size);
        take!(overlap);
        take!(max_iterations);
        take!(sigma_s);
        take!(pixel_threshold);
        take!(gamma);
        take!(valid_patch_ratio);
        take!(estimate_variance);
        take!(threads);
        take!(seed);
        if let Some(es) = kv.get_list("early_stop").map_err(cfg)? {
            self.early_stop = early_stop_from_list(&es)?;
        }
        if let Some(offs) = kv.get_list("window_offsets").map_err(cfg)? {
            self.window_offsets = offs;
        }
        Ok(())
    }
}

pub fn early_stop_from_list(v: &[f64]) -> Result<EarlyStop> {
    match v {
        [update, ratio, residual] => Ok(EarlyStop {
            update: *update,
            ratio: *ratio,
            residual: *residual,
        }),
        _ => Err(Error::Config(format!(
            "early_stop needs three values, got {}",
            v.len()
        ))),
    }
}
