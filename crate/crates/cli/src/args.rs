use std::path::PathBuf;

use bdis::config::early_stop_from_list;
use bdis::kv::{parse_list, KeyValues};
use bdis::PipelineConfig;
use clap::Args;

/// Matcher parameters. Every flag is optional; unset flags keep the value
/// from `--config` or the built-in default shown in brackets.
#[derive(Debug, Clone, Default, Args)]
pub struct ConfigArgs {
    /// `key = value` file with matcher parameters (snake_case keys)
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Coarsest pyramid level exponent, level scale 2^-n [default: 5]
    #[arg(long, value_name = "N")]
    pub coarsest_exp: Option<u32>,

    /// Finest pyramid level exponent [default: 1]
    #[arg(long, value_name = "N")]
    pub finest_exp: Option<u32>,

    /// Square patch side in pixels [default: 10]
    #[arg(long, value_name = "PX")]
    pub patch_size: Option<usize>,

    /// Overlap ratio between neighbouring patches [default: 0.55]
    #[arg(long, value_name = "RATIO")]
    pub overlap: Option<f64>,

    /// Inverse-search iteration cap per patch [default: 12]
    #[arg(long, value_name = "N")]
    pub max_iterations: Option<usize>,

    /// Early stop thresholds: update, residual ratio, residual [default: 0.05,0.95,0.10]
    #[arg(long, value_name = "U,R,E", allow_hyphen_values = true)]
    pub early_stop: Option<String>,

    /// Posterior window offsets in pixels [default: -1,-0.5,0,0.5,1]
    #[arg(long, value_name = "LIST", allow_hyphen_values = true)]
    pub window_offsets: Option<String>,

    /// Spatial mask deviation in pixels [default: 4]
    #[arg(long, value_name = "PX")]
    pub sigma_s: Option<f64>,

    /// Minimum fused probability for a valid pixel [default: 0.15]
    #[arg(long, value_name = "P")]
    pub pixel_threshold: Option<f64>,

    /// Smallest kept region as a fraction of the patch area [default: 0.75]
    #[arg(long, value_name = "RATIO")]
    pub gamma: Option<f64>,

    /// Minimum valid fraction of a patch [default: 0.75]
    #[arg(long, value_name = "RATIO")]
    pub valid_patch_ratio: Option<f64>,

    /// Estimate per-pixel depth deviation and write sigma.pfm [default: false]
    #[arg(long, value_name = "BOOL", num_args = 0..=1, default_missing_value = "true")]
    pub estimate_variance: Option<bool>,

    /// Worker threads for patch work within a level [default: 1]
    #[arg(long, value_name = "N")]
    pub threads: Option<usize>,

    /// Seed recorded with the run and used for synthetic rendering noise [default: 0]
    #[arg(long, value_name = "N")]
    pub seed: Option<u64>,
}

impl ConfigArgs {
    /// Defaults, then the config file, then explicit flags.
    pub fn resolve(&self) -> bdis::Result<PipelineConfig> {
        let mut cfg = PipelineConfig::default();
        if let Some(path) = &self.config {
            let text = std::fs::read_to_string(path).map_err(|e| {
                bdis::Error::Config(format!("cannot read config file {}: {e}", path.display()))
            })?;
            let kv = KeyValues::parse(&text).map_err(|e| bdis::Error::Config(e.to_string()))?;
            cfg.apply_file(&kv)?;
        }
        macro_rules! flag {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        flag!(coarsest_exp);
        flag!(finest_exp);
        flag!(patch_size);
        flag!(overlap);
        flag!(max_iterations);
        flag!(sigma_s);
        flag!(pixel_threshold);
        flag!(gamma);
        flag!(valid_patch_ratio);
        flag!(estimate_variance);
        flag!(threads);
        flag!(seed);
        let list = |v: &str| parse_list(v).map_err(|e| bdis::Error::Config(e.to_string()));
        if let Some(v) = &self.early_stop {
            cfg.early_stop = early_stop_from_list(&list(v)?)?;
        }
        if let Some(v) = &self.window_offsets {
            cfg.window_offsets = list(v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}
