//! Bayesian dense inverse search (BDIS) stereo matching on the CPU.
//!
//! Patches of the left image are aligned to the right image along the
//! epipolar line with inverse-compositional Lucas-Kanade. Each converged
//! patch gets a posterior probability from the residuals in a small
//! disparity window around its solution; the probabilities are carried from
//! coarse to fine levels and, weighted by a spatial Gaussian over the patch,
//! drive the pixel-wise fusion of overlapping patches.
//!
//! ```no_run
//! use bdis::{CameraParams, GrayImage, Matcher, PipelineConfig};
//! # fn demo(left: GrayImage, right: GrayImage) -> bdis::Result<()> {
//! let matcher = Matcher::new(PipelineConfig::default())?;
//! let result = matcher.run(&left, &right)?;
//! let depth = result.depth(&CameraParams::new(500.0, 5.0)?);
//! println!("{} valid pixels", depth.valid_count());
//! # Ok(())
//! # }
//! ```

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod config;
pub mod depth;
mod error;
pub mod fastexp;
pub mod field;
pub mod fusion;
pub mod image;
pub mod io;
pub mod kv;
pub mod lk;
pub mod patch;
pub mod pipeline;
pub mod posterior;
pub mod pyramid;
pub mod spatial;
pub mod synth;

pub use config::PipelineConfig;
pub use depth::{CameraParams, DepthResult, PatchVariance, RejectionReason};
pub use error::{Error, Result};
pub use fastexp::{fast_exp, ExpMode};
pub use field::{DisparityField, Field, ProbabilityField};
pub use image::GrayImage;
pub use pipeline::{match_stereo, LevelEstimate, MatchResult, Matcher, PatchEstimate};
pub use pyramid::Pyramid;
pub use spatial::SpatialMask;
