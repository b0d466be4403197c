//! Renders a synthetic scene, runs the matcher and prints accuracy per level.
//!
//! ```text
//! cargo run --release -p bdis --example plane_demo -- [disparity] [sphere] [specular] [variance]
//! ```

use std::time::Instant;

use bdis::synth::{render_scene, RigGeometry, Shading, Surface, SyntheticScene};
use bdis::{CameraParams, Matcher, PipelineConfig};

fn main() -> bdis::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let d: f64 = args.first().and_then(|a| a.parse().ok()).unwrap_or(8.0);
    let surface = if args.iter().any(|a| a == "sphere") {
        Surface::SpherePatch {
            center_depth: 250.0,
            radius: 100.0,
        }
    } else {
        Surface::Plane { disparity: d }
    };
    let mut scene = SyntheticScene::new(surface);
    if args.iter().any(|a| a == "specular") {
        scene = scene.with_shading(Shading::NonLambertian {
            highlight_center: (320.0, 240.0),
            falloff: 40.0,
            specular: 0.5,
        });
    }
    let geo = RigGeometry::new(CameraParams::new(500.0, 5.0)?, 640, 480);
    let pair = render_scene(&scene, &geo)?;

    let config = PipelineConfig {
        estimate_variance: args.iter().any(|a| a == "variance"),
        ..Default::default()
    };
    let matcher = Matcher::new(config)?;
    let start = Instant::now();
    let result = matcher.run(&pair.left, &pair.right)?;
    let elapsed = start.elapsed();

    for level in &result.levels {
        let s = level.stats;
        println!(
            "level {} ({}x{}): {} patches, {} accepted, {} degenerate, {} unconverged, {} window, {} not-min",
            level.exp, level.width, level.height, s.patches, s.accepted, s.degenerate, s.unconverged,
            s.window_invalid, s.not_minimum
        );
    }
    let mut errs: Vec<f64> = (0..result.disparity.values.len())
        .filter(|&i| result.disparity.valid[i])
        .map(|i| (result.disparity.values[i] - pair.disparity.values[i]).abs())
        .collect();
    errs.sort_by(f64::total_cmp);
    let n = errs.len();
    if n > 0 {
        println!(
            "valid {n}/{} median {:.4} mean {:.4} p95 {:.4} time {:.1} ms",
            result.disparity.values.len(),
            errs[n / 2],
            errs.iter().sum::<f64>() / n as f64,
            errs[n * 95 / 100],
            elapsed.as_secs_f64() * 1e3
        );
    } else {
        println!("no valid pixels");
    }
    Ok(())
}
