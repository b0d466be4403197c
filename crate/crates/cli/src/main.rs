mod args;

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bdis::io::{load_calibration, load_stereo_pair, metrics_to_writer, read_pfm, write_metrics_csv, write_pfm};
use bdis::synth::{compute_metrics, load_dataset, run_benchmark, write_dataset_frame, FrameMetrics, SceneSpec};
use bdis::{Error, Matcher};
use clap::{Parser, Subcommand};

use crate::args::ConfigArgs;

#[derive(Debug, Parser)]
#[command(name = "bdis", version, about = "Bayesian dense inverse search stereo matching")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Match one rectified pair and write disparity.pfm, depth.pfm (and sigma.pfm)
    Match {
        /// Left image (PNG or PGM)
        #[arg(long)]
        left: PathBuf,
        /// Right image (PNG or PGM)
        #[arg(long)]
        right: PathBuf,
        /// Calibration file with focal_px, baseline_mm, width, height
        #[arg(long, value_name = "FILE")]
        calib: PathBuf,
        /// Output directory, created if missing
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
        /// Reference depth PFM; enables the error columns of the metrics row
        #[arg(long, value_name = "PFM")]
        reference: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Time the matcher on synthetic scenes or a dataset directory
    Bench {
        /// Scene description files
        #[arg(long = "scene", value_name = "FILE", required_unless_present = "dataset")]
        scenes: Vec<PathBuf>,
        /// Directory with calib.txt and <frame>_left/_right/_depth files
        #[arg(long, value_name = "DIR", conflicts_with = "scenes")]
        dataset: Option<PathBuf>,
        /// Timed repetitions per frame
        #[arg(long, default_value_t = 10)]
        reps: usize,
        /// Metrics CSV output
        #[arg(long, value_name = "CSV")]
        out: PathBuf,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Render a scene file into a dataset directory
    Render {
        /// Scene description file
        #[arg(long, value_name = "FILE")]
        scene: PathBuf,
        /// Output directory
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
}

/// Process exit status per failure class.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Failure {
    Io = 3,
    Config = 4,
    Input = 5,
}

fn classify(err: &Error) -> Failure {
    match err {
        Error::Config(_) | Error::Scene(_) | Error::PyramidRange { .. } | Error::EmptyLevelSet => Failure::Config,
        Error::Io(_)
        | Error::Csv(_)
        | Error::NotFound(_)
        | Error::Decode { .. }
        | Error::Format { .. }
        | Error::Calibration(_) => Failure::Io,
        Error::EmptyImage { .. }
        | Error::BufferSize { .. }
        | Error::DimensionMismatch { .. }
        | Error::LevelTooSmall { .. }
        | Error::EmptyPatch { .. }
        | Error::DegeneratePatch { .. } => Failure::Input,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Match {
            left,
            right,
            calib,
            out_dir,
            reference,
            config,
        } => run_match(&config, &left, &right, &calib, &out_dir, reference.as_deref()),
        Command::Bench {
            scenes,
            dataset,
            reps,
            out,
            config,
        } => run_bench(&config, &scenes, dataset.as_deref(), reps, &out),
        Command::Render { scene, out_dir } => run_render(&scene, &out_dir),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            let class = classify(&err);
            let label = match class {
                Failure::Io => "i/o error",
                Failure::Config => "config error",
                Failure::Input => "input error",
            };
            eprintln!("bdis: {label}: {err}");
            ExitCode::from(class as u8)
        }
    }
}

fn run_match(
    config: &ConfigArgs,
    left: &Path,
    right: &Path,
    calib: &Path,
    out_dir: &Path,
    reference: Option<&Path>,
) -> bdis::Result<()> {
    let cfg = config.resolve()?;
    let calibration = load_calibration(calib)?;
    let cam = calibration.camera()?;
    let (l, r) = load_stereo_pair(left, right)?;
    calibration.check_dims(l.width(), l.height())?;
    let reference = reference.map(read_pfm).transpose()?;
    let matcher = Matcher::new(cfg)?;

    let start = Instant::now();
    let result = matcher.run(&l, &r)?;
    let depth = result.depth(&cam);
    let runtime_ms = start.elapsed().as_secs_f64() * 1e3;

    std::fs::create_dir_all(out_dir)?;
    write_pfm(&result.disparity, out_dir.join("disparity.pfm"))?;
    write_pfm(&depth.as_field(), out_dir.join("depth.pfm"))?;
    if let Some(sigma) = depth.sigma_field() {
        write_pfm(&sigma, out_dir.join("sigma.pfm"))?;
    }

    let metrics = match &reference {
        Some(reference) => compute_metrics(&depth, reference, runtime_ms)?,
        None => FrameMetrics {
            mean_err: None,
            median_err: None,
            valid_px: depth.valid_count(),
            runtime_ms,
            coverage_rate: None,
        },
    };
    let frame = left.file_stem().and_then(|s| s.to_str()).unwrap_or("frame");
    let stdout = std::io::stdout();
    let mut lock = stdout.lock();
    metrics_to_writer(&[metrics.to_row(frame)], &mut lock)?;
    lock.flush()?;
    Ok(())
}

fn run_bench(
    config: &ConfigArgs,
    scenes: &[PathBuf],
    dataset: Option<&Path>,
    reps: usize,
    out: &Path,
) -> bdis::Result<()> {
    let cfg = config.resolve()?;
    if reps == 0 {
        return Err(Error::Config("--reps must be at least 1".into()));
    }
    let frames = match dataset {
        Some(dir) => load_dataset(dir)?,
        None => scenes
            .iter()
            .map(|p| {
                let mut spec = SceneSpec::load(p)?;
                if let Some(seed) = config.seed {
                    spec.scene.seed = seed;
                }
                spec.render()
            })
            .collect::<bdis::Result<Vec<_>>>()?,
    };
    let report = run_benchmark(&frames, &cfg, reps)?;
    for f in report.failures() {
        eprintln!("bdis: frame {} failed: {}", f.name, f.error.as_deref().unwrap_or(""));
    }
    write_metrics_csv(&report.rows(), out)?;
    let agg = report.aggregate();
    println!(
        "{} frames, mean runtime {:.2} ms, {} failed",
        report.frames.len(),
        agg.runtime_ms,
        report.failures().count()
    );
    Ok(())
}

fn run_render(scene: &Path, out_dir: &Path) -> bdis::Result<()> {
    let spec = SceneSpec::load(scene)?;
    let frame = spec.render()?;
    write_dataset_frame(out_dir, &frame, spec.geometry.width, spec.geometry.height)?;
    println!("wrote {} to {}", frame.name, out_dir.display());
    Ok(())
}
