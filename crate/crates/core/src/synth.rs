//! Analytic synthetic stereo scenes with exact reference disparity, plus the
//! depth-error metrics and the timing harness.
//!
//! Scenes are ray-cast: the left camera sits at the origin and the right one
//! at `(-b, 0, 0)`, both looking down `+Z` with the principal point at the
//! image centre. A scene point visible in the left image at `x` appears in
//! the right image at `x + d` with `d = f b / Z`. Texture is attached to the
//! surface through its left-image projection, so under diffuse shading and
//! no noise `right(x + d(x, y), y) = left(x, y)` holds exactly.

use std::path::Path;
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::config::PipelineConfig;
use crate::depth::{disparity_to_depth, CameraParams, DepthResult};
use crate::error::{Error, Result};
use crate::field::Field;
use crate::image::GrayImage;
use crate::io::MetricsRow;
use crate::kv::KeyValues;
use crate::pipeline::Matcher;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Surface {
    /// Fronto-parallel plane with constant disparity (pixels).
    Plane { disparity: f64 },
    /// Plane whose left-view disparity is `d0 + gx (x - cx) + gy (y - cy)`.
    SlantedPlane { d0: f64, gradient: (f64, f64) },
    /// Front half of a sphere centred on the optical axis at
    /// `center_depth`, in front of a wall through the sphere centre.
    SpherePatch { center_depth: f64, radius: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Texture {
    /// Multi-octave value noise; the first octave has lattice spacing
    /// `period` pixels and each further octave halves it.
    Noise {
        period: f64,
        octaves: u32,
        persistence: f64,
    },
    Checker { period: f64 },
    Constant { value: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Shading {
    /// Lambertian with a point light at the rig midpoint.
    Diffuse,
    /// Each view is lit from its own camera centre and carries an
    /// image-space specular lobe at `highlight_center` (pixels).
    NonLambertian {
        highlight_center: (f64, f64),
        falloff: f64,
        specular: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticScene {
    pub surface: Surface,
    pub texture: Texture,
    pub shading: Shading,
    pub albedo: f64,
    pub ambient: f64,
    pub noise_std: f64,
    pub seed: u64,
}

impl SyntheticScene {
    pub fn new(surface: Surface) -> Self {
        Self {
            surface,
            texture: Texture::Noise {
                period: 12.0,
                octaves: 3,
                persistence: 0.5,
            },
            shading: Shading::Diffuse,
            albedo: 0.9,
            ambient: 0.2,
            noise_std: 0.0,
            seed: 0,
        }
    }

    pub fn with_texture(mut self, texture: Texture) -> Self {
        self.texture = texture;
        self
    }

    pub fn with_shading(mut self, shading: Shading) -> Self {
        self.shading = shading;
        self
    }

    pub fn with_noise(mut self, noise_std: f64) -> Self {
        self.noise_std = noise_std;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Scene(m));
        match self.surface {
            Surface::Plane { disparity } if !(disparity > 0.0 && disparity.is_finite()) => {
                return bad(format!("plane disparity must be positive, got {disparity}"));
            }
            Surface::SlantedPlane { d0, gradient } => {
                if !(d0 > 0.0 && d0.is_finite()) {
                    return bad(format!("d0 must be positive, got {d0}"));
                }
                if !(gradient.0 > -1.0 && gradient.0.is_finite() && gradient.1.is_finite()) {
                    return bad(format!("gradient {gradient:?} folds the warp"));
                }
            }
            Surface::SpherePatch {
                center_depth,
                radius,
            } if !(radius > 0.0 && center_depth > radius) => {
                return bad(format!(
                    "sphere needs 0 < radius < center_depth, got radius {radius}, depth {center_depth}"
                ));
            }
            _ => {}
        }
        match self.texture {
            Texture::Noise {
                period,
                octaves,
                persistence,
            } if !(period > 0.0 && octaves > 0 && persistence > 0.0) => {
                return bad("noise texture needs positive period, octaves and persistence".into());
            }
            Texture::Checker { period } if !(period > 0.0) => {
                return bad("checker period must be positive".into());
            }
            Texture::Constant { value } if !(0.0..=1.0).contains(&value) => {
                return bad("constant texture must lie in [0, 1]".into());
            }
            _ => {}
        }
        if let Shading::NonLambertian { falloff, specular, .. } = self.shading {
            if !(falloff > 0.0 && specular >= 0.0) {
                return bad("specular lobe needs positive falloff and non-negative strength".into());
            }
        }
        if !(self.albedo > 0.0 && self.albedo <= 1.0) {
            return bad(format!("albedo must lie in (0, 1], got {}", self.albedo));
        }
        if !(0.0..=1.0).contains(&self.ambient) {
            return bad(format!("ambient must lie in [0, 1], got {}", self.ambient));
        }
        if !(self.noise_std >= 0.0 && self.noise_std.is_finite()) {
            return bad(format!("noise_std must be non-negative, got {}", self.noise_std));
        }
        Ok(())
    }
}

/// Pinhole geometry of a rendering.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigGeometry {
    pub cam: CameraParams,
    pub width: usize,
    pub height: usize,
}

impl RigGeometry {
    pub fn new(cam: CameraParams, width: usize, height: usize) -> Self {
        Self { cam, width, height }
    }

    pub fn principal_point(&self) -> (f64, f64) {
        ((self.width as f64 - 1.0) / 2.0, (self.height as f64 - 1.0) / 2.0)
    }

    fn ray(&self, x: f64, y: f64) -> [f64; 3] {
        let (cx, cy) = self.principal_point();
        let f = self.cam.focal_length;
        [(x - cx) / f, (y - cy) / f, 1.0]
    }

    fn project_left(&self, p: [f64; 3]) -> (f64, f64) {
        let (cx, cy) = self.principal_point();
        let f = self.cam.focal_length;
        (f * p[0] / p[2] + cx, f * p[1] / p[2] + cy)
    }
}

fn dot(a: [f64; 3], b: [f64; 3]) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

fn sub(a: [f64; 3], b: [f64; 3]) -> [f64; 3] {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

fn normalize(a: [f64; 3]) -> [f64; 3] {
    let n = dot(a, a).sqrt();
    [a[0] / n, a[1] / n, a[2] / n]
}

/// A ray hit: the 3-D point and the unit normal facing the cameras.
#[derive(Debug, Clone, Copy)]
struct Hit {
    point: [f64; 3],
    normal: [f64; 3],
}

impl Surface {
    /// Plane `n . P = k` for the planar surfaces.
    fn plane(&self, fb: f64, f: f64) -> Option<([f64; 3], f64)> {
        match *self {
            Surface::Plane { disparity } => Some(([0.0, 0.0, disparity], fb)),
            Surface::SlantedPlane { d0, gradient } => Some(([gradient.0 * f, gradient.1 * f, d0], fb)),
            Surface::SpherePatch { .. } => None,
        }
    }

    fn intersect(&self, geo: &RigGeometry, origin: [f64; 3], dir: [f64; 3]) -> Option<Hit> {
        let fb = geo.cam.fb();
        let f = geo.cam.focal_length;
        if let Some((n, k)) = self.plane(fb, f) {
            let t = (k - dot(n, origin)) / dot(n, dir);
            if !(t > 0.0 && t.is_finite()) {
                return None;
            }
            let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
            let mut normal = normalize(n);
            if normal[2] > 0.0 {
                normal = [-normal[0], -normal[1], -normal[2]];
            }
            return Some(Hit { point, normal });
        }
        let Surface::SpherePatch {
            center_depth,
            radius,
        } = *self
        else {
            unreachable!()
        };
        let c = [0.0, 0.0, center_depth];
        let t_wall = (center_depth - origin[2]) / dir[2];
        let oc = sub(origin, c);
        let a = dot(dir, dir);
        let b = 2.0 * dot(dir, oc);
        let cc = dot(oc, oc) - radius * radius;
        let disc = b * b - 4.0 * a * cc;
        let t_sphere = if disc >= 0.0 {
            // numerically stable smaller root
            let q = -0.5 * (b + b.signum() * disc.sqrt());
            let (r1, r2) = (q / a, cc / q);
            Some(r1.min(r2))
        } else {
            None
        };
        match t_sphere {
            Some(t) if t > 0.0 && t < t_wall => {
                let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                let normal = normalize(sub(point, c));
                Some(Hit { point, normal })
            }
            _ => {
                let t = t_wall;
                let point = [origin[0] + t * dir[0], origin[1] + t * dir[1], origin[2] + t * dir[2]];
                Some(Hit {
                    point,
                    normal: [0.0, 0.0, -1.0],
                })
            }
        }
    }
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn lattice(seed: u64, octave: u32, ix: i64, iy: i64) -> f64 {
    let h = splitmix(
        seed ^ splitmix(octave as u64 ^ splitmix(ix as u64 ^ splitmix(iy as u64).rotate_left(17))),
    );
    (h >> 11) as f64 / (1u64 << 53) as f64
}

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

fn value_noise(seed: u64, octave: u32, u: f64, v: f64) -> f64 {
    let (x0, y0) = (u.floor(), v.floor());
    let (tx, ty) = (smoothstep(u - x0), smoothstep(v - y0));
    let (ix, iy) = (x0 as i64, y0 as i64);
    let a = lattice(seed, octave, ix, iy);
    let b = lattice(seed, octave, ix + 1, iy);
    let c = lattice(seed, octave, ix, iy + 1);
    let d = lattice(seed, octave, ix + 1, iy + 1);
    let top = a + (b - a) * tx;
    let bottom = c + (d - c) * tx;
    top + (bottom - top) * ty
}

impl Texture {
    /// Albedo pattern in `[0, 1]` at continuous left-image coordinates.
    pub fn eval(&self, seed: u64, u: f64, v: f64) -> f64 {
        match *self {
            Texture::Noise {
                period,
                octaves,
                persistence,
            } => {
                let (mut sum, mut norm, mut amp, mut scale) = (0.0, 0.0, 1.0, 1.0 / period);
                for o in 0..octaves {
                    sum += amp * value_noise(seed, o, u * scale, v * scale);
                    norm += amp;
                    amp *= persistence;
                    scale *= 2.0;
                }
                sum / norm
            }
            Texture::Checker { period } => {
                let parity = ((u / period).floor() + (v / period).floor()).rem_euclid(2.0);
                if parity < 0.5 {
                    0.25
                } else {
                    0.75
                }
            }
            Texture::Constant { value } => value,
        }
    }
}

/// Rendered stereo pair with exact left-view reference maps.
#[derive(Debug, Clone)]
pub struct RenderedPair {
    pub left: GrayImage,
    pub right: GrayImage,
    pub disparity: Field,
    pub depth: Field,
}

/// Renders `scene` for the given rig.
///
/// Fails when the scene parameters are inconsistent or when some reference
/// disparity reaches the image width.
pub fn render_scene(scene: &SyntheticScene, geo: &RigGeometry) -> Result<RenderedPair> {
    scene.validate()?;
    let (w, h) = (geo.width, geo.height);
    if w == 0 || h == 0 {
        return Err(Error::EmptyImage { width: w, height: h });
    }
    let fb = geo.cam.fb();
    let mut disparity = Field::invalid(w, h);
    let mut depth = Field::invalid(w, h);
    for y in 0..h {
        for x in 0..w {
            let d = disparity_at(scene, geo, x as f64, y as f64)
                .ok_or_else(|| Error::Scene(format!("no surface behind pixel ({x}, {y})")))?;
            if !(d > 0.0) || d >= w as f64 {
                return Err(Error::Scene(format!(
                    "disparity {d:.3} at ({x}, {y}) is outside (0, {w})"
                )));
            }
            disparity.set(x, y, d);
            depth.set(x, y, fb / d);
        }
    }

    let left_origin = [0.0; 3];
    let right_origin = [-geo.cam.baseline, 0.0, 0.0];
    let mut left = Vec::with_capacity(w * h);
    let mut right = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let (xf, yf) = (x as f64, y as f64);
            left.push(shade_view(scene, geo, left_origin, xf, yf));
            right.push(shade_view(scene, geo, right_origin, xf, yf));
        }
    }
    if scene.noise_std > 0.0 {
        let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
        let normal = Normal::new(0.0, scene.noise_std).map_err(|e| Error::Scene(e.to_string()))?;
        for v in left.iter_mut().chain(right.iter_mut()) {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    Ok(RenderedPair {
        left: GrayImage::new(w, h, left)?,
        right: GrayImage::new(w, h, right)?,
        disparity,
        depth,
    })
}

/// Left-view disparity at continuous pixel coordinates.
pub fn disparity_at(scene: &SyntheticScene, geo: &RigGeometry, x: f64, y: f64) -> Option<f64> {
    let hit = scene.surface.intersect(geo, [0.0; 3], geo.ray(x, y))?;
    Some(geo.cam.fb() / hit.point[2])
}

/// Noise-free left-image intensity at continuous coordinates.
pub fn left_intensity(scene: &SyntheticScene, geo: &RigGeometry, x: f64, y: f64) -> f64 {
    shade_view(scene, geo, [0.0; 3], x, y)
}

fn shade_view(scene: &SyntheticScene, geo: &RigGeometry, origin: [f64; 3], x: f64, y: f64) -> f64 {
    let Some(hit) = scene.surface.intersect(geo, origin, geo.ray(x, y)) else {
        return 0.0;
    };
    let (u, v) = geo.project_left(hit.point);
    let tex = scene.texture.eval(scene.seed, u, v);
    let light = match scene.shading {
        Shading::Diffuse => [-geo.cam.baseline / 2.0, 0.0, 0.0],
        Shading::NonLambertian { .. } => origin,
    };
    let cos_a = dot(hit.normal, normalize(sub(light, hit.point)));
    let diffuse = scene.albedo * cos_a.max(scene.ambient) * tex;
    let value = match scene.shading {
        Shading::Diffuse => diffuse,
        Shading::NonLambertian {
            highlight_center,
            falloff,
            specular,
        } => {
            let r2 = (x - highlight_center.0).powi(2) + (y - highlight_center.1).powi(2);
            diffuse + specular * (-r2 / (2.0 * falloff * falloff)).exp()
        }
    };
    value.clamp(0.0, 1.0)
}

/// A named scene together with its rig, as read from a scene file.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneSpec {
    pub name: String,
    pub scene: SyntheticScene,
    pub geometry: RigGeometry,
}

impl SceneSpec {
    /// Parses a `key = value` scene description.
    ///
    /// Recognised keys: `name`, `surface` (`plane`, `slanted_plane`,
    /// `sphere_patch`), `disparity`, `d0`, `gradient_x`, `gradient_y`,
    /// `center_depth`, `radius`, `texture` (`noise`, `checker`, `constant`),
    /// `texture_period`, `octaves`, `persistence`, `texture_value`,
    /// `shading` (`diffuse`, `nonlambertian`), `highlight_x`, `highlight_y`,
    /// `falloff`, `specular`, `albedo`, `ambient`, `noise_std`, `seed`,
    /// `width`, `height`, `focal_px`, `baseline_mm`.
    pub fn parse(text: &str, default_name: &str) -> Result<Self> {
        let kv = KeyValues::parse(text).map_err(|e| Error::Scene(e.to_string()))?;
        let known = [
            "name", "surface", "disparity", "d0", "gradient_x", "gradient_y", "center_depth",
            "radius", "texture", "texture_period", "octaves", "persistence", "texture_value",
            "shading", "highlight_x", "highlight_y", "falloff", "specular", "albedo", "ambient",
            "noise_std", "seed", "width", "height", "focal_px", "baseline_mm",
        ];
        if let Some(k) = kv.keys().find(|k| !known.contains(k)) {
            return Err(Error::Scene(format!("unknown key `{k}`")));
        }
        let num = |key: &str, default: f64| -> Result<f64> {
            Ok(kv
                .get::<f64>(key)
                .map_err(|e| Error::Scene(e.to_string()))?
                .unwrap_or(default))
        };
        let need = |key: &str| -> Result<f64> {
            kv.get::<f64>(key)
                .map_err(|e| Error::Scene(e.to_string()))?
                .ok_or_else(|| Error::Scene(format!("missing key `{key}`")))
        };
        let surface = match kv.raw("surface").unwrap_or("plane") {
            "plane" => Surface::Plane {
                disparity: need("disparity")?,
            },
            "slanted_plane" => Surface::SlantedPlane {
                d0: need("d0")?,
                gradient: (num("gradient_x", 0.0)?, num("gradient_y", 0.0)?),
            },
            "sphere_patch" => Surface::SpherePatch {
                center_depth: num("center_depth", 250.0)?,
                radius: num("radius", 100.0)?,
            },
            other => return Err(Error::Scene(format!("unknown surface `{other}`"))),
        };
        let texture = match kv.raw("texture").unwrap_or("noise") {
            "noise" => Texture::Noise {
                period: num("texture_period", 12.0)?,
                octaves: num("octaves", 3.0)? as u32,
                persistence: num("persistence", 0.5)?,
            },
            "checker" => Texture::Checker {
                period: num("texture_period", 8.0)?,
            },
            "constant" => Texture::Constant {
                value: num("texture_value", 0.5)?,
            },
            other => return Err(Error::Scene(format!("unknown texture `{other}`"))),
        };
        let width = num("width", 640.0)?;
        let height = num("height", 480.0)?;
        if !(width >= 1.0 && height >= 1.0 && width.fract() == 0.0 && height.fract() == 0.0) {
            return Err(Error::Scene(format!("invalid size {width}x{height}")));
        }
        let (width, height) = (width as usize, height as usize);
        let shading = match kv.raw("shading").unwrap_or("diffuse") {
            "diffuse" => Shading::Diffuse,
            "nonlambertian" => Shading::NonLambertian {
                highlight_center: (
                    num("highlight_x", width as f64 / 2.0)?,
                    num("highlight_y", height as f64 / 2.0)?,
                ),
                falloff: num("falloff", 40.0)?,
                specular: num("specular", 0.5)?,
            },
            other => return Err(Error::Scene(format!("unknown shading `{other}`"))),
        };
        let seed = kv
            .get::<u64>("seed")
            .map_err(|e| Error::Scene(e.to_string()))?
            .unwrap_or(0);
        let scene = SyntheticScene {
            surface,
            texture,
            shading,
            albedo: num("albedo", 0.9)?,
            ambient: num("ambient", 0.2)?,
            noise_std: num("noise_std", 0.0)?,
            seed,
        };
        scene.validate()?;
        let cam = CameraParams::new(num("focal_px", 500.0)?, num("baseline_mm", 5.0)?)
            .map_err(|e| Error::Scene(e.to_string()))?;
        Ok(Self {
            name: kv.raw("name").unwrap_or(default_name).to_string(),
            scene,
            geometry: RigGeometry::new(cam, width, height),
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| match e.kind() {
            std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
            _ => Error::Io(e),
        })?;
        let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("scene");
        Self::parse(&text, stem)
    }

    pub fn render(&self) -> Result<BenchFrame> {
        let pair = render_scene(&self.scene, &self.geometry)?;
        Ok(BenchFrame {
            name: self.name.clone(),
            left: pair.left,
            right: pair.right,
            reference_depth: pair.depth,
            cam: self.geometry.cam,
        })
    }
}

/// Depth-error summary of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameMetrics {
    /// `None` when no pixel was valid.
    pub mean_err: Option<f64>,
    pub median_err: Option<f64>,
    pub valid_px: usize,
    pub runtime_ms: f64,
    /// Fraction of pixels with error within `1.96 sigma`; only with sigma.
    pub coverage_rate: Option<f64>,
}

impl FrameMetrics {
    pub fn to_row(&self, frame: &str) -> MetricsRow {
        MetricsRow {
            frame: frame.to_string(),
            mean_err: self.mean_err,
            median_err: self.median_err,
            valid_px: self.valid_px,
            runtime_ms: self.runtime_ms,
            coverage_rate: self.coverage_rate,
        }
    }
}

/// Median of a non-empty slice; averages the middle pair for even lengths.
pub fn median(values: &mut [f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    values.sort_by(f64::total_cmp);
    let n = values.len();
    Some(if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    })
}

/// Absolute depth error over pixels valid in both estimate and reference.
pub fn compute_metrics(estimate: &DepthResult, reference: &Field, runtime_ms: f64) -> Result<FrameMetrics> {
    if (estimate.width, estimate.height) != (reference.width, reference.height) {
        return Err(Error::DimensionMismatch {
            left: (estimate.width, estimate.height),
            right: (reference.width, reference.height),
        });
    }
    let mut errors = Vec::new();
    let mut covered = 0usize;
    for i in 0..estimate.depth.len() {
        if !(estimate.valid[i] && reference.valid[i]) {
            continue;
        }
        let e = (estimate.depth[i] - reference.values[i]).abs();
        if let Some(sigma) = &estimate.sigma {
            if e <= 1.96 * sigma[i] {
                covered += 1;
            }
        }
        errors.push(e);
    }
    let n = errors.len();
    let mean_err = (n > 0).then(|| errors.iter().sum::<f64>() / n as f64);
    let coverage_rate = match (&estimate.sigma, n) {
        (Some(_), n) if n > 0 => Some(covered as f64 / n as f64),
        _ => None,
    };
    Ok(FrameMetrics {
        mean_err,
        median_err: median(&mut errors),
        valid_px: n,
        runtime_ms,
        coverage_rate,
    })
}

/// Inputs for one benchmark frame.
#[derive(Debug, Clone)]
pub struct BenchFrame {
    pub name: String,
    pub left: GrayImage,
    pub right: GrayImage,
    pub reference_depth: Field,
    pub cam: CameraParams,
}

#[derive(Debug, Clone)]
pub struct FrameOutcome {
    pub name: String,
    pub metrics: Option<FrameMetrics>,
    /// Set when the pipeline failed on this frame.
    pub error: Option<String>,
    /// Disparity outputs were bit-identical across repetitions.
    pub deterministic: bool,
    pub timings_ms: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchReport {
    pub frames: Vec<FrameOutcome>,
}

impl BenchReport {
    pub fn failures(&self) -> impl Iterator<Item = &FrameOutcome> {
        self.frames.iter().filter(|f| f.error.is_some())
    }

    /// Per-frame averages over successful frames; `valid_px` is summed.
    pub fn aggregate(&self) -> FrameMetrics {
        let ok: Vec<&FrameMetrics> = self.frames.iter().filter_map(|f| f.metrics.as_ref()).collect();
        let mean_of = |vals: Vec<f64>| (!vals.is_empty()).then(|| vals.iter().sum::<f64>() / vals.len() as f64);
        FrameMetrics {
            mean_err: mean_of(ok.iter().filter_map(|m| m.mean_err).collect()),
            median_err: mean_of(ok.iter().filter_map(|m| m.median_err).collect()),
            valid_px: ok.iter().map(|m| m.valid_px).sum(),
            runtime_ms: mean_of(ok.iter().map(|m| m.runtime_ms).collect()).unwrap_or(f64::NAN),
            coverage_rate: mean_of(ok.iter().filter_map(|m| m.coverage_rate).collect()),
        }
    }

    /// One row per frame followed by an `aggregate` row. Failed frames
    /// appear with `valid_px = 0` and empty error columns.
    pub fn rows(&self) -> Vec<MetricsRow> {
        let mut rows: Vec<MetricsRow> = self
            .frames
            .iter()
            .map(|f| match &f.metrics {
                Some(m) => m.to_row(&f.name),
                None => MetricsRow {
                    frame: f.name.clone(),
                    mean_err: None,
                    median_err: None,
                    valid_px: 0,
                    runtime_ms: f64::NAN,
                    coverage_rate: None,
                },
            })
            .collect();
        rows.push(self.aggregate().to_row("aggregate"));
        rows
    }
}

/// Runs the matcher on one frame and converts to depth; this is the timed core.
pub fn match_frame(matcher: &Matcher, frame: &BenchFrame) -> Result<DepthResult> {
    let result = matcher.run(&frame.left, &frame.right)?;
    Ok(result.depth(&frame.cam))
}

/// Times the matching core `repetitions` times per frame and reports the
/// mean runtime with the depth metrics of the first repetition.
pub fn run_benchmark(frames: &[BenchFrame], config: &PipelineConfig, repetitions: usize) -> Result<BenchReport> {
    if repetitions == 0 {
        return Err(Error::Config("repetitions must be at least 1".into()));
    }
    let matcher = Matcher::new(config.clone())?;
    let mut outcomes = Vec::with_capacity(frames.len());
    for frame in frames {
        let mut timings = Vec::with_capacity(repetitions);
        let mut first: Option<DepthResult> = None;
        let mut deterministic = true;
        let mut error = None;
        for _ in 0..repetitions {
            let start = Instant::now();
            let out = match_frame(&matcher, frame);
            timings.push(start.elapsed().as_secs_f64() * 1e3);
            match out {
                Ok(depth) => match &first {
                    Some(prev) => deterministic &= same_bits(prev, &depth),
                    None => first = Some(depth),
                },
                Err(e) => {
                    error = Some(e.to_string());
                    break;
                }
            }
        }
        let runtime_ms = timings.iter().sum::<f64>() / timings.len() as f64;
        let metrics = match (&error, &first) {
            (None, Some(depth)) => match compute_metrics(depth, &frame.reference_depth, runtime_ms) {
                Ok(m) => Some(m),
                Err(e) => {
                    error = Some(e.to_string());
                    None
                }
            },
            _ => None,
        };
        outcomes.push(FrameOutcome {
            name: frame.name.clone(),
            metrics,
            error,
            deterministic,
            timings_ms: timings,
        });
    }
    Ok(BenchReport { frames: outcomes })
}

/// Loads a dataset directory laid out as `calib.txt` plus, per frame,
/// `<frame>_left.<ext>`, `<frame>_right.<ext>` (PNG or PGM) and
/// `<frame>_depth.pfm` with the reference depth. Frames are sorted by name.
#[cfg(feature = "image-io")]
pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Vec<BenchFrame>> {
    use crate::io::{load_calibration, load_stereo_pair, read_pfm};
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::NotFound(dir.to_path_buf()));
    }
    let calib = load_calibration(dir.join("calib.txt"))?;
    let cam = calib.camera()?;
    let mut names: Vec<(String, std::path::PathBuf)> = Vec::new();
    for entry in std::fs::read_dir(dir)? {
        let path = entry?.path();
        let Some(file) = path.file_name().and_then(|f| f.to_str()) else {
            continue;
        };
        let Some((stem, ext)) = file.rsplit_once('.') else {
            continue;
        };
        if !matches!(ext.to_ascii_lowercase().as_str(), "png" | "pgm") {
            continue;
        }
        if let Some(frame) = stem.strip_suffix("_left") {
            names.push((frame.to_string(), path.clone()));
        }
    }
    names.sort();
    let mut frames = Vec::with_capacity(names.len());
    for (name, left_path) in names {
        let ext = left_path.extension().and_then(|e| e.to_str()).unwrap_or("png");
        let right_path = dir.join(format!("{name}_right.{ext}"));
        let (left, right) = load_stereo_pair(&left_path, &right_path)?;
        calib.check_dims(left.width(), left.height())?;
        let reference_depth = read_pfm(dir.join(format!("{name}_depth.pfm")))?;
        if (reference_depth.width, reference_depth.height) != left.dims() {
            return Err(Error::DimensionMismatch {
                left: left.dims(),
                right: (reference_depth.width, reference_depth.height),
            });
        }
        frames.push(BenchFrame {
            name,
            left,
            right,
            reference_depth,
            cam,
        });
    }
    Ok(frames)
}

/// Writes a frame in the layout read by [`load_dataset`].
#[cfg(feature = "image-io")]
pub fn write_dataset_frame(dir: impl AsRef<Path>, frame: &BenchFrame, width: usize, height: usize) -> Result<()> {
    use crate::io::{save_png, write_pfm};
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(
        dir.join("calib.txt"),
        format!(
            "focal_px = {}\nbaseline_mm = {}\nwidth = {width}\nheight = {height}\n",
            frame.cam.focal_length, frame.cam.baseline
        ),
    )?;
    save_png(&frame.left, dir.join(format!("{}_left.png", frame.name)))?;
    save_png(&frame.right, dir.join(format!("{}_right.png", frame.name)))?;
    write_pfm(&frame.reference_depth, dir.join(format!("{}_depth.pfm", frame.name)))
}

fn same_bits(a: &DepthResult, b: &DepthResult) -> bool {
    a.valid == b.valid
        && a.depth.len() == b.depth.len()
        && a.depth.iter().zip(&b.depth).all(|(x, y)| x.to_bits() == y.to_bits())
}

/// Converts a reference disparity map to depth with the given camera.
pub fn reference_depth(disparity: &Field, cam: &CameraParams) -> Field {
    disparity_to_depth(disparity, cam).as_field()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn geo(w: usize, h: usize) -> RigGeometry {
        RigGeometry::new(CameraParams::new(500.0, 5.0).unwrap(), w, h)
    }

    #[test]
    fn plane_reference_maps_are_constant() {
        let scene = SyntheticScene::new(Surface::Plane { disparity: 8.0 })
            .with_texture(Texture::Checker { period: 8.0 });
        let pair = render_scene(&scene, &geo(64, 48)).unwrap();
        assert!(pair.disparity.values.iter().all(|&d| (d - 8.0).abs() < 1e-12));
        assert!(pair.depth.values.iter().all(|&z| (z - 2500.0 / 8.0).abs() < 1e-9));
    }

    #[test]
    fn plane_warp_is_an_integer_shift() {
        let scene = SyntheticScene::new(Surface::Plane { disparity: 5.0 });
        let pair = render_scene(&scene, &geo(40, 10)).unwrap();
        for y in 0..10 {
            for x in 0..35 {
                let l = pair.left.get(x, y);
                let r = pair.right.get(x + 5, y);
                assert!((l - r).abs() < 1e-9, "({x},{y}) {l} vs {r}");
            }
        }
    }

    #[test]
    fn oversized_disparity_is_an_error() {
        let scene = SyntheticScene::new(Surface::Plane { disparity: 40.0 });
        assert!(matches!(render_scene(&scene, &geo(32, 8)), Err(Error::Scene(_))));
    }

    #[test]
    fn invalid_scene_parameters() {
        let folded = SyntheticScene::new(Surface::SlantedPlane {
            d0: 5.0,
            gradient: (-1.5, 0.0),
        });
        assert!(render_scene(&folded, &geo(16, 16)).is_err());
        let sphere = SyntheticScene::new(Surface::SpherePatch {
            center_depth: 50.0,
            radius: 60.0,
        });
        assert!(render_scene(&sphere, &geo(16, 16)).is_err());
    }

    #[test]
    fn noise_texture_is_seeded_and_bounded() {
        let t = Texture::Noise {
            period: 12.0,
            octaves: 3,
            persistence: 0.5,
        };
        let a: Vec<f64> = (0..200).map(|i| t.eval(7, i as f64 * 0.37, i as f64 * 0.11)).collect();
        let b: Vec<f64> = (0..200).map(|i| t.eval(7, i as f64 * 0.37, i as f64 * 0.11)).collect();
        let c: Vec<f64> = (0..200).map(|i| t.eval(8, i as f64 * 0.37, i as f64 * 0.11)).collect();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert!(a.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn sensor_noise_is_reproducible() {
        let scene = SyntheticScene::new(Surface::Plane { disparity: 4.0 })
            .with_noise(0.02)
            .with_seed(3);
        let a = render_scene(&scene, &geo(24, 12)).unwrap();
        let b = render_scene(&scene, &geo(24, 12)).unwrap();
        assert_eq!(a.left.data(), b.left.data());
        let clean = render_scene(&scene.with_noise(0.0), &geo(24, 12)).unwrap();
        assert_ne!(a.left.data(), clean.left.data());
    }

    #[test]
    fn nonlambertian_highlight_brightens_the_centre() {
        let base = SyntheticScene::new(Surface::Plane { disparity: 4.0 })
            .with_texture(Texture::Constant { value: 0.5 });
        let lit = base.with_shading(Shading::NonLambertian {
            highlight_center: (16.0, 8.0),
            falloff: 4.0,
            specular: 0.3,
        });
        let g = geo(32, 16);
        let a = render_scene(&base, &g).unwrap();
        let b = render_scene(&lit, &g).unwrap();
        assert!(b.left.get(16, 8) > a.left.get(16, 8) + 0.25);
        assert!((b.left.get(0, 0) - a.left.get(0, 0)).abs() < 0.01);
    }

    #[test]
    fn metrics_examples() {
        let reference = Field::filled(3, 1, 10.0);
        let exact = DepthResult {
            width: 3,
            height: 1,
            depth: vec![10.0; 3],
            valid: vec![true; 3],
            sigma: None,
        };
        let m = compute_metrics(&exact, &reference, 1.0).unwrap();
        assert_eq!((m.mean_err, m.median_err, m.valid_px), (Some(0.0), Some(0.0), 3));
        assert_eq!(m.coverage_rate, None);

        let off = DepthResult {
            depth: vec![11.0, 8.0, 19.0],
            sigma: Some(vec![f64::INFINITY; 3]),
            ..exact.clone()
        };
        let m = compute_metrics(&off, &reference, 1.0).unwrap();
        assert_eq!(m.mean_err, Some(4.0));
        assert_eq!(m.median_err, Some(2.0));
        assert_eq!(m.coverage_rate, Some(1.0));

        let none = DepthResult {
            valid: vec![false; 3],
            ..exact
        };
        let m = compute_metrics(&none, &reference, 1.0).unwrap();
        assert_eq!((m.valid_px, m.mean_err, m.median_err), (0, None, None));
    }

    #[test]
    fn scene_file_parsing() {
        let spec = SceneSpec::parse(
            "# sphere\nsurface = sphere_patch\ncenter_depth = 250\nradius = 100\nshading = nonlambertian\nwidth = 64\nheight = 48\n",
            "s",
        )
        .unwrap();
        assert_eq!(spec.name, "s");
        assert_eq!((spec.geometry.width, spec.geometry.height), (64, 48));
        assert!(matches!(spec.scene.shading, Shading::NonLambertian { .. }));
        assert!(SceneSpec::parse("surface = plane", "x").is_err());
        assert!(SceneSpec::parse("surface = torus", "x").is_err());
        assert!(SceneSpec::parse("surface = plane\ndisparity = 4\ncolour = red", "x").is_err());
    }

    #[test]
    fn benchmark_rows_and_zero_reps() {
        let spec = SceneSpec::parse("disparity = 4\nwidth = 96\nheight = 64", "p").unwrap();
        let frame = spec.render().unwrap();
        let cfg = PipelineConfig {
            coarsest_exp: 2,
            ..Default::default()
        };
        assert!(matches!(run_benchmark(std::slice::from_ref(&frame), &cfg, 0), Err(Error::Config(_))));
        let report = run_benchmark(&[frame.clone(), frame], &cfg, 2).unwrap();
        let rows = report.rows();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[2].frame, "aggregate");
        assert!(report.frames.iter().all(|f| f.deterministic && f.timings_ms.len() == 2));
    }

    #[test]
    fn benchmark_continues_after_failure() {
        let good = SceneSpec::parse("disparity = 4\nwidth = 96\nheight = 64", "ok").unwrap().render().unwrap();
        let mut tiny = good.clone();
        tiny.name = "tiny".into();
        tiny.left = GrayImage::constant(8, 8, 0.5).unwrap();
        tiny.right = GrayImage::constant(8, 8, 0.5).unwrap();
        let cfg = PipelineConfig {
            coarsest_exp: 2,
            ..Default::default()
        };
        let report = run_benchmark(&[tiny, good], &cfg, 1).unwrap();
        assert!(report.frames[0].error.is_some());
        assert!(report.frames[1].metrics.is_some());
        assert_eq!(report.failures().count(), 1);
    }

    #[cfg(feature = "image-io")]
    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let spec = SceneSpec::parse("disparity = 6\nwidth = 48\nheight = 32\nname = p6", "x").unwrap();
        let frame = spec.render().unwrap();
        write_dataset_frame(dir.path(), &frame, 48, 32).unwrap();
        let frames = load_dataset(dir.path()).unwrap();
        assert_eq!(frames.len(), 1);
        assert_eq!(frames[0].name, "p6");
        assert_eq!(frames[0].cam, frame.cam);
        let back = frames[0].left.data();
        assert!(back.iter().zip(frame.left.data()).all(|(a, b)| (a - b).abs() <= 0.5 / 255.0 + 1e-12));
        assert!(matches!(load_dataset(dir.path().join("missing")), Err(Error::NotFound(_))));
    }
}
