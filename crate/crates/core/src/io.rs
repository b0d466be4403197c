//! Stereo pair and calibration loading, PFM maps and metrics CSV.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::depth::CameraParams;
use crate::error::{Error, Result};
use crate::field::Field;
#[cfg(feature = "image-io")]
use crate::image::GrayImage;
use crate::kv::KeyValues;

/// Value written for invalid pixels in PFM output.
pub const PFM_SENTINEL: f32 = -1.0;

/// Contents of a calibration file.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CalibrationFile {
    pub focal_length: f64,
    pub baseline: f64,
    pub width: usize,
    pub height: usize,
}

impl CalibrationFile {
    pub fn camera(&self) -> Result<CameraParams> {
        CameraParams::new(self.focal_length, self.baseline)
    }

    pub fn check_dims(&self, width: usize, height: usize) -> Result<()> {
        if (self.width, self.height) != (width, height) {
            return Err(Error::Calibration(format!(
                "calibration is {}x{} but images are {width}x{height}",
                self.width, self.height
            )));
        }
        Ok(())
    }

    pub fn parse(text: &str) -> Result<Self> {
        let kv = KeyValues::parse(text).map_err(|e| Error::Calibration(e.to_string()))?;
        fn req<T: std::str::FromStr>(kv: &KeyValues, key: &str) -> Result<T> {
            kv.get::<T>(key)
                .map_err(|e| Error::Calibration(e.to_string()))?
                .ok_or_else(|| Error::Calibration(format!("missing key `{key}`")))
        }
        let focal_length: f64 = req(&kv, "focal_px")?;
        let baseline: f64 = req(&kv, "baseline_mm")?;
        let width: f64 = req(&kv, "width")?;
        let height: f64 = req(&kv, "height")?;
        for (name, v) in [
            ("focal_px", focal_length),
            ("baseline_mm", baseline),
            ("width", width),
            ("height", height),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::Calibration(format!("`{name}` must be positive, got {v}")));
            }
        }
        for (name, v) in [("width", width), ("height", height)] {
            if v.fract() != 0.0 {
                return Err(Error::Calibration(format!("`{name}` must be an integer, got {v}")));
            }
        }
        Ok(Self {
            focal_length,
            baseline,
            width: width as usize,
            height: height as usize,
        })
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })
}

/// Reads and validates a `key = value` calibration file.
pub fn load_calibration(path: impl AsRef<Path>) -> Result<CalibrationFile> {
    let path = path.as_ref();
    let text = read_text(path).map_err(|e| match e {
        Error::NotFound(p) => Error::Calibration(format!("file not found: {}", p.display())),
        other => other,
    })?;
    CalibrationFile::parse(&text)
}

/// Loads one 8-bit grayscale/RGB PNG or PGM image.
#[cfg(feature = "image-io")]
pub fn load_image(path: impl AsRef<Path>) -> Result<GrayImage> {
    use image::DynamicImage;
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::NotFound(path.to_path_buf()));
    }
    let decode_err = |msg: String| Error::Decode {
        path: path.to_path_buf(),
        msg,
    };
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| decode_err(e.to_string()))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        DynamicImage::ImageLuma8(buf) => GrayImage::from_gray8(w, h, buf.as_raw()),
        DynamicImage::ImageLumaA8(buf) => {
            let rgba: Vec<u8> = buf
                .as_raw()
                .chunks_exact(2)
                .flat_map(|p| [p[0], p[0], p[0], p[1]])
                .collect();
            GrayImage::from_rgba8(w, h, &rgba)
        }
        DynamicImage::ImageRgb8(buf) => GrayImage::from_rgb8(w, h, buf.as_raw()),
        DynamicImage::ImageRgba8(buf) => GrayImage::from_rgba8(w, h, buf.as_raw()),
        other => Err(decode_err(format!("unsupported pixel format {:?}", other.color()))),
    }
}

/// Loads a rectified pair and checks that both images have the same size.
#[cfg(feature = "image-io")]
pub fn load_stereo_pair(
    left: impl AsRef<Path>,
    right: impl AsRef<Path>,
) -> Result<(GrayImage, GrayImage)> {
    let l = load_image(left)?;
    let r = load_image(right)?;
    if l.dims() != r.dims() {
        return Err(Error::DimensionMismatch {
            left: l.dims(),
            right: r.dims(),
        });
    }
    Ok((l, r))
}

/// Writes an 8-bit grayscale PNG (used for fixtures and previews).
#[cfg(feature = "image-io")]
pub fn save_png(img: &GrayImage, path: impl AsRef<Path>) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8)
        .collect();
    image::save_buffer(
        path.as_ref(),
        &bytes,
        img.width() as u32,
        img.height() as u32,
        image::ExtendedColorType::L8,
    )
    .map_err(|e| Error::Decode {
        path: path.as_ref().to_path_buf(),
        msg: e.to_string(),
    })
}

/// Serializes a field as little-endian grayscale PFM, rows bottom-to-top.
pub fn encode_pfm(field: &Field) -> Vec<u8> {
    let header = format!("Pf\n{} {}\n-1.0\n", field.width, field.height);
    let mut out = Vec::with_capacity(header.len() + field.values.len() * 4);
    out.extend_from_slice(header.as_bytes());
    for y in (0..field.height).rev() {
        for x in 0..field.width {
            let i = y * field.width + x;
            let v = if field.valid[i] {
                field.values[i] as f32
            } else {
                PFM_SENTINEL
            };
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_pfm(field: &Field, path: impl AsRef<Path>) -> Result<()> {
    let mut w = BufWriter::new(fs::File::create(path)?);
    w.write_all(&encode_pfm(field))?;
    w.flush()?;
    Ok(())
}

fn pfm_err(msg: impl Into<String>) -> Error {
    Error::Format {
        kind: "PFM",
        msg: msg.into(),
    }
}

/// Parses a single-channel PFM. Pixels equal to the sentinel become invalid.
pub fn decode_pfm(bytes: &[u8]) -> Result<Field> {
    let mut pos = 0;
    let mut token = || -> Result<&str> {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(pfm_err("truncated header"));
        }
        std::str::from_utf8(&bytes[start..pos]).map_err(|_| pfm_err("non-ASCII header"))
    };
    let magic = token()?;
    if magic != "Pf" {
        return Err(pfm_err(format!("expected `Pf`, found `{magic}`")));
    }
    let width: usize = token()?.parse().map_err(|_| pfm_err("bad width"))?;
    let height: usize = token()?.parse().map_err(|_| pfm_err("bad height"))?;
    let scale: f64 = token()?.parse().map_err(|_| pfm_err("bad scale"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(pfm_err("scale must be non-zero"));
    }
    pos += 1; // single whitespace byte after the scale
    let little = scale < 0.0;
    let n = width * height;
    let data = bytes.get(pos..).unwrap_or_default();
    if data.len() < n * 4 {
        return Err(pfm_err(format!("expected {} data bytes, found {}", n * 4, data.len())));
    }
    let mut field = Field::invalid(width, height);
    for (k, chunk) in data[..n * 4].chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (row, x) = (k / width, k % width);
        let y = height - 1 - row;
        if v != PFM_SENTINEL {
            field.set(x, y, v as f64);
        }
    }
    Ok(field)
}

pub fn read_pfm(path: impl AsRef<Path>) -> Result<Field> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| match e.kind() {
        std::io::ErrorKind::NotFound => Error::NotFound(path.to_path_buf()),
        _ => Error::Io(e),
    })?;
    decode_pfm(&bytes)
}

/// One row of the metrics table. Error columns are empty when undefined.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsRow {
    pub frame: String,
    pub mean_err: Option<f64>,
    pub median_err: Option<f64>,
    pub valid_px: usize,
    pub runtime_ms: f64,
    pub coverage_rate: Option<f64>,
}

pub const METRICS_HEADER: &str = "frame,mean_err,median_err,valid_px,runtime_ms,coverage_rate";

/// Writes CSV text including the header line, even for an empty table.
pub fn metrics_to_writer<W: Write>(rows: &[MetricsRow], w: W) -> Result<()> {
    let mut wtr = csv::WriterBuilder::new().has_headers(false).from_writer(w);
    wtr.write_record(METRICS_HEADER.split(','))?;
    for r in rows {
        wtr.serialize(r)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_metrics_csv(rows: &[MetricsRow], path: impl AsRef<Path>) -> Result<()> {
    metrics_to_writer(rows, fs::File::create(path)?)
}

pub fn read_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsRow>> {
    let mut rdr = csv::Reader::from_path(path)?;
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_owned).collect();
    if header.join(",") != METRICS_HEADER {
        return Err(Error::Format {
            kind: "metrics CSV",
            msg: format!("unexpected header `{}`", header.join(",")),
        });
    }
    rdr.deserialize().map(|r| r.map_err(Error::from)).collect()
}
