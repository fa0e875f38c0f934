//! Dataset construction: the image type and its value domains, bbox
//! crop-and-pad, domain normalization, the on-disk layout
//! `root/<object>/{mobil,gt}/NNNN.ppm` with bbox and catalog sidecars, a
//! synthetic star-field generator, and manifest building with seeded
//! train/val/test splits.

pub mod manifest;
pub mod netpbm;
pub mod starfield;

pub use manifest::{build_manifest, Manifest, ManifestEntry, Role, Split, SplitRatios};
pub use starfield::{synth_starfield, DegradeRecipe, StarFieldSpec};

use crate::tensor::Tensor;
use std::fmt;
use std::path::{Path, PathBuf};

/// Value domain an [`Image`] buffer lives in.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Domain {
    /// `[0, 255]`, as stored in 8-bit files.
    Raw255,
    /// `[0, 1]`, the working domain of augmentation and metrics.
    Unit,
    /// `[-1, 1]`, the model's input/output domain.
    Model,
}

impl Domain {
    pub fn name(self) -> &'static str {
        match self {
            Domain::Raw255 => "raw255",
            Domain::Unit => "unit",
            Domain::Model => "model",
        }
    }
}

#[derive(Debug)]
pub enum DatasetError {
    Io { path: PathBuf, message: String },
    Codec { path: PathBuf, reason: String },
    InvalidImage(String),
    BBoxOutsideImage,
    Catalog { line: usize, reason: String },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::Io { path, message } => {
                write!(f, "io error at {}: {message}", path.display())
            }
            DatasetError::Codec { path, reason } => {
                write!(f, "codec error at {}: {reason}", path.display())
            }
            DatasetError::InvalidImage(reason) => write!(f, "invalid image: {reason}"),
            DatasetError::BBoxOutsideImage => write!(f, "bounding box fully outside the image"),
            DatasetError::Catalog { line, reason } => {
                write!(f, "catalog line {line}: {reason}")
            }
        }
    }
}

impl std::error::Error for DatasetError {}

/// Channel-major floating-point raster with an explicit value domain.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<f64>,
    domain: Domain,
}

impl Image {
    pub fn new(
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<f64>,
        domain: Domain,
    ) -> Result<Self, DatasetError> {
        if !matches!(channels, 1 | 3 | 4) {
            return Err(DatasetError::InvalidImage(format!(
                "channels must be 1, 3 or 4, got {channels}"
            )));
        }
        if data.len() != channels * height * width {
            return Err(DatasetError::InvalidImage(format!(
                "buffer length {} != {channels}x{height}x{width}",
                data.len()
            )));
        }
        Ok(Image {
            channels,
            height,
            width,
            data,
            domain,
        })
    }

    pub fn zeros(channels: usize, height: usize, width: usize, domain: Domain) -> Self {
        Image {
            channels,
            height,
            width,
            data: vec![0.0; channels * height * width],
            domain,
        }
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn domain(&self) -> Domain {
        self.domain
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn get(&self, c: usize, y: usize, x: usize) -> f64 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn set(&mut self, c: usize, y: usize, x: usize, v: f64) {
        self.data[(c * self.height + y) * self.width + x] = v;
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        &self.data[c * self.height * self.width..][..self.height * self.width]
    }

    /// View as a `[C, H, W]` tensor (copies the buffer).
    pub fn to_tensor(&self) -> Tensor {
        Tensor::new(
            vec![self.channels, self.height, self.width],
            self.data.clone(),
        )
        .expect("image invariant")
    }

    /// Wrap a `[C, H, W]` tensor as an image in the given domain.
    pub fn from_tensor(t: &Tensor, domain: Domain) -> Result<Self, DatasetError> {
        if t.shape().len() != 3 {
            return Err(DatasetError::InvalidImage(format!(
                "expected rank-3 tensor, got shape {:?}",
                t.shape()
            )));
        }
        Image::new(
            t.shape()[0],
            t.shape()[1],
            t.shape()[2],
            t.data().to_vec(),
            domain,
        )
    }

    /// Affine map between value domains; identity when already there.
    /// The raw255 -> model -> raw255 round trip is exact to float precision.
    pub fn normalize(&self, to: Domain) -> Image {
        if self.domain == to {
            return self.clone();
        }
        let f: fn(f64) -> f64 = match (self.domain, to) {
            (Domain::Raw255, Domain::Unit) => |v| v / 255.0,
            (Domain::Unit, Domain::Raw255) => |v| v * 255.0,
            (Domain::Unit, Domain::Model) => |v| 2.0 * v - 1.0,
            (Domain::Model, Domain::Unit) => |v| (v + 1.0) / 2.0,
            (Domain::Raw255, Domain::Model) => |v| v / 127.5 - 1.0,
            (Domain::Model, Domain::Raw255) => |v| (v + 1.0) * 127.5,
            _ => unreachable!("identity handled above"),
        };
        Image {
            channels: self.channels,
            height: self.height,
            width: self.width,
            data: self.data.iter().map(|&v| f(v)).collect(),
            domain: to,
        }
    }

    /// Clamp every value into the declared domain's range.
    pub fn clip_to_domain(&mut self) {
        let (lo, hi) = match self.domain {
            Domain::Raw255 => (0.0, 255.0),
            Domain::Unit => (0.0, 1.0),
            Domain::Model => (-1.0, 1.0),
        };
        for v in &mut self.data {
            *v = v.clamp(lo, hi);
        }
    }
}

/// Pixel-space bounding box; may extend past the image after extension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BBox {
    pub x: i64,
    pub y: i64,
    pub width: u32,
    pub height: u32,
}

impl BBox {
    /// Parse the four whitespace-separated integers of a `.bbox` sidecar.
    pub fn parse(text: &str) -> Result<Self, DatasetError> {
        let fields: Vec<&str> = text.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(DatasetError::InvalidImage(format!(
                "bbox sidecar needs 4 integers, got {}",
                fields.len()
            )));
        }
        let err = |reason: &str| DatasetError::InvalidImage(format!("bbox sidecar: {reason}"));
        let x = fields[0].parse().map_err(|_| err("bad x"))?;
        let y = fields[1].parse().map_err(|_| err("bad y"))?;
        let width: u32 = fields[2].parse().map_err(|_| err("bad width"))?;
        let height: u32 = fields[3].parse().map_err(|_| err("bad height"))?;
        if width == 0 || height == 0 {
            return Err(err("width and height must be positive"));
        }
        Ok(BBox {
            x,
            y,
            width,
            height,
        })
    }
}

/// Square crop of `target_side`, centered on the bbox center, zero-filled
/// where it extends past the source. Always exactly `target_side` square.
pub fn crop_and_pad(image: &Image, bbox: BBox, target_side: usize) -> Result<Image, DatasetError> {
    let (h, w) = (image.height as i64, image.width as i64);
    let intersects = bbox.x < w
        && bbox.y < h
        && bbox.x + bbox.width as i64 > 0
        && bbox.y + bbox.height as i64 > 0;
    if !intersects {
        return Err(DatasetError::BBoxOutsideImage);
    }
    let cx = bbox.x + bbox.width as i64 / 2;
    let cy = bbox.y + bbox.height as i64 / 2;
    let x0 = cx - (target_side as i64) / 2;
    let y0 = cy - (target_side as i64) / 2;

    let mut out = Image::zeros(image.channels, target_side, target_side, image.domain);
    for c in 0..image.channels {
        for oy in 0..target_side {
            let sy = y0 + oy as i64;
            if sy < 0 || sy >= h {
                continue;
            }
            let sx_lo = x0.max(0);
            let sx_hi = (x0 + target_side as i64).min(w);
            if sx_lo >= sx_hi {
                continue;
            }
            let src_base = (c as i64 * h + sy) * w;
            let dst_base = (c * target_side + oy) * target_side;
            let dst_off = (sx_lo - x0) as usize;
            let len = (sx_hi - sx_lo) as usize;
            let src = &image.data[(src_base + sx_lo) as usize..][..len];
            out.data[dst_base + dst_off..dst_base + dst_off + len].copy_from_slice(src);
        }
    }
    Ok(out)
}

/// Bilinear resize to a new size (used to upscale degraded fields and to
/// bring mismatched inputs to the training side).
pub fn resize_bilinear(image: &Image, new_h: usize, new_w: usize) -> Image {
    if new_h == image.height && new_w == image.width {
        return image.clone();
    }
    let mut out = Image::zeros(image.channels, new_h, new_w, image.domain);
    let sy = image.height as f64 / new_h as f64;
    let sx = image.width as f64 / new_w as f64;
    for c in 0..image.channels {
        for oy in 0..new_h {
            // Pixel-center alignment.
            let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, image.height as f64 - 1.0);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(image.height - 1);
            let wy = fy - y0 as f64;
            for ox in 0..new_w {
                let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, image.width as f64 - 1.0);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(image.width - 1);
                let wx = fx - x0 as f64;
                let v = (1.0 - wy) * (1.0 - wx) * image.get(c, y0, x0)
                    + (1.0 - wy) * wx * image.get(c, y0, x1)
                    + wy * (1.0 - wx) * image.get(c, y1, x0)
                    + wy * wx * image.get(c, y1, x1);
                out.set(c, oy, ox, v);
            }
        }
    }
    out
}

/// One catalog target: name, ICRS coordinates, and whether reference
/// imagery exists for paired training.
#[derive(Debug, Clone, PartialEq)]
pub struct ObjectEntry {
    pub name: String,
    pub ra_deg: f64,
    pub dec_deg: f64,
    pub paired: bool,
}

/// Parse a catalog: one `name ra dec paired` record per line, `#` comments.
pub fn parse_catalog(text: &str) -> Result<Vec<ObjectEntry>, DatasetError> {
    let mut entries = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split_whitespace().collect();
        if fields.len() != 4 {
            return Err(DatasetError::Catalog {
                line: i + 1,
                reason: format!("expected 4 fields, got {}", fields.len()),
            });
        }
        let ra_deg: f64 = fields[1].parse().map_err(|_| DatasetError::Catalog {
            line: i + 1,
            reason: "bad ra".into(),
        })?;
        let dec_deg: f64 = fields[2].parse().map_err(|_| DatasetError::Catalog {
            line: i + 1,
            reason: "bad dec".into(),
        })?;
        let paired: bool = fields[3].parse().map_err(|_| DatasetError::Catalog {
            line: i + 1,
            reason: "paired flag must be true or false".into(),
        })?;
        if !(0.0..360.0).contains(&ra_deg) || !(-90.0..=90.0).contains(&dec_deg) {
            return Err(DatasetError::Catalog {
                line: i + 1,
                reason: format!("coordinates out of range: ra {ra_deg}, dec {dec_deg}"),
            });
        }
        entries.push(ObjectEntry {
            name: fields[0].to_string(),
            ra_deg,
            dec_deg,
            paired,
        });
    }
    Ok(entries)
}

pub fn load_catalog(path: &Path) -> Result<Vec<ObjectEntry>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(|e| DatasetError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_catalog(&text)
}

#[cfg(test)]
mod tests;
