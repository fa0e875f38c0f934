//! Ground-truth augmentation: discretized Gaussian blur for atmospheric
//! turbulence, additive sky-glow noise, exact dihedral transforms,
//! brightness variation and center zoom, composed into exactly 36
//! deterministic variants per reference image.
//!
//! All operations work in the `[0, 1]` unit domain and clip back into it.
//! Each variant's randomness comes from (plan seed, variant index), so the
//! variant list is a pure function of its inputs in any evaluation order.

use crate::config::{derive_seed, derive_seed_indexed};
use crate::dataset::{Domain, Image};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use std::fmt;

/// Exactly this many variants per reference image.
pub const VARIANT_COUNT: usize = 36;

#[derive(Debug, Clone, PartialEq)]
pub enum AugmentError {
    InvalidParam(String),
    EmptyImage,
    WrongDomain { expected: Domain, actual: Domain },
    PlanLength(usize),
}

impl fmt::Display for AugmentError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AugmentError::InvalidParam(reason) => write!(f, "invalid parameter: {reason}"),
            AugmentError::EmptyImage => write!(f, "empty image"),
            AugmentError::WrongDomain { expected, actual } => write!(
                f,
                "image must be in the {} domain, got {}",
                expected.name(),
                actual.name()
            ),
            AugmentError::PlanLength(n) => {
                write!(f, "augment plan must have {VARIANT_COUNT} variants, got {n}")
            }
        }
    }
}

impl std::error::Error for AugmentError {}

fn require_unit(image: &Image) -> Result<(), AugmentError> {
    if image.domain() != Domain::Unit {
        return Err(AugmentError::WrongDomain {
            expected: Domain::Unit,
            actual: image.domain(),
        });
    }
    Ok(())
}

/// Discretized 2-D Gaussian on the grid `[-k, k] x [-k, k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKernel {
    pub sigma: f64,
    pub radius: usize,
    /// Row-major `(2k+1) x (2k+1)` values.
    pub values: Vec<f64>,
    pub normalized: bool,
}

impl GaussianKernel {
    pub fn side(&self) -> usize {
        2 * self.radius + 1
    }

    pub fn at(&self, i: i64, j: i64) -> f64 {
        let k = self.radius as i64;
        self.values[((i + k) * (2 * k + 1) + (j + k)) as usize]
    }
}

/// `G(i, j) = exp(-(i^2 + j^2) / (2 sigma^2)) / (2 pi sigma^2)`, optionally
/// divided by its sum so the truncated kernel preserves total flux.
pub fn gaussian_kernel(sigma: f64, k: usize, normalize: bool) -> Result<GaussianKernel, AugmentError> {
    if sigma <= 0.0 {
        return Err(AugmentError::InvalidParam(format!(
            "kernel sigma must be > 0, got {sigma}"
        )));
    }
    if k == 0 {
        return Err(AugmentError::InvalidParam("kernel radius must be >= 1".into()));
    }
    let side = 2 * k + 1;
    let norm = 1.0 / (2.0 * std::f64::consts::PI * sigma * sigma);
    let mut values = vec![0.0; side * side];
    for i in 0..side {
        for j in 0..side {
            let di = i as f64 - k as f64;
            let dj = j as f64 - k as f64;
            values[i * side + j] = norm * (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
        }
    }
    if normalize {
        let sum: f64 = values.iter().sum();
        for v in &mut values {
            *v /= sum;
        }
    }
    Ok(GaussianKernel {
        sigma,
        radius: k,
        values,
        normalized: normalize,
    })
}

/// Default truncation radius `ceil(3 sigma)`, at least 1.
pub fn default_blur_radius(sigma: f64) -> usize {
    (3.0 * sigma).ceil().max(1.0) as usize
}

/// Mirror an index into `[0, n)` with edge repeat: -1 -> 0, n -> n-1.
fn reflect(mut i: i64, n: usize) -> usize {
    let n = n as i64;
    loop {
        if i < 0 {
            i = -1 - i;
        } else if i >= n {
            i = 2 * n - 1 - i;
        } else {
            return i as usize;
        }
    }
}

/// Blur with a normalized kernel under reflect padding. Flux (the pixel
/// sum) is preserved and the output stays in `[0, 1]`.
pub fn gaussian_blur(image: &Image, sigma: f64, k: usize) -> Result<Image, AugmentError> {
    require_unit(image)?;
    if image.height() == 0 || image.width() == 0 {
        return Err(AugmentError::EmptyImage);
    }
    let kernel = gaussian_kernel(sigma, k, true)?;
    let (h, w) = (image.height(), image.width());
    let kr = kernel.radius as i64;
    let mut out = Image::zeros(image.channels(), h, w, Domain::Unit);
    for c in 0..image.channels() {
        let src = image.channel(c);
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for di in -kr..=kr {
                    let sy = reflect(y as i64 + di, h);
                    for dj in -kr..=kr {
                        let sx = reflect(x as i64 + dj, w);
                        acc += src[sy * w + sx] * kernel.at(di, dj);
                    }
                }
                out.set(c, y, x, acc);
            }
        }
    }
    Ok(out)
}

/// Additive background noise parameters. `sigma_glow` is in normalized
/// `[0, 1]` intensity units.
#[derive(Debug, Clone, PartialEq)]
pub struct SkyGlowParams {
    pub sigma_glow: f64,
    pub seed: u64,
}

impl Default for SkyGlowParams {
    fn default() -> Self {
        SkyGlowParams {
            sigma_glow: 0.05,
            seed: 0,
        }
    }
}

/// `I_aug = clip(I + N, 0, 1)` with `N ~ Normal(0, sigma_glow^2)` i.i.d.
/// per pixel, seeded deterministically. `sigma_glow = 0` is the identity.
pub fn sky_glow(image: &Image, params: &SkyGlowParams) -> Result<Image, AugmentError> {
    require_unit(image)?;
    if params.sigma_glow < 0.0 {
        return Err(AugmentError::InvalidParam(format!(
            "sigma_glow must be >= 0, got {}",
            params.sigma_glow
        )));
    }
    if params.sigma_glow == 0.0 {
        return Ok(image.clone());
    }
    let mut rng = StdRng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, params.sigma_glow)
        .map_err(|e| AugmentError::InvalidParam(e.to_string()))?;
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
    }
    Ok(out)
}

/// Quarter-turn rotations, counter-clockwise.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Rotation {
    R0,
    R90,
    R180,
    R270,
}

impl Rotation {
    pub const ALL: [Rotation; 4] = [Rotation::R0, Rotation::R90, Rotation::R180, Rotation::R270];

    pub fn degrees(self) -> u32 {
        match self {
            Rotation::R0 => 0,
            Rotation::R90 => 90,
            Rotation::R180 => 180,
            Rotation::R270 => 270,
        }
    }
}

/// Exact pixel permutation: optional horizontal flip first, then a CCW
/// quarter-turn rotation. No interpolation; 90/270 transpose the shape.
pub fn dihedral(image: &Image, rotation: Rotation, flip: bool) -> Image {
    let (h, w) = (image.height(), image.width());
    let flipped = if flip {
        let mut out = image.clone();
        for c in 0..image.channels() {
            for y in 0..h {
                for x in 0..w {
                    out.set(c, y, x, image.get(c, y, w - 1 - x));
                }
            }
        }
        out
    } else {
        image.clone()
    };
    match rotation {
        Rotation::R0 => flipped,
        Rotation::R180 => {
            let mut out = Image::zeros(image.channels(), h, w, image.domain());
            for c in 0..image.channels() {
                for y in 0..h {
                    for x in 0..w {
                        out.set(c, y, x, flipped.get(c, h - 1 - y, w - 1 - x));
                    }
                }
            }
            out
        }
        Rotation::R90 => {
            let mut out = Image::zeros(image.channels(), w, h, image.domain());
            for c in 0..image.channels() {
                for y in 0..w {
                    for x in 0..h {
                        out.set(c, y, x, flipped.get(c, x, w - 1 - y));
                    }
                }
            }
            out
        }
        Rotation::R270 => {
            let mut out = Image::zeros(image.channels(), w, h, image.domain());
            for c in 0..image.channels() {
                for y in 0..w {
                    for x in 0..h {
                        out.set(c, y, x, flipped.get(c, h - 1 - x, y));
                    }
                }
            }
            out
        }
    }
}

/// Elementwise multiply by `factor`, then clip to `[0, 1]`.
pub fn brightness(image: &Image, factor: f64) -> Image {
    assert!(factor > 0.0, "brightness factor must be > 0");
    let mut out = image.clone();
    for v in out.data_mut() {
        *v = (*v * factor).clamp(0.0, 1.0);
    }
    out
}

/// Bilinear resample about the image center; zoom-out pads with zeros,
/// zoom-in crops. Output shape is unchanged; factor 1.0 is the identity.
pub fn scale_zoom(image: &Image, factor: f64) -> Image {
    assert!(factor > 0.0, "zoom factor must be > 0");
    if factor == 1.0 {
        return image.clone();
    }
    let (h, w) = (image.height(), image.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut out = Image::zeros(image.channels(), h, w, image.domain());
    for c in 0..image.channels() {
        for y in 0..h {
            let sy = cy + (y as f64 - cy) / factor;
            for x in 0..w {
                let sx = cx + (x as f64 - cx) / factor;
                out.set(c, y, x, bilinear_zero_outside(image, c, sy, sx));
            }
        }
    }
    out
}

fn bilinear_zero_outside(image: &Image, c: usize, sy: f64, sx: f64) -> f64 {
    let (h, w) = (image.height() as i64, image.width() as i64);
    let y0 = sy.floor() as i64;
    let x0 = sx.floor() as i64;
    let wy = sy - y0 as f64;
    let wx = sx - x0 as f64;
    let mut acc = 0.0;
    for (dy, fy) in [(0, 1.0 - wy), (1, wy)] {
        for (dx, fx) in [(0, 1.0 - wx), (1, wx)] {
            let (yy, xx) = (y0 + dy, x0 + dx);
            if yy >= 0 && yy < h && xx >= 0 && xx < w {
                acc += fy * fx * image.get(c, yy as usize, xx as usize);
            }
        }
    }
    acc
}

/// Brightness sampling parameters: three multiplicative levels drawn from
/// `Normal(base_mean, jitter_sigma^2)`, clamped into `(0, 2]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BrightnessParams {
    pub base_mean: f64,
    pub jitter_sigma: f64,
}

impl Default for BrightnessParams {
    fn default() -> Self {
        BrightnessParams {
            base_mean: 0.9,
            jitter_sigma: 0.05,
        }
    }
}

/// One of the 36 variant descriptors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VariantSpec {
    pub rotation: Rotation,
    pub flip: bool,
    pub brightness_level: usize,
    pub scale: f64,
}

/// Deterministic description of the full 36-variant expansion:
/// 4 rotations x 3 brightness levels x 3 zoom scales, with a horizontal
/// flip on every odd-indexed variant; blur and sky glow apply to all.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentPlan {
    pub variants: Vec<VariantSpec>,
    pub brightness_factors: [f64; 3],
    pub blur_sigma: f64,
    pub glow_sigma: f64,
    pub seed: u64,
}

pub const ZOOM_SCALES: [f64; 3] = [1.0, 0.8, 1.2];

impl AugmentPlan {
    pub fn build(
        seed: u64,
        blur_sigma: f64,
        glow_sigma: f64,
        brightness: &BrightnessParams,
    ) -> Result<Self, AugmentError> {
        let mut rng = StdRng::seed_from_u64(derive_seed(seed, "brightness"));
        let normal = Normal::new(brightness.base_mean, brightness.jitter_sigma)
            .map_err(|e| AugmentError::InvalidParam(e.to_string()))?;
        let mut factors = [0.0; 3];
        for f in &mut factors {
            *f = normal.sample(&mut rng).clamp(1e-6, 2.0);
        }
        let mut variants = Vec::with_capacity(VARIANT_COUNT);
        for rotation in Rotation::ALL {
            for brightness_level in 0..3 {
                for scale in ZOOM_SCALES {
                    let idx = variants.len();
                    variants.push(VariantSpec {
                        rotation,
                        flip: idx % 2 == 1,
                        brightness_level,
                        scale,
                    });
                }
            }
        }
        Ok(AugmentPlan {
            variants,
            brightness_factors: factors,
            blur_sigma,
            glow_sigma,
            seed,
        })
    }
}

/// Expand one reference image into its 36 variants:
/// dihedral -> zoom -> brightness -> blur -> sky glow, each variant's glow
/// seeded from (plan seed, variant index).
pub fn augment_all(image: &Image, plan: &AugmentPlan) -> Result<Vec<Image>, AugmentError> {
    require_unit(image)?;
    if plan.variants.len() != VARIANT_COUNT {
        return Err(AugmentError::PlanLength(plan.variants.len()));
    }
    let mut out = Vec::with_capacity(VARIANT_COUNT);
    for (idx, v) in plan.variants.iter().enumerate() {
        let mut img = dihedral(image, v.rotation, v.flip);
        img = scale_zoom(&img, v.scale);
        img = brightness(&img, plan.brightness_factors[v.brightness_level]);
        if plan.blur_sigma > 0.0 {
            img = gaussian_blur(&img, plan.blur_sigma, default_blur_radius(plan.blur_sigma))?;
        }
        img = sky_glow(
            &img,
            &SkyGlowParams {
                sigma_glow: plan.glow_sigma,
                seed: derive_seed_indexed(plan.seed, "glow", idx as u64),
            },
        )?;
        out.push(img);
    }
    Ok(out)
}

#[cfg(test)]
mod tests;
