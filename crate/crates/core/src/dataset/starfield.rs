//! Synthetic star fields: Gaussian PSF blobs on a flat background, plus a
//! blur -> noise -> downscale -> upscale degradation that stands in for the
//! low-resolution capture path. Clean/degraded pairs are the desk-scale
//! training corpus.

use super::{resize_bilinear, DatasetError, Domain, Image};
use crate::augment;
use crate::config::derive_seed;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::{Distribution, Normal};

/// How a clean field is degraded into its low-resolution counterpart.
/// Zero blur, zero noise and downscale 1 make the recipe the identity.
#[derive(Debug, Clone, PartialEq)]
pub struct DegradeRecipe {
    pub blur_sigma: f64,
    pub noise_sigma: f64,
    pub downscale: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StarFieldSpec {
    pub side: usize,
    pub star_count: usize,
    /// Uniform range of per-star PSF sigmas, in pixels.
    pub psf_sigma: (f64, f64),
    /// Uniform range of star magnitudes; amplitude falls as 10^(-0.4 m)
    /// relative to the brightest.
    pub mag_range: (f64, f64),
    pub background: f64,
    pub recipe: DegradeRecipe,
    pub seed: u64,
}

impl StarFieldSpec {
    fn validate(&self) -> Result<(), DatasetError> {
        if self.side < 16 {
            return Err(DatasetError::InvalidImage(format!(
                "star field side must be >= 16, got {}",
                self.side
            )));
        }
        if self.star_count == 0 {
            return Err(DatasetError::InvalidImage("star count must be >= 1".into()));
        }
        if self.recipe.downscale == 0 || self.side % self.recipe.downscale != 0 {
            return Err(DatasetError::InvalidImage(format!(
                "downscale factor {} must divide side {}",
                self.recipe.downscale, self.side
            )));
        }
        Ok(())
    }
}

/// Peak amplitude of the brightest star above background.
const PEAK_AMPLITUDE: f64 = 0.8;

/// Deterministically place stars and return the (clean, degraded) pair.
pub fn synth_starfield(spec: &StarFieldSpec) -> Result<(Image, Image), DatasetError> {
    spec.validate()?;
    let mut rng = StdRng::seed_from_u64(derive_seed(spec.seed, "starfield"));
    let side = spec.side;
    let margin = (3.0 * spec.psf_sigma.1).ceil().min(side as f64 / 4.0);
    let min_sep = 5.0 * spec.psf_sigma.1;

    // Rejection-sampled positions keep stars resolvable as separate peaks;
    // after enough failures we accept overlap rather than loop forever.
    let mut stars: Vec<(f64, f64, f64, f64)> = Vec::with_capacity(spec.star_count);
    let mut attempts = 0;
    while stars.len() < spec.star_count {
        let y = rng.gen_range(margin..side as f64 - margin);
        let x = rng.gen_range(margin..side as f64 - margin);
        attempts += 1;
        let crowded = stars
            .iter()
            .any(|&(sy, sx, _, _)| ((sy - y).powi(2) + (sx - x).powi(2)).sqrt() < min_sep);
        if crowded && attempts < 200 * spec.star_count {
            continue;
        }
        let sigma = rng.gen_range(spec.psf_sigma.0..=spec.psf_sigma.1);
        let mag = rng.gen_range(spec.mag_range.0..=spec.mag_range.1);
        let amp = PEAK_AMPLITUDE * 10f64.powf(-0.4 * (mag - spec.mag_range.0));
        stars.push((y, x, sigma, amp));
    }

    let mut clean = Image::zeros(1, side, side, Domain::Unit);
    for v in clean.data_mut() {
        *v = spec.background;
    }
    for &(sy, sx, sigma, amp) in &stars {
        let r = (4.0 * sigma).ceil() as i64;
        let (cy, cx) = (sy.round() as i64, sx.round() as i64);
        for y in (cy - r).max(0)..(cy + r + 1).min(side as i64) {
            for x in (cx - r).max(0)..(cx + r + 1).min(side as i64) {
                let d2 = (y as f64 - sy).powi(2) + (x as f64 - sx).powi(2);
                let v = clean.get(0, y as usize, x as usize)
                    + amp * (-d2 / (2.0 * sigma * sigma)).exp();
                clean.set(0, y as usize, x as usize, v);
            }
        }
    }
    clean.clip_to_domain();

    let degraded = degrade(&clean, &spec.recipe, derive_seed(spec.seed, "degrade"))?;
    Ok((clean, degraded))
}

/// Apply the degradation recipe. Stages with trivial parameters are skipped
/// exactly, so the identity recipe returns a bit-identical copy.
pub fn degrade(clean: &Image, recipe: &DegradeRecipe, seed: u64) -> Result<Image, DatasetError> {
    let mut img = clean.clone();
    if recipe.blur_sigma > 0.0 {
        let k = augment::default_blur_radius(recipe.blur_sigma);
        img = augment::gaussian_blur(&img, recipe.blur_sigma, k)
            .map_err(|e| DatasetError::InvalidImage(e.to_string()))?;
    }
    if recipe.noise_sigma > 0.0 {
        let mut rng = StdRng::seed_from_u64(seed);
        let normal = Normal::new(0.0, recipe.noise_sigma)
            .map_err(|e| DatasetError::InvalidImage(e.to_string()))?;
        for v in img.data_mut() {
            *v = (*v + normal.sample(&mut rng)).clamp(0.0, 1.0);
        }
    }
    if recipe.downscale > 1 {
        let small = area_downscale(&img, recipe.downscale);
        img = resize_bilinear(&small, clean.height(), clean.width());
    }
    Ok(img)
}

/// Average non-overlapping `factor x factor` blocks.
fn area_downscale(image: &Image, factor: usize) -> Image {
    let (nh, nw) = (image.height() / factor, image.width() / factor);
    let mut out = Image::zeros(image.channels(), nh, nw, image.domain());
    let norm = 1.0 / (factor * factor) as f64;
    for c in 0..image.channels() {
        for oy in 0..nh {
            for ox in 0..nw {
                let mut acc = 0.0;
                for dy in 0..factor {
                    for dx in 0..factor {
                        acc += image.get(c, oy * factor + dy, ox * factor + dx);
                    }
                }
                out.set(c, oy, ox, acc * norm);
            }
        }
    }
    out
}
