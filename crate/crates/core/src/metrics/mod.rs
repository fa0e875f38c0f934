//! Quantitative evaluation: Fréchet distance between feature Gaussians
//! with a deterministic seeded extractor, PSNR, and stellar morphology
//! statistics.
//!
//! The feature extractor is NOT an Inception network: absolute distance
//! values are not comparable to scores computed with Inception features.
//! Relative comparisons between image sets under the same extractor spec
//! remain meaningful.

pub mod linalg;
pub mod morphology;

pub use linalg::{fid, matrix_sqrt_psd};
pub use morphology::{morphology, Morphology, Peak};

use crate::dataset::{Domain, Image};
use crate::tensor::{conv_forward, ConvSpec, Tensor};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use std::fmt;

#[derive(Debug, Clone, PartialEq)]
pub enum MetricsError {
    EmptyInput,
    TooFewSamples(usize),
    DimensionMismatch { left: usize, right: usize },
    ShapeMismatch(String),
    NotSymmetric,
    NegativeEigenvalue(f64),
    WrongDomain,
}

impl fmt::Display for MetricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricsError::EmptyInput => write!(f, "empty image list"),
            MetricsError::TooFewSamples(n) => {
                write!(f, "need at least 2 samples to fit statistics, got {n}")
            }
            MetricsError::DimensionMismatch { left, right } => {
                write!(f, "feature dimensions differ: {left} vs {right}")
            }
            MetricsError::ShapeMismatch(s) => write!(f, "shape mismatch: {s}"),
            MetricsError::NotSymmetric => write!(f, "matrix is not symmetric"),
            MetricsError::NegativeEigenvalue(v) => {
                write!(f, "matrix has a strongly negative eigenvalue {v}")
            }
            MetricsError::WrongDomain => write!(f, "images must be in the unit domain"),
        }
    }
}

impl std::error::Error for MetricsError {}

/// Gaussian summary of a feature distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct FrechetStats {
    pub mean: Vec<f64>,
    /// Row-major `D x D` covariance, symmetric PSD.
    pub cov: Vec<f64>,
    pub count: usize,
}

impl FrechetStats {
    pub fn dim(&self) -> usize {
        self.mean.len()
    }
}

/// Which deterministic embedding to use and its output dimension.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExtractorMode {
    /// Global mean/std, per-channel means, 4x4 pooled grid.
    PixelStats,
    /// Two seeded frozen convolution+pool stages, flattened.
    FixedRandomConv,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureExtractorSpec {
    pub mode: ExtractorMode,
    pub seed: u64,
    pub dim: usize,
}

impl FeatureExtractorSpec {
    pub fn pixel_stats(seed: u64) -> Self {
        FeatureExtractorSpec {
            mode: ExtractorMode::PixelStats,
            seed,
            dim: 32,
        }
    }

    pub fn fixed_random_conv(seed: u64) -> Self {
        FeatureExtractorSpec {
            mode: ExtractorMode::FixedRandomConv,
            seed,
            dim: 64,
        }
    }
}

fn fit_dim(mut v: Vec<f64>, dim: usize) -> Vec<f64> {
    v.resize(dim, 0.0);
    v
}

/// Mean over channels as a single-plane buffer.
fn luminance(image: &Image) -> Vec<f64> {
    let plane = image.height() * image.width();
    let mut out = vec![0.0; plane];
    for c in 0..image.channels() {
        for (o, &v) in out.iter_mut().zip(image.channel(c)) {
            *o += v / image.channels() as f64;
        }
    }
    out
}

/// Average over an adaptive `bins x bins` grid (cells stay non-empty even
/// for tiny images).
fn adaptive_pool_grid(plane: &[f64], h: usize, w: usize, bins: usize) -> Vec<f64> {
    let mut out = Vec::with_capacity(bins * bins);
    for by in 0..bins {
        let y0 = (by * h / bins).min(h.saturating_sub(1));
        let y1 = ((by + 1) * h).div_ceil(bins).clamp(y0 + 1, h.max(1));
        for bx in 0..bins {
            let x0 = (bx * w / bins).min(w.saturating_sub(1));
            let x1 = ((bx + 1) * w).div_ceil(bins).clamp(x0 + 1, w.max(1));
            let mut acc = 0.0;
            let mut n = 0usize;
            for y in y0..y1 {
                for x in x0..x1 {
                    acc += plane[y * w + x];
                    n += 1;
                }
            }
            out.push(if n > 0 { acc / n as f64 } else { 0.0 });
        }
    }
    out
}

fn pixel_stats_features(image: &Image, dim: usize) -> Vec<f64> {
    let data = image.data();
    let n = data.len() as f64;
    let mean = data.iter().sum::<f64>() / n;
    let var = data.iter().map(|&v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let mut feats = vec![mean, var.sqrt()];
    for c in 0..image.channels() {
        let ch = image.channel(c);
        feats.push(ch.iter().sum::<f64>() / ch.len() as f64);
    }
    let lum = luminance(image);
    feats.extend(adaptive_pool_grid(&lum, image.height(), image.width(), 4));
    fit_dim(feats, dim)
}

struct FrozenConvStage {
    spec: ConvSpec,
    weight: Tensor,
    bias: Tensor,
}

fn frozen_stage(rng: &mut StdRng, cin: usize, cout: usize) -> FrozenConvStage {
    let spec = ConvSpec::two_d(cin, cout, 3, 1, 1);
    let std = 1.0 / ((9 * cin) as f64).sqrt();
    let dist = Normal::new(0.0, std).expect("positive std");
    let numel: usize = spec.weight_shape().iter().product();
    let weight = Tensor::new(spec.weight_shape(), (0..numel).map(|_| dist.sample(rng)).collect())
        .expect("shape");
    FrozenConvStage {
        spec,
        weight,
        bias: Tensor::zeros(vec![cout]),
    }
}

fn avg_pool_half(t: &Tensor) -> Tensor {
    let (c, h, w) = (t.shape()[0], t.shape()[1], t.shape()[2]);
    if h < 2 || w < 2 {
        return t.clone();
    }
    let (nh, nw) = (h / 2, w / 2);
    let mut out = vec![0.0; c * nh * nw];
    for ci in 0..c {
        for y in 0..nh {
            for x in 0..nw {
                let mut acc = 0.0;
                for dy in 0..2 {
                    for dx in 0..2 {
                        acc += t.data()[(ci * h + 2 * y + dy) * w + 2 * x + dx];
                    }
                }
                out[(ci * nh + y) * nw + x] = acc / 4.0;
            }
        }
    }
    Tensor::new(vec![c, nh, nw], out).expect("shape")
}

fn fixed_random_conv_features(image: &Image, seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = StdRng::seed_from_u64(seed);
    let stage1 = frozen_stage(&mut rng, image.channels(), 8);
    let stage2 = frozen_stage(&mut rng, 8, 4);

    let x = image.to_tensor();
    let y = conv_forward(&x, &stage1.spec, &stage1.weight, &stage1.bias).expect("frozen stage 1");
    let y = crate::tensor::activation(&y, crate::tensor::ActivationKind::Tanh);
    let y = avg_pool_half(&y);
    let y = conv_forward(&y, &stage2.spec, &stage2.weight, &stage2.bias).expect("frozen stage 2");
    let y = crate::tensor::activation(&y, crate::tensor::ActivationKind::Tanh);

    let (c, h, w) = (y.shape()[0], y.shape()[1], y.shape()[2]);
    let mut feats = Vec::with_capacity(c * 16);
    for ci in 0..c {
        let plane = &y.data()[ci * h * w..][..h * w];
        feats.extend(adaptive_pool_grid(plane, h, w, 4));
    }
    fit_dim(feats, dim)
}

/// Embed each image as a feature row. Deterministic per spec; all images
/// must share one shape and live in the unit domain.
pub fn extract_features(
    images: &[Image],
    spec: &FeatureExtractorSpec,
) -> Result<Vec<Vec<f64>>, MetricsError> {
    if images.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    let shape = (images[0].channels(), images[0].height(), images[0].width());
    for img in images {
        if img.domain() != Domain::Unit {
            return Err(MetricsError::WrongDomain);
        }
        if (img.channels(), img.height(), img.width()) != shape {
            return Err(MetricsError::ShapeMismatch(
                "images must all share one shape".into(),
            ));
        }
    }
    Ok(images
        .iter()
        .map(|img| match spec.mode {
            ExtractorMode::PixelStats => pixel_stats_features(img, spec.dim),
            ExtractorMode::FixedRandomConv => fixed_random_conv_features(img, spec.seed, spec.dim),
        })
        .collect())
}

/// Sample mean and unbiased covariance (divide by N-1), symmetrized.
pub fn fit_stats(features: &[Vec<f64>]) -> Result<FrechetStats, MetricsError> {
    if features.len() < 2 {
        return Err(MetricsError::TooFewSamples(features.len()));
    }
    let d = features[0].len();
    for row in features {
        if row.len() != d {
            return Err(MetricsError::DimensionMismatch {
                left: d,
                right: row.len(),
            });
        }
    }
    let n = features.len();
    let mut mean = vec![0.0; d];
    for row in features {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v / n as f64;
        }
    }
    let mut cov = vec![0.0; d * d];
    for row in features {
        for i in 0..d {
            let di = row[i] - mean[i];
            for j in 0..d {
                cov[i * d + j] += di * (row[j] - mean[j]) / (n - 1) as f64;
            }
        }
    }
    // Enforce exact symmetry against accumulation-order asymmetry.
    for i in 0..d {
        for j in (i + 1)..d {
            let s = (cov[i * d + j] + cov[j * d + i]) / 2.0;
            cov[i * d + j] = s;
            cov[j * d + i] = s;
        }
    }
    Ok(FrechetStats {
        mean,
        cov,
        count: n,
    })
}

/// `10 log10(1 / MSE)` on unit-domain images, capped at 100 dB (the value
/// reported for identical inputs).
pub fn psnr(reference: &Image, candidate: &Image) -> Result<f64, MetricsError> {
    if reference.domain() != Domain::Unit || candidate.domain() != Domain::Unit {
        return Err(MetricsError::WrongDomain);
    }
    if reference.channels() != candidate.channels()
        || reference.height() != candidate.height()
        || reference.width() != candidate.width()
    {
        return Err(MetricsError::ShapeMismatch(format!(
            "{}x{}x{} vs {}x{}x{}",
            reference.channels(),
            reference.height(),
            reference.width(),
            candidate.channels(),
            candidate.height(),
            candidate.width()
        )));
    }
    let mse: f64 = reference
        .data()
        .iter()
        .zip(candidate.data())
        .map(|(&a, &b)| (a - b) * (a - b))
        .sum::<f64>()
        / reference.data().len() as f64;
    if mse <= 1e-10 {
        return Ok(100.0);
    }
    Ok(-10.0 * mse.log10())
}

#[cfg(test)]
mod tests;
