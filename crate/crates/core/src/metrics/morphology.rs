//! Stellar morphology measurements: peak detection over a robust
//! background estimate, intensity-weighted centroids, and FWHM from the
//! radial profile. Shared by evaluation reports and the astrophysical
//! regularizer.

use super::MetricsError;
use crate::dataset::{Domain, Image};

/// A detected local maximum.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Peak {
    pub y: usize,
    pub x: usize,
    pub value: f64,
}

/// Morphology record for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct Morphology {
    pub total_flux: f64,
    pub background: f64,
    /// Peaks sorted brightest first.
    pub peaks: Vec<Peak>,
    /// Intensity-weighted centroid (y, x) per peak, 7x7 window.
    pub centroids: Vec<(f64, f64)>,
    /// Full width at half maximum per peak, when the profile crosses it.
    pub fwhm: Vec<Option<f64>>,
}

fn median_of(mut values: Vec<f64>) -> f64 {
    values.sort_by(|a, b| a.partial_cmp(b).expect("finite"));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        (values[n / 2 - 1] + values[n / 2]) / 2.0
    }
}

/// Window half-size for centroid estimation.
const CENTROID_HALF: i64 = 3;
/// Peaks closer than this merge into the brighter one.
const MERGE_RADIUS: f64 = 2.0;

fn luminance_plane(image: &Image) -> Vec<f64> {
    let plane = image.height() * image.width();
    let mut out = vec![0.0; plane];
    for c in 0..image.channels() {
        for (o, &v) in out.iter_mut().zip(image.channel(c)) {
            *o += v / image.channels() as f64;
        }
    }
    out
}

/// Strict 8-neighborhood local maxima above `median + 5 MAD`, merged
/// within [`MERGE_RADIUS`], brightest first.
pub fn find_peaks(plane: &[f64], h: usize, w: usize) -> (Vec<Peak>, f64) {
    let background = median_of(plane.to_vec());
    let mad = median_of(plane.iter().map(|&v| (v - background).abs()).collect());
    let threshold = background + 5.0 * mad;

    let mut candidates = Vec::new();
    for y in 1..h.saturating_sub(1) {
        for x in 1..w.saturating_sub(1) {
            let v = plane[y * w + x];
            if v <= threshold {
                continue;
            }
            let mut is_max = true;
            'scan: for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    if (dy, dx) == (0, 0) {
                        continue;
                    }
                    let n = plane[(y as i64 + dy) as usize * w + (x as i64 + dx) as usize];
                    if n >= v {
                        is_max = false;
                        break 'scan;
                    }
                }
            }
            if is_max {
                candidates.push(Peak { y, x, value: v });
            }
        }
    }
    candidates.sort_by(|a, b| b.value.partial_cmp(&a.value).expect("finite"));
    let mut peaks: Vec<Peak> = Vec::new();
    for c in candidates {
        let close = peaks.iter().any(|p| {
            let dy = p.y as f64 - c.y as f64;
            let dx = p.x as f64 - c.x as f64;
            (dy * dy + dx * dx).sqrt() < MERGE_RADIUS
        });
        if !close {
            peaks.push(c);
        }
    }
    (peaks, background)
}

/// Intensity-weighted centroid within a 7x7 window around a peak.
pub fn centroid(plane: &[f64], h: usize, w: usize, peak: Peak) -> (f64, f64) {
    let mut sy = 0.0;
    let mut sx = 0.0;
    let mut total = 0.0;
    for dy in -CENTROID_HALF..=CENTROID_HALF {
        let y = peak.y as i64 + dy;
        if y < 0 || y >= h as i64 {
            continue;
        }
        for dx in -CENTROID_HALF..=CENTROID_HALF {
            let x = peak.x as i64 + dx;
            if x < 0 || x >= w as i64 {
                continue;
            }
            let v = plane[y as usize * w + x as usize];
            sy += v * y as f64;
            sx += v * x as f64;
            total += v;
        }
    }
    if total <= 0.0 {
        (peak.y as f64, peak.x as f64)
    } else {
        (sy / total, sx / total)
    }
}

/// FWHM from the ring-averaged radial profile: first crossing of
/// `background + (peak - background)/2`, linearly interpolated.
fn fwhm_of(plane: &[f64], h: usize, w: usize, peak: Peak, background: f64) -> Option<f64> {
    let half = background + (peak.value - background) / 2.0;
    let max_r = (h.min(w) / 2).max(2);
    let mut prev = peak.value;
    for r in 1..max_r {
        let mut acc = 0.0;
        let mut count = 0usize;
        let rr = r as f64;
        let lo = rr - 0.5;
        let hi = rr + 0.5;
        let scan = r as i64 + 1;
        for dy in -scan..=scan {
            let y = peak.y as i64 + dy;
            if y < 0 || y >= h as i64 {
                continue;
            }
            for dx in -scan..=scan {
                let x = peak.x as i64 + dx;
                if x < 0 || x >= w as i64 {
                    continue;
                }
                let d = ((dy * dy + dx * dx) as f64).sqrt();
                if d >= lo && d < hi {
                    acc += plane[y as usize * w + x as usize];
                    count += 1;
                }
            }
        }
        if count == 0 {
            continue;
        }
        let ring = acc / count as f64;
        if ring < half {
            // Crossing between radius r-1 (prev) and r (ring).
            let frac = if prev > ring {
                ((prev - half) / (prev - ring)).clamp(0.0, 1.0)
            } else {
                0.0
            };
            return Some(2.0 * ((r - 1) as f64 + frac));
        }
        prev = ring;
    }
    None
}

/// Full morphology record of a unit-domain image: total flux, brightest
/// peaks, their centroids and FWHM estimates.
pub fn morphology(image: &Image) -> Result<Morphology, MetricsError> {
    if image.domain() != Domain::Unit {
        return Err(MetricsError::WrongDomain);
    }
    if image.height() == 0 || image.width() == 0 {
        return Err(MetricsError::EmptyInput);
    }
    let plane = luminance_plane(image);
    let (h, w) = (image.height(), image.width());
    let (peaks, background) = find_peaks(&plane, h, w);
    let centroids = peaks.iter().map(|&p| centroid(&plane, h, w, p)).collect();
    let fwhm = peaks
        .iter()
        .map(|&p| fwhm_of(&plane, h, w, p, background))
        .collect();
    Ok(Morphology {
        total_flux: plane.iter().sum::<f64>() * image.channels() as f64,
        background,
        peaks,
        centroids,
        fwhm,
    })
}
