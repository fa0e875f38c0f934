use super::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use rand_distr::StandardNormal;

fn random_unit_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    let mut rng = StdRng::seed_from_u64(seed);
    let data = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::new(c, h, w, data, Domain::Unit).unwrap()
}

#[test]
fn extractor_identical_images_identical_rows() {
    let img = random_unit_image(1, 3, 16, 16);
    for spec in [
        FeatureExtractorSpec::pixel_stats(9),
        FeatureExtractorSpec::fixed_random_conv(9),
    ] {
        let rows = extract_features(&[img.clone(), img.clone()], &spec).unwrap();
        assert_eq!(rows[0], rows[1]);
        assert_eq!(rows[0].len(), spec.dim);
    }
}

#[test]
fn extractor_pixel_stats_on_zero_image() {
    let img = Image::zeros(3, 8, 8, Domain::Unit);
    let spec = FeatureExtractorSpec::pixel_stats(1);
    let rows = extract_features(&[img], &spec).unwrap();
    assert!(rows[0].iter().all(|&v| v == 0.0));
}

#[test]
fn extractor_is_deterministic_per_seed() {
    let imgs: Vec<Image> = (0..4).map(|i| random_unit_image(20 + i, 3, 12, 12)).collect();
    let spec = FeatureExtractorSpec::fixed_random_conv(33);
    let a = extract_features(&imgs, &spec).unwrap();
    let b = extract_features(&imgs, &spec).unwrap();
    assert_eq!(a, b);
    let other = FeatureExtractorSpec::fixed_random_conv(34);
    let c = extract_features(&imgs, &other).unwrap();
    assert_ne!(a, c);
}

#[test]
fn extractor_rejects_empty_and_mixed_shapes() {
    let spec = FeatureExtractorSpec::pixel_stats(0);
    assert!(matches!(
        extract_features(&[], &spec),
        Err(MetricsError::EmptyInput)
    ));
    let a = random_unit_image(1, 1, 8, 8);
    let b = random_unit_image(2, 1, 9, 8);
    assert!(matches!(
        extract_features(&[a, b], &spec),
        Err(MetricsError::ShapeMismatch(_))
    ));
}

#[test]
fn fit_stats_hand_case() {
    // Points (0,0) and (2,0): mean (1,0); unbiased covariance [[2,0],[0,0]].
    let stats = fit_stats(&[vec![0.0, 0.0], vec![2.0, 0.0]]).unwrap();
    assert_eq!(stats.mean, vec![1.0, 0.0]);
    assert_eq!(stats.cov, vec![2.0, 0.0, 0.0, 0.0]);
    assert_eq!(stats.count, 2);
}

#[test]
fn fit_stats_identical_points_zero_covariance() {
    let rows = vec![vec![0.4, -1.0, 2.0]; 5];
    let stats = fit_stats(&rows).unwrap();
    assert!(stats.cov.iter().all(|&v| v == 0.0));
}

#[test]
fn fit_stats_whitened_samples_give_identity() {
    let mut rng = StdRng::seed_from_u64(11);
    let rows: Vec<Vec<f64>> = (0..10_000)
        .map(|_| (0..4).map(|_| rng.sample::<f64, _>(StandardNormal)).collect())
        .collect();
    let stats = fit_stats(&rows).unwrap();
    for i in 0..4 {
        for j in 0..4 {
            let expected = if i == j { 1.0 } else { 0.0 };
            let got = stats.cov[i * 4 + j];
            assert!(
                (got - expected).abs() < 0.06,
                "cov[{i}][{j}] = {got}, expected ~{expected}"
            );
        }
    }
}

#[test]
fn fit_stats_needs_two_samples() {
    assert!(matches!(
        fit_stats(&[vec![1.0, 2.0]]),
        Err(MetricsError::TooFewSamples(1))
    ));
}

#[test]
fn psnr_cap_and_formula() {
    let img = random_unit_image(3, 1, 8, 8);
    assert_eq!(psnr(&img, &img).unwrap(), 100.0);

    // Constant offset with MSE exactly 0.01 -> 20 dB.
    let a = Image::zeros(1, 10, 10, Domain::Unit);
    let b = Image::new(1, 10, 10, vec![0.1; 100], Domain::Unit).unwrap();
    assert!((psnr(&a, &b).unwrap() - 20.0).abs() < 1e-9);
}

#[test]
fn psnr_matches_independent_mse() {
    let a = random_unit_image(5, 3, 8, 8);
    let b = random_unit_image(6, 3, 8, 8);
    let mse: f64 = a
        .data()
        .iter()
        .zip(b.data())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.data().len() as f64;
    let expected = 10.0 * (1.0 / mse).log10();
    assert!((psnr(&a, &b).unwrap() - expected).abs() < 1e-9);
}

#[test]
fn psnr_rejects_shape_mismatch() {
    let a = random_unit_image(7, 1, 8, 8);
    let b = random_unit_image(8, 1, 8, 9);
    assert!(matches!(
        psnr(&a, &b),
        Err(MetricsError::ShapeMismatch(_))
    ));
}

fn gaussian_blob_image(side: usize, cy: f64, cx: f64, sigma: f64, amp: f64) -> Image {
    let mut img = Image::zeros(1, side, side, Domain::Unit);
    for y in 0..side {
        for x in 0..side {
            let d2 = (y as f64 - cy).powi(2) + (x as f64 - cx).powi(2);
            let v = img.get(0, y, x) + amp * (-d2 / (2.0 * sigma * sigma)).exp();
            img.set(0, y, x, v.min(1.0));
        }
    }
    img
}

#[test]
fn morphology_gaussian_blob_centroid_and_fwhm() {
    let img = gaussian_blob_image(32, 16.0, 16.0, 2.0, 0.9);
    let m = morphology(&img).unwrap();
    assert_eq!(m.peaks.len(), 1);
    let (cy, cx) = m.centroids[0];
    assert!((cy - 16.0).abs() < 0.1 && (cx - 16.0).abs() < 0.1, "({cy},{cx})");
    // Analytic Gaussian FWHM = 2.355 sigma = 4.71, +/- 10%.
    let fwhm = m.fwhm[0].expect("profile crosses half max");
    assert!((fwhm - 4.71).abs() / 4.71 < 0.10, "fwhm {fwhm}");
}

#[test]
fn morphology_flat_image_has_no_peaks() {
    let img = Image::new(1, 16, 16, vec![0.2; 256], Domain::Unit).unwrap();
    let m = morphology(&img).unwrap();
    assert!(m.peaks.is_empty());
    assert!((m.total_flux - 0.2 * 256.0).abs() < 1e-9);
}

#[test]
fn morphology_recovers_two_disjoint_blobs() {
    let mut img = gaussian_blob_image(40, 12.0, 10.0, 1.5, 0.8);
    let other = gaussian_blob_image(40, 28.0, 30.0, 1.5, 0.6);
    for i in 0..img.data().len() {
        let v = (img.data()[i] + other.data()[i]).min(1.0);
        img.data_mut()[i] = v;
    }
    let m = morphology(&img).unwrap();
    assert_eq!(m.peaks.len(), 2);
    // Brightest first.
    assert!(m.peaks[0].value >= m.peaks[1].value);
    let (cy, cx) = m.centroids[0];
    assert!((cy - 12.0).abs() < 0.5 && (cx - 10.0).abs() < 0.5);
}
