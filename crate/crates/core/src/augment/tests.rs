use super::*;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

fn random_unit_image(seed: u64, c: usize, h: usize, w: usize) -> Image {
    let mut rng = StdRng::seed_from_u64(seed);
    let data = (0..c * h * w).map(|_| rng.gen_range(0.0..1.0)).collect();
    Image::new(c, h, w, data, Domain::Unit).unwrap()
}

#[test]
fn kernel_center_value_sigma_one() {
    let k = gaussian_kernel(1.0, 2, false).unwrap();
    let expected = 1.0 / (2.0 * std::f64::consts::PI);
    assert!((k.at(0, 0) - expected).abs() < 1e-7, "{}", k.at(0, 0));
    assert!((k.at(0, 0) - 0.1591549).abs() < 1e-6);
}

#[test]
fn kernel_off_center_value_sigma_one() {
    let k = gaussian_kernel(1.0, 2, false).unwrap();
    let expected = (1.0 / (2.0 * std::f64::consts::PI)) * (-0.5f64).exp();
    assert!((k.at(1, 0) - expected).abs() < 1e-12);
    assert!((k.at(1, 0) - 0.0965324).abs() < 1e-6);
}

#[test]
fn kernel_normalized_sums_to_one() {
    let k = gaussian_kernel(2.0, 3, true).unwrap();
    assert_eq!(k.values.len(), 49);
    let sum: f64 = k.values.iter().sum();
    assert!((sum - 1.0).abs() < 1e-12);
}

#[test]
fn kernel_symmetry() {
    let k = gaussian_kernel(1.5, 3, true).unwrap();
    for i in -3i64..=3 {
        for j in -3i64..=3 {
            assert_eq!(k.at(i, j), k.at(-i, j));
            assert_eq!(k.at(i, j), k.at(i, -j));
            assert_eq!(k.at(i, j), k.at(j, i));
        }
    }
}

#[test]
fn kernel_rejects_bad_params() {
    assert!(gaussian_kernel(0.0, 2, true).is_err());
    assert!(gaussian_kernel(-1.0, 2, true).is_err());
    assert!(gaussian_kernel(1.0, 0, true).is_err());
}

#[test]
fn blur_keeps_constant_image_constant() {
    let img = Image::new(1, 8, 8, vec![0.37; 64], Domain::Unit).unwrap();
    let out = gaussian_blur(&img, 1.0, 3).unwrap();
    for &v in out.data() {
        assert!((v - 0.37).abs() < 1e-12);
    }
}

#[test]
fn blur_impulse_center_equals_normalized_kernel_center() {
    let mut img = Image::zeros(1, 9, 9, Domain::Unit);
    img.set(0, 4, 4, 1.0);
    let out = gaussian_blur(&img, 1.0, 2).unwrap();
    // Oracle: direct double-sum at the center picks up only G(0,0).
    let k = gaussian_kernel(1.0, 2, true).unwrap();
    let mut oracle = 0.0;
    for di in -2i64..=2 {
        for dj in -2i64..=2 {
            let (sy, sx) = (4 + di, 4 + dj);
            if (sy, sx) == (4, 4) {
                oracle += k.at(di, dj);
            }
        }
    }
    assert!((out.get(0, 4, 4) - k.at(0, 0)).abs() < 1e-15);
    assert!((out.get(0, 4, 4) - oracle).abs() < 1e-15);
}

#[test]
fn blur_preserves_flux_under_reflect_padding() {
    let img = random_unit_image(5, 1, 16, 16);
    let before: f64 = img.data().iter().sum();
    let out = gaussian_blur(&img, 1.3, default_blur_radius(1.3)).unwrap();
    let after: f64 = out.data().iter().sum();
    assert!(
        ((after - before) / before).abs() < 1e-6,
        "flux {before} -> {after}"
    );
}

#[test]
fn blur_rejects_empty_and_wrong_domain() {
    let empty = Image::new(1, 0, 0, vec![], Domain::Unit).unwrap();
    assert!(matches!(
        gaussian_blur(&empty, 1.0, 2),
        Err(AugmentError::EmptyImage)
    ));
    let model = Image::zeros(1, 4, 4, Domain::Model);
    assert!(matches!(
        gaussian_blur(&model, 1.0, 2),
        Err(AugmentError::WrongDomain { .. })
    ));
}

#[test]
fn sky_glow_zero_sigma_is_identity() {
    let img = random_unit_image(9, 3, 6, 6);
    let out = sky_glow(&img, &SkyGlowParams { sigma_glow: 0.0, seed: 4 }).unwrap();
    assert_eq!(out, img);
}

#[test]
fn sky_glow_same_seed_bit_identical() {
    let img = random_unit_image(10, 1, 8, 8);
    let p = SkyGlowParams { sigma_glow: 0.05, seed: 123 };
    assert_eq!(sky_glow(&img, &p).unwrap(), sky_glow(&img, &p).unwrap());
}

#[test]
fn sky_glow_mean_on_zero_image_matches_half_normal() {
    // E[max(N, 0)] = sigma / sqrt(2 pi); Monte Carlo over 10^6 pixels.
    let img = Image::zeros(1, 1000, 1000, Domain::Unit);
    let out = sky_glow(&img, &SkyGlowParams { sigma_glow: 0.05, seed: 77 }).unwrap();
    let mean: f64 = out.data().iter().sum::<f64>() / out.data().len() as f64;
    let expected = 0.05 / (2.0 * std::f64::consts::PI).sqrt();
    assert!((expected - 0.019947).abs() < 1e-6);
    assert!(
        (mean - expected).abs() / expected < 0.05,
        "mean {mean}, expected {expected}"
    );
}

#[test]
fn dihedral_identity_and_group_order() {
    let img = random_unit_image(13, 1, 4, 4);
    assert_eq!(dihedral(&img, Rotation::R0, false), img);
    // Four quarter turns compose to the identity, bit-exactly.
    let mut r = img.clone();
    for _ in 0..4 {
        r = dihedral(&r, Rotation::R90, false);
    }
    assert_eq!(r, img);
}

#[test]
fn dihedral_quarter_turn_counter_clockwise() {
    // [[a, b], [c, d]] rotated 90 deg CCW -> [[b, d], [a, c]].
    let img = Image::new(1, 2, 2, vec![1.0, 2.0, 3.0, 4.0], Domain::Unit).unwrap();
    let out = dihedral(&img, Rotation::R90, false);
    assert_eq!(out.data(), &[2.0, 4.0, 1.0, 3.0]);
}

#[test]
fn dihedral_forms_a_group_of_order_eight() {
    let img = random_unit_image(21, 1, 4, 4);
    let ops: Vec<(Rotation, bool)> = Rotation::ALL
        .iter()
        .flat_map(|&r| [(r, false), (r, true)])
        .collect();
    let images: Vec<Image> = ops.iter().map(|&(r, f)| dihedral(&img, r, f)).collect();
    // Generic position: the eight elements act distinctly.
    for i in 0..8 {
        for j in 0..8 {
            if i != j {
                assert_ne!(images[i], images[j], "ops {i} and {j} coincide");
            }
        }
    }
    // Closure: composing any two elements lands back in the set.
    for &(r1, f1) in &ops {
        for &(r2, f2) in &ops {
            let composed = dihedral(&dihedral(&img, r1, f1), r2, f2);
            assert!(
                images.iter().any(|m| *m == composed),
                "composition left the group: {r1:?}/{f1} then {r2:?}/{f2}"
            );
        }
    }
}

#[test]
fn dihedral_transposes_non_square_shapes() {
    let img = random_unit_image(22, 1, 2, 5);
    let out = dihedral(&img, Rotation::R90, false);
    assert_eq!((out.height(), out.width()), (5, 2));
}

#[test]
fn brightness_identity_and_exact_scale() {
    let img = Image::new(1, 2, 2, vec![0.5; 4], Domain::Unit).unwrap();
    assert_eq!(brightness(&img, 1.0), img);
    let dimmed = brightness(&img, 0.9);
    for &v in dimmed.data() {
        assert_eq!(v, 0.45);
    }
}

#[test]
fn brightness_clips_at_one() {
    let img = Image::new(1, 2, 2, vec![0.8; 4], Domain::Unit).unwrap();
    let out = brightness(&img, 2.0);
    assert!(out.data().iter().all(|&v| v == 1.0));
}

#[test]
fn zoom_identity() {
    let img = random_unit_image(31, 1, 8, 8);
    assert_eq!(scale_zoom(&img, 1.0), img);
}

#[test]
fn zoom_out_pads_border_with_zeros() {
    let side = 20;
    let img = Image::new(1, side, side, vec![1.0; side * side], Domain::Unit).unwrap();
    let out = scale_zoom(&img, 0.8);
    // Geometry oracle: border width is (1 - 0.8)/2 of the side.
    let border = ((1.0 - 0.8) / 2.0 * side as f64).floor() as usize;
    assert!(border >= 1);
    for x in 0..side {
        assert_eq!(out.get(0, 0, x), 0.0, "top row should be padding");
    }
    let interior = out.get(0, side / 2, side / 2);
    assert!((interior - 1.0).abs() < 1e-12);
    // Pixels well inside the border band are zero; well outside it, one.
    assert_eq!(out.get(0, border - 1, side / 2).min(1.0).floor(), 0.0);
    assert!((out.get(0, border + 2, side / 2) - 1.0).abs() < 1e-9);
}

#[test]
fn zoom_keeps_centered_blob_centroid_fixed() {
    let side = 33usize;
    let c = (side / 2) as f64;
    let mut img = Image::zeros(1, side, side, Domain::Unit);
    for y in 0..side {
        for x in 0..side {
            let d2 = (y as f64 - c).powi(2) + (x as f64 - c).powi(2);
            img.set(0, y, x, (-d2 / 8.0).exp());
        }
    }
    let centroid = |im: &Image| -> (f64, f64) {
        let (mut sy, mut sx, mut s) = (0.0, 0.0, 0.0);
        for y in 0..im.height() {
            for x in 0..im.width() {
                let v = im.get(0, y, x);
                sy += v * y as f64;
                sx += v * x as f64;
                s += v;
            }
        }
        (sy / s, sx / s)
    };
    for factor in [0.8, 1.2] {
        let out = scale_zoom(&img, factor);
        let (cy, cx) = centroid(&out);
        assert!(
            (cy - c).abs() < 0.5 && (cx - c).abs() < 0.5,
            "factor {factor}: centroid ({cy}, {cx}) vs center {c}"
        );
    }
}

#[test]
fn augment_all_produces_exactly_36_variants() {
    let img = random_unit_image(41, 1, 12, 12);
    let plan = AugmentPlan::build(3, 1.0, 0.05, &BrightnessParams::default()).unwrap();
    let variants = augment_all(&img, &plan).unwrap();
    assert_eq!(variants.len(), VARIANT_COUNT);
    for v in &variants {
        assert!(v.data().iter().all(|&u| (0.0..=1.0).contains(&u)));
    }
}

#[test]
fn augment_all_is_bit_deterministic() {
    let img = random_unit_image(42, 3, 10, 10);
    let plan = AugmentPlan::build(55, 0.8, 0.05, &BrightnessParams::default()).unwrap();
    let a = augment_all(&img, &plan).unwrap();
    let b = augment_all(&img, &plan).unwrap();
    assert_eq!(a, b);
}

#[test]
fn augment_all_rejects_wrong_plan_length() {
    let img = random_unit_image(43, 1, 8, 8);
    let mut plan = AugmentPlan::build(1, 1.0, 0.05, &BrightnessParams::default()).unwrap();
    plan.variants.pop();
    assert!(matches!(
        augment_all(&img, &plan),
        Err(AugmentError::PlanLength(35))
    ));
}

#[test]
fn trivial_variant_is_pure_brightness() {
    // Rotation 0, no flip, scale 1.0, jitter 0 (factor exactly 0.9),
    // blur disabled, glow 0: variant 0 is 0.9 x input.
    let img = random_unit_image(44, 1, 8, 8);
    let plan = AugmentPlan::build(
        9,
        0.0,
        0.0,
        &BrightnessParams {
            base_mean: 0.9,
            jitter_sigma: 0.0,
        },
    )
    .unwrap();
    assert_eq!(plan.variants[0].rotation, Rotation::R0);
    assert!(!plan.variants[0].flip);
    assert_eq!(plan.variants[0].scale, 1.0);
    assert_eq!(plan.brightness_factors[plan.variants[0].brightness_level], 0.9);
    let variants = augment_all(&img, &plan).unwrap();
    for (y, x) in [(0, 0), (3, 5), (7, 7)] {
        assert_eq!(variants[0].get(0, y, x), (img.get(0, y, x) * 0.9).clamp(0.0, 1.0));
    }
}
