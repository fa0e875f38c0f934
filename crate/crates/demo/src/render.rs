//! Canvas-ready rendering of pipeline outputs.

use starcycle::augment::{augment_all, AugmentPlan, BrightnessParams};
use starcycle::config::derive_seed_indexed;
use starcycle::dataset::{synth_starfield, DegradeRecipe, Domain, Image, StarFieldSpec};
use starcycle::model::{self, BnUse, FusionMode};
use starcycle::training::{
    adapt_channels, batch_indices, train_step, AdamParams, LossWeights, TrainData, TrainState,
};

/// RGBA byte buffer with its dimensions.
#[derive(Debug, Clone)]
pub struct RgbaImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<u8>,
}

/// Square-root stretch brings faint stars up without blowing out cores.
fn stretch(v: f64) -> u8 {
    (v.clamp(0.0, 1.0).sqrt() * 255.0).round() as u8
}

fn to_rgba(img: &Image) -> RgbaImage {
    let unit = img.normalize(Domain::Unit);
    let (h, w, c) = (unit.height(), unit.width(), unit.channels());
    let mut data = Vec::with_capacity(4 * h * w);
    for y in 0..h {
        for x in 0..w {
            let (r, g, b) = if c == 1 {
                let v = stretch(unit.get(0, y, x));
                (v, v, v)
            } else {
                (
                    stretch(unit.get(0, y, x)),
                    stretch(unit.get(1, y, x)),
                    stretch(unit.get(2, y, x)),
                )
            };
            data.extend_from_slice(&[r, g, b, 255]);
        }
    }
    RgbaImage {
        width: w,
        height: h,
        data,
    }
}

fn field_spec(
    side: usize,
    stars: usize,
    psf_sigma: f64,
    noise_sigma: f64,
    blur_sigma: f64,
    seed: u64,
) -> StarFieldSpec {
    StarFieldSpec {
        side,
        star_count: stars.max(1),
        psf_sigma: (psf_sigma.max(0.5) * 0.8, psf_sigma.max(0.5) * 1.2),
        mag_range: (0.0, 2.5),
        background: 0.05,
        recipe: DegradeRecipe {
            blur_sigma,
            noise_sigma,
            downscale: 2,
        },
        seed,
    }
}

/// One synthetic pair, rendered: (clean, degraded).
pub fn synth_pair_rgba(
    side: usize,
    stars: usize,
    psf_sigma: f64,
    noise_sigma: f64,
    blur_sigma: f64,
    seed: u64,
) -> (RgbaImage, RgbaImage) {
    let side = (side.clamp(16, 256) / 2) * 2;
    let spec = field_spec(side, stars, psf_sigma, noise_sigma, blur_sigma, seed);
    let (clean, degraded) = synth_starfield(&spec).expect("valid demo spec");
    (to_rgba(&clean), to_rgba(&degraded))
}

/// All 36 augmentation variants of one synthetic field, tiled 6x6.
pub fn augment_sheet_rgba(side: usize, seed: u64, blur_sigma: f64, glow_sigma: f64) -> RgbaImage {
    let side = (side.clamp(16, 128) / 2) * 2;
    let spec = field_spec(side, 5, 1.4, 0.0, 0.0, seed);
    let (clean, _) = synth_starfield(&spec).expect("valid demo spec");
    let plan = AugmentPlan::build(seed, blur_sigma, glow_sigma, &BrightnessParams::default())
        .expect("valid plan");
    let variants = augment_all(&clean, &plan).expect("augmentation");

    let gap = 2usize;
    let sheet_side = 6 * side + 7 * gap;
    let mut sheet = vec![24u8; 4 * sheet_side * sheet_side];
    for (i, v) in variants.iter().enumerate() {
        let tile = to_rgba(v);
        let (row, col) = (i / 6, i % 6);
        let y0 = gap + row * (side + gap);
        let x0 = gap + col * (side + gap);
        for y in 0..tile.height {
            for x in 0..tile.width {
                let src = 4 * (y * tile.width + x);
                let dst = 4 * ((y0 + y) * sheet_side + (x0 + x));
                sheet[dst..dst + 4].copy_from_slice(&tile.data[src..src + 4]);
            }
        }
    }
    RgbaImage {
        width: sheet_side,
        height: sheet_side,
        data: sheet,
    }
}

/// Live in-page training over a small synthetic corpus.
pub struct DemoTrainer {
    state: TrainState,
    data: TrainData,
    holdout: (Image, Image),
    weights: LossWeights,
    seed: u64,
    side: usize,
}

fn to_model3(img: &Image) -> Image {
    adapt_channels(&img.normalize(Domain::Model), 3)
}

impl DemoTrainer {
    /// Build a corpus of `count` pairs at `side` (clamped to a multiple of
    /// 8) and a fresh model.
    pub fn new(seed: u64, side: usize, count: usize) -> Self {
        let side = (side.clamp(16, 64) / 8) * 8;
        let count = count.clamp(4, 128);
        let mut data = TrainData {
            lr: Vec::new(),
            hr: Vec::new(),
            pairs: Vec::new(),
        };
        for i in 0..count {
            let spec = field_spec(side, 6, 1.4, 0.05, 1.2, derive_seed_indexed(seed, "demo", i as u64));
            let (clean, degraded) = synth_starfield(&spec).expect("valid demo spec");
            data.lr.push(to_model3(&degraded));
            data.hr.push(to_model3(&clean));
            data.pairs.push((i, i));
        }
        let spec = field_spec(side, 6, 1.4, 0.05, 1.2, derive_seed_indexed(seed, "demo-holdout", 0));
        let holdout = synth_starfield(&spec).expect("valid demo spec");
        // Paired supervision keeps progress visible within a few dozen steps.
        let weights = LossWeights {
            paired: 10.0,
            ..LossWeights::default()
        };
        DemoTrainer {
            state: TrainState::fresh(seed, FusionMode::OpticalOnly, AdamParams::default()),
            data,
            holdout,
            weights,
            seed,
            side,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.state.step
    }

    pub fn side(&self) -> usize {
        self.side
    }

    /// Run `n` training steps; returns (step, cycle loss, generator total).
    pub fn run_steps(&mut self, n: usize) -> (u64, f64, f64) {
        let mut last = (self.state.step, 0.0, 0.0);
        for _ in 0..n {
            let (lr_idx, hr_idx) =
                batch_indices(self.seed, self.state.step + 1, &self.data, 1, true);
            let batch_lr: Vec<Image> = lr_idx.iter().map(|&i| self.data.lr[i].clone()).collect();
            let batch_hr: Vec<Image> = hr_idx.iter().map(|&i| self.data.hr[i].clone()).collect();
            let record = train_step(&mut self.state, &batch_lr, &batch_hr, &self.weights)
                .expect("finite demo losses");
            last = (record.step, record.cyc, record.g_total);
        }
        last
    }

    /// Render [degraded | enhanced | clean] of the held-out field.
    pub fn triptych_rgba(&mut self) -> RgbaImage {
        let (clean, degraded) = &self.holdout;
        let input = to_model3(degraded);
        let enhanced = model::generator_forward(&mut self.state.nets.g_lr2hr, &input, BnUse::Eval)
            .expect("forward");
        let panels = [
            to_rgba(degraded),
            to_rgba(&enhanced),
            to_rgba(&adapt_channels(clean, 3)),
        ];
        let gap = 2usize;
        let (h, w) = (panels[0].height, panels[0].width);
        let total_w = 3 * w + 4 * gap;
        let total_h = h + 2 * gap;
        let mut out = vec![24u8; 4 * total_w * total_h];
        for (p, panel) in panels.iter().enumerate() {
            let x0 = gap + p * (w + gap);
            for y in 0..h {
                for x in 0..w {
                    let src = 4 * (y * w + x);
                    let dst = 4 * ((gap + y) * total_w + x0 + x);
                    out[dst..dst + 4].copy_from_slice(&panel.data[src..src + 4]);
                }
            }
        }
        RgbaImage {
            width: total_w,
            height: total_h,
            data: out,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn synth_pair_renders_rgba_of_expected_size() {
        let (clean, degraded) = synth_pair_rgba(32, 6, 1.4, 0.05, 1.2, 7);
        assert_eq!((clean.width, clean.height), (32, 32));
        assert_eq!(clean.data.len(), 4 * 32 * 32);
        assert_eq!(degraded.data.len(), 4 * 32 * 32);
        // Alpha is opaque everywhere.
        assert!(clean.data.chunks(4).all(|px| px[3] == 255));
        // Same seed, same pixels.
        let (clean2, _) = synth_pair_rgba(32, 6, 1.4, 0.05, 1.2, 7);
        assert_eq!(clean.data, clean2.data);
    }

    #[test]
    fn augment_sheet_tiles_36_variants() {
        let sheet = augment_sheet_rgba(16, 3, 1.0, 0.05);
        let expected = 6 * 16 + 7 * 2;
        assert_eq!((sheet.width, sheet.height), (expected, expected));
        assert_eq!(sheet.data.len(), 4 * expected * expected);
    }

    #[test]
    fn trainer_steps_and_renders() {
        let mut t = DemoTrainer::new(5, 16, 4);
        assert_eq!(t.step_count(), 0);
        let (step, cyc, total) = t.run_steps(2);
        assert_eq!(step, 2);
        assert!(cyc.is_finite() && total.is_finite());
        let trip = t.triptych_rgba();
        assert_eq!(trip.height, 16 + 4);
        assert_eq!(trip.width, 3 * 16 + 8);
    }
}
