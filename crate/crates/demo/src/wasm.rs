//! `wasm_bindgen` exports wrapping the pure rendering API. Buffers come
//! back as `Uint8Array`s for `ImageData`.

use crate::render;
use wasm_bindgen::prelude::*;

#[wasm_bindgen]
pub struct Frame {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

#[wasm_bindgen]
impl Frame {
    #[wasm_bindgen(getter)]
    pub fn width(&self) -> usize {
        self.width
    }

    #[wasm_bindgen(getter)]
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixels(&self) -> Vec<u8> {
        self.data.clone()
    }
}

impl From<render::RgbaImage> for Frame {
    fn from(img: render::RgbaImage) -> Self {
        Frame {
            width: img.width,
            height: img.height,
            data: img.data,
        }
    }
}

/// Clean and degraded synthetic fields, stacked [clean, degraded].
#[wasm_bindgen]
pub fn synth_pair(
    side: usize,
    stars: usize,
    psf_sigma: f64,
    noise_sigma: f64,
    blur_sigma: f64,
    seed: u64,
) -> Vec<Frame> {
    let (clean, degraded) =
        render::synth_pair_rgba(side, stars, psf_sigma, noise_sigma, blur_sigma, seed);
    vec![clean.into(), degraded.into()]
}

/// The 36 augmentation variants of one field, tiled on a 6x6 sheet.
#[wasm_bindgen]
pub fn augment_sheet(side: usize, seed: u64, blur_sigma: f64, glow_sigma: f64) -> Frame {
    render::augment_sheet_rgba(side, seed, blur_sigma, glow_sigma).into()
}

/// In-page trainer handle.
#[wasm_bindgen]
pub struct Trainer {
    inner: render::DemoTrainer,
}

#[wasm_bindgen]
impl Trainer {
    #[wasm_bindgen(constructor)]
    pub fn new(seed: u64, side: usize, count: usize) -> Trainer {
        Trainer {
            inner: render::DemoTrainer::new(seed, side, count),
        }
    }

    /// Run `n` steps; returns `[step, cycle_loss, generator_total]`.
    pub fn run_steps(&mut self, n: usize) -> Vec<f64> {
        let (step, cyc, total) = self.inner.run_steps(n);
        vec![step as f64, cyc, total]
    }

    pub fn step_count(&self) -> u64 {
        self.inner.step_count()
    }

    /// [degraded | enhanced | clean] of the held-out field.
    pub fn triptych(&mut self) -> Frame {
        self.inner.triptych_rgba().into()
    }
}
