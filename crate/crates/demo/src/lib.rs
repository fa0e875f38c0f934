//! Interactive browser demo over the core pipeline.
//!
//! Three operations, each returning RGBA pixel buffers ready for a canvas:
//! synthesize a clean/degraded star-field pair, expand a field into its 36
//! augmentation variants, and train the cycle model live in the page to
//! watch enhancement improve. All logic is plain Rust (tested natively);
//! `wasm.rs` adds thin `wasm_bindgen` exports when compiled for
//! `wasm32-unknown-unknown`.

mod render;

#[cfg(target_arch = "wasm32")]
mod wasm;

pub use render::{augment_sheet_rgba, synth_pair_rgba, DemoTrainer, RgbaImage};
