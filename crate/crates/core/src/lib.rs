//! Enhancement of low-resolution astrophotography with a cycle-consistent
//! adversarial model.
//!
//! The crate is a self-contained pipeline: a small differentiable tensor
//! engine with reverse-mode gradients ([`tensor`]), deterministic ground-truth
//! augmentation ([`augment`]), dataset construction including a synthetic
//! star-field generator ([`dataset`]), the attention encoder–decoder generator
//! and patch discriminator ([`model`]), cycle-consistent adversarial training
//! with astrophysical regularization ([`training`]), Fréchet-distance and
//! morphology metrics ([`metrics`]), and a sky-survey cutout client with an
//! offline fixture mode ([`survey`]).
//!
//! Everything runs on the CPU, every random choice flows from one global seed
//! expanded by subsystem labels ([`config::derive_seed`]), and all pipeline
//! stages are bit-deterministic given (seed, config, data).

pub mod augment;
pub mod config;
pub mod dataset;
pub mod metrics;
pub mod model;
pub mod survey;
pub mod tensor;
pub mod training;

pub use config::RunConfig;
pub use dataset::{Domain, Image};
pub use tensor::{ConvSpec, Tensor};
