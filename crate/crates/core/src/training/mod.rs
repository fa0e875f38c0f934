//! Cycle-consistent adversarial training with astrophysical
//! regularization: dual generator/discriminator pairs (LR->HR and HR->LR),
//! non-saturating BCE adversarial losses, L1 cycle losses, and Adam.
//!
//! Determinism: batches are drawn statelessly from (seed, step), parameters
//! and optimizer moments are f32-quantized after every update, and
//! checkpoints capture the complete mutable state, so a resumed run
//! reproduces the uninterrupted loss trajectory bit-exactly.

pub mod adam;

pub use adam::{AdamParams, AdamState};

use crate::config::{derive_seed, derive_seed_indexed};
use crate::dataset::{netpbm, resize_bilinear, Domain, Image, Manifest, Role, Split};
use crate::metrics::morphology::{find_peaks, Peak};
use crate::model::checkpoint::{self, Section};
use crate::model::{
    self, register_discriminator, register_generator, AttentionUse, BnUse, DiscriminatorParams,
    FusionMode, GeneratorParams, GeneratorVars,
};
use crate::tensor::norm::BatchMoments;
use crate::tensor::{Tape, Tensor, TensorError, Var};
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

/// Weights of the generator objective's components.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub adv: f64,
    pub cyc: f64,
    pub astro: f64,
    /// Identity term, off by default.
    pub idt: f64,
    /// Optional paired L1 supervision, off by default; when nonzero the
    /// HR batch entries must be the pairs of the LR entries.
    pub paired: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            adv: 1.0,
            cyc: 10.0,
            astro: 1.0,
            idt: 0.0,
            paired: 0.0,
        }
    }
}

#[derive(Debug)]
pub enum TrainError {
    Tensor(TensorError),
    NonFiniteLoss { step: u64, detail: String },
    EmptyDomain(&'static str),
    Io { path: PathBuf, message: String },
    Checkpoint(String),
    Data(String),
}

impl fmt::Display for TrainError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TrainError::Tensor(e) => write!(f, "tensor error: {e}"),
            TrainError::NonFiniteLoss { step, detail } => {
                write!(f, "non-finite loss at step {step}: {detail}")
            }
            TrainError::EmptyDomain(side) => {
                write!(f, "training domain {side:?} has no images")
            }
            TrainError::Io { path, message } => {
                write!(f, "io error at {}: {message}", path.display())
            }
            TrainError::Checkpoint(e) => write!(f, "checkpoint error: {e}"),
            TrainError::Data(e) => write!(f, "data error: {e}"),
        }
    }
}

impl std::error::Error for TrainError {}

impl From<TensorError> for TrainError {
    fn from(e: TensorError) -> Self {
        TrainError::Tensor(e)
    }
}

impl From<checkpoint::CheckpointError> for TrainError {
    fn from(e: checkpoint::CheckpointError) -> Self {
        TrainError::Checkpoint(e.to_string())
    }
}

// ── loss functions ──────────────────────────────────────────────────

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdvTarget {
    Real,
    Fake,
}

/// Mean binary cross-entropy of a probability map against the target
/// class. The generator side uses the non-saturating form: fake samples
/// scored against `Real`.
pub fn adversarial_loss_on_tape(tape: &mut Tape, d_out: Var, target: AdvTarget) -> Var {
    let t = match target {
        AdvTarget::Real => 1.0,
        AdvTarget::Fake => 0.0,
    };
    tape.bce_loss(d_out, t)
}

pub fn adversarial_loss(map: &Tensor, target: AdvTarget) -> f64 {
    let mut tape = Tape::new();
    let v = tape.input(map.clone());
    let loss = adversarial_loss_on_tape(&mut tape, v, target);
    tape.value(loss).item()
}

/// Mean absolute error between an original and its reconstruction.
pub fn cycle_loss_on_tape(tape: &mut Tape, x: Var, reconstructed: Var) -> Result<Var, TensorError> {
    let d = tape.sub(reconstructed, x)?;
    let a = tape.abs(d);
    Ok(tape.mean(a))
}

pub fn cycle_loss(x: &Tensor, reconstructed: &Tensor) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let vx = tape.input(x.clone());
    let vr = tape.input(reconstructed.clone());
    let loss = cycle_loss_on_tape(&mut tape, vx, vr)?;
    Ok(tape.value(loss).item())
}

/// Most peaks the astro term tracks.
const ASTRO_MAX_PEAKS: usize = 5;
/// Slack inside the square root and the centroid denominator, keeping
/// gradients finite when a shift is exactly zero.
const ASTRO_TINY: f64 = 1e-18;

/// Map a model-domain var to `[0, 1]` intensities.
fn to_unit(tape: &mut Tape, x: Var) -> Var {
    let half = tape.scale(x, 0.5);
    tape.add_scalar(half, 0.5)
}

/// Per-location channel mean as a `[1, H, W]` plane.
fn luminance_var(tape: &mut Tape, x: Var) -> Result<Var, TensorError> {
    let c = tape.value(x).shape()[0];
    if c == 1 {
        return Ok(x);
    }
    let appended = tape.append_channel_mean(x);
    tape.slice_channels(appended, c, 1)
}

/// Intensity-weighted centroid over a 7x7 window around `peak`, computed
/// on the tape so it differentiates through the intensities.
fn centroid_on_tape(
    tape: &mut Tape,
    lum: Var,
    h: usize,
    w: usize,
    peak: Peak,
) -> Result<(Var, Var), TensorError> {
    let half = 3i64;
    let mut mask = vec![0.0; h * w];
    let mut ycoord = vec![0.0; h * w];
    let mut xcoord = vec![0.0; h * w];
    for dy in -half..=half {
        let y = peak.y as i64 + dy;
        if y < 0 || y >= h as i64 {
            continue;
        }
        for dx in -half..=half {
            let x = peak.x as i64 + dx;
            if x < 0 || x >= w as i64 {
                continue;
            }
            let i = y as usize * w + x as usize;
            mask[i] = 1.0;
            ycoord[i] = y as f64;
            xcoord[i] = x as f64;
        }
    }
    let vm = tape.input(Tensor::new(vec![1, h, w], mask)?);
    let vy = tape.input(Tensor::new(vec![1, h, w], ycoord)?);
    let vx = tape.input(Tensor::new(vec![1, h, w], xcoord)?);
    let wsum_raw = tape.mul(lum, vm)?;
    let wsum = tape.sum(wsum_raw);
    let denom = tape.add_scalar(wsum, ASTRO_TINY);
    let wy = tape.mul(lum, vy)?;
    let sy = tape.sum(wy);
    let cy = tape.div(sy, denom)?;
    let wx = tape.mul(lum, vx)?;
    let sx = tape.sum(wx);
    let cx = tape.div(sx, denom)?;
    Ok((cy, cx))
}

/// Greedy nearest-neighbor matching of the K brightest input peaks to
/// distinct output peaks.
fn match_peaks(in_peaks: &[Peak], out_peaks: &[Peak], k: usize) -> Vec<(Peak, Peak)> {
    let mut used = vec![false; out_peaks.len()];
    let mut matches = Vec::with_capacity(k);
    for &pin in in_peaks.iter().take(k) {
        let mut best: Option<(usize, f64)> = None;
        for (j, pout) in out_peaks.iter().enumerate() {
            if used[j] {
                continue;
            }
            let d2 = (pin.y as f64 - pout.y as f64).powi(2)
                + (pin.x as f64 - pout.x as f64).powi(2);
            if best.map_or(true, |(_, b)| d2 < b) {
                best = Some((j, d2));
            }
        }
        if let Some((j, _)) = best {
            used[j] = true;
            matches.push((pin, out_peaks[j]));
        }
    }
    matches
}

/// Astrophysical regularization:
/// `|mean_flux(out) - mean_flux(in)| + mean_k(centroid_shift_k) / diagonal`
/// where shifts are measured between the K brightest matched peaks (K <= 5)
/// of the two images. Peak locations and matching are decided on detached
/// values; the flux and centroid arithmetic differentiates through `x_out`.
pub fn astro_regularization_on_tape(
    tape: &mut Tape,
    x_in: Var,
    x_out: Var,
) -> Result<Var, TensorError> {
    let shape = tape.value(x_in).shape().to_vec();
    if shape != tape.value(x_out).shape() {
        return Err(TensorError::ShapeMismatch {
            context: "astro_regularization".into(),
            expected: shape,
            actual: tape.value(x_out).shape().to_vec(),
        });
    }
    let (h, w) = (shape[shape.len() - 2], shape[shape.len() - 1]);

    let in01 = to_unit(tape, x_in);
    let out01 = to_unit(tape, x_out);
    let mean_in = tape.mean(in01);
    let mean_out = tape.mean(out01);
    let dmean = tape.sub(mean_out, mean_in)?;
    let flux = tape.abs(dmean);

    let lum_in = luminance_var(tape, in01)?;
    let lum_out = luminance_var(tape, out01)?;
    let (in_peaks, _) = find_peaks(tape.value(lum_in).data(), h, w);
    let (out_peaks, _) = find_peaks(tape.value(lum_out).data(), h, w);
    let k = ASTRO_MAX_PEAKS.min(in_peaks.len()).min(out_peaks.len());
    if k == 0 {
        return Ok(flux);
    }
    let matches = match_peaks(&in_peaks, &out_peaks, k);
    let diag = ((h * h + w * w) as f64).sqrt();

    let mut shift_sum: Option<Var> = None;
    for (pin, pout) in matches {
        let (cy_in, cx_in) = centroid_on_tape(tape, lum_in, h, w, pin)?;
        let (cy_out, cx_out) = centroid_on_tape(tape, lum_out, h, w, pout)?;
        let dy = tape.sub(cy_out, cy_in)?;
        let dx = tape.sub(cx_out, cx_in)?;
        let dy2 = tape.mul(dy, dy)?;
        let dx2 = tape.mul(dx, dx)?;
        let d2 = tape.add(dy2, dx2)?;
        let d2s = tape.add_scalar(d2, ASTRO_TINY);
        let dist = tape.sqrt(d2s);
        shift_sum = Some(match shift_sum {
            Some(acc) => tape.add(acc, dist)?,
            None => dist,
        });
    }
    let shifts = tape.scale(shift_sum.expect("k > 0"), 1.0 / (diag * k as f64));
    tape.add(flux, shifts)
}

pub fn astro_regularization(x_in: &Tensor, x_out: &Tensor) -> Result<f64, TensorError> {
    let mut tape = Tape::new();
    let vin = tape.input(x_in.clone());
    let vout = tape.input(x_out.clone());
    let loss = astro_regularization_on_tape(&mut tape, vin, vout)?;
    Ok(tape.value(loss).item())
}

// ── one training step ───────────────────────────────────────────────

/// The four networks of the cycle.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainNets {
    pub g_lr2hr: GeneratorParams,
    pub g_hr2lr: GeneratorParams,
    pub d_hr: DiscriminatorParams,
    pub d_lr: DiscriminatorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptStates {
    pub g_lr2hr: AdamState,
    pub g_hr2lr: AdamState,
    pub d_hr: AdamState,
    pub d_lr: AdamState,
}

/// Complete mutable training state; everything a checkpoint stores.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub nets: TrainNets,
    pub opts: OptStates,
    pub step: u64,
}

/// One structured record per step.
#[derive(Debug, Clone, PartialEq)]
pub struct LossRecord {
    pub step: u64,
    pub d_hr: f64,
    pub d_lr: f64,
    pub adv_g: f64,
    pub cyc: f64,
    pub astro: f64,
    pub idt: f64,
    pub paired: f64,
    pub g_total: f64,
}

impl LossRecord {
    /// Line-delimited key-value form, one line per step in `metrics.log`.
    pub fn log_line(&self) -> String {
        format!(
            "step={} d_hr={} d_lr={} adv_g={} cyc={} astro={} idt={} paired={} g_total={}",
            self.step,
            self.d_hr,
            self.d_lr,
            self.adv_g,
            self.cyc,
            self.astro,
            self.idt,
            self.paired,
            self.g_total
        )
    }

    fn all_finite(&self) -> bool {
        [
            self.d_hr, self.d_lr, self.adv_g, self.cyc, self.astro, self.idt, self.paired,
            self.g_total,
        ]
        .iter()
        .all(|v| v.is_finite())
    }
}

/// Match an image var to the LR->HR generator's input channel count by
/// appending a synthesized luminance band when one is missing.
fn adapt_to_generator_input(
    tape: &mut Tape,
    v: Var,
    fusion: FusionMode,
) -> Result<Var, TensorError> {
    let have = tape.value(v).shape()[0];
    let need = fusion.in_channels();
    if have == need {
        Ok(v)
    } else if have + 1 == need {
        Ok(tape.append_channel_mean(v))
    } else {
        Err(TensorError::ChannelMismatch {
            context: "generator input adaptation".into(),
            expected: need,
            actual: have,
        })
    }
}

fn optical(tape: &mut Tape, v: Var) -> Result<Var, TensorError> {
    if tape.value(v).shape()[0] == 3 {
        Ok(v)
    } else {
        tape.slice_channels(v, 0, 3)
    }
}

fn scaled_acc(
    tape: &mut Tape,
    acc: Option<Var>,
    term: Var,
) -> Result<Option<Var>, TensorError> {
    Ok(Some(match acc {
        Some(a) => tape.add(a, term)?,
        None => term,
    }))
}

struct GradHarvest {
    grads: Vec<Vec<f64>>,
}

fn harvest(tape: &Tape, vars: &[Var]) -> Result<GradHarvest, TensorError> {
    let grads = vars
        .iter()
        .map(|&v| tape.grad(v))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GradHarvest { grads })
}

/// One optimization step: discriminators first (real vs generated, both
/// directions), then the generators on the weighted objective. Batch
/// entries are paired positionally when `weights.paired > 0`.
pub fn train_step(
    state: &mut TrainState,
    batch_lr: &[Image],
    batch_hr: &[Image],
    weights: &LossWeights,
) -> Result<LossRecord, TrainError> {
    assert!(!batch_lr.is_empty() && batch_lr.len() == batch_hr.len());
    let b = batch_lr.len() as f64;
    let fusion = state.nets.g_lr2hr.fusion;
    let step = state.step + 1;

    // ── discriminator update ────────────────────────────────────────
    let mut tape = Tape::new();
    let g_vars = register_generator(&mut tape, &state.nets.g_lr2hr, false);
    let f_vars = register_generator(&mut tape, &state.nets.g_hr2lr, false);
    let d_hr_vars = register_discriminator(&mut tape, &state.nets.d_hr, true);
    let d_lr_vars = register_discriminator(&mut tape, &state.nets.d_lr, true);

    let mut d_hr_acc: Option<Var> = None;
    let mut d_lr_acc: Option<Var> = None;
    for (lr_img, hr_img) in batch_lr.iter().zip(batch_hr) {
        let x = tape.input(lr_img.to_tensor());
        let y = tape.input(hr_img.to_tensor());
        let fake_hr = model::generator_forward_on_tape(
            &mut tape,
            &g_vars,
            &state.nets.g_lr2hr,
            x,
            BnUse::Train,
            AttentionUse::Normal,
        )?
        .output;
        let fake_lr = model::generator_forward_on_tape(
            &mut tape,
            &f_vars,
            &state.nets.g_hr2lr,
            y,
            BnUse::Train,
            AttentionUse::Normal,
        )?
        .output;

        let d_real_hr = model::discriminator_forward_on_tape(&mut tape, &d_hr_vars, y)?;
        let d_fake_hr = model::discriminator_forward_on_tape(&mut tape, &d_hr_vars, fake_hr)?;
        let lr_real = adversarial_loss_on_tape(&mut tape, d_real_hr, AdvTarget::Real);
        let lr_fake = adversarial_loss_on_tape(&mut tape, d_fake_hr, AdvTarget::Fake);
        let pair = tape.add(lr_real, lr_fake)?;
        let half = tape.scale(pair, 0.5);
        d_hr_acc = scaled_acc(&mut tape, d_hr_acc, half)?;

        let x3 = optical(&mut tape, x)?;
        let d_real_lr = model::discriminator_forward_on_tape(&mut tape, &d_lr_vars, x3)?;
        let d_fake_lr = model::discriminator_forward_on_tape(&mut tape, &d_lr_vars, fake_lr)?;
        let lr_real2 = adversarial_loss_on_tape(&mut tape, d_real_lr, AdvTarget::Real);
        let lr_fake2 = adversarial_loss_on_tape(&mut tape, d_fake_lr, AdvTarget::Fake);
        let pair2 = tape.add(lr_real2, lr_fake2)?;
        let half2 = tape.scale(pair2, 0.5);
        d_lr_acc = scaled_acc(&mut tape, d_lr_acc, half2)?;
    }
    let d_hr_loss = tape.scale(d_hr_acc.expect("non-empty batch"), 1.0 / b);
    let d_lr_loss = tape.scale(d_lr_acc.expect("non-empty batch"), 1.0 / b);
    let d_total = tape.add(d_hr_loss, d_lr_loss)?;
    tape.backward(d_total)?;

    let loss_d_hr = tape.value(d_hr_loss).item();
    let loss_d_lr = tape.value(d_lr_loss).item();

    let hd = harvest(&tape, &d_hr_vars.ordered())?;
    let ld = harvest(&tape, &d_lr_vars.ordered())?;
    state
        .opts
        .d_hr
        .apply(&mut state.nets.d_hr.named_trainable_mut(), &hd.grads);
    state
        .opts
        .d_lr
        .apply(&mut state.nets.d_lr.named_trainable_mut(), &ld.grads);
    drop(tape);

    // ── generator update ────────────────────────────────────────────
    let mut tape = Tape::new();
    let g_vars = register_generator(&mut tape, &state.nets.g_lr2hr, true);
    let f_vars = register_generator(&mut tape, &state.nets.g_hr2lr, true);
    let d_hr_vars = register_discriminator(&mut tape, &state.nets.d_hr, false);
    let d_lr_vars = register_discriminator(&mut tape, &state.nets.d_lr, false);

    let mut g_moments: Vec<[BatchMoments; 4]> = Vec::new();
    let mut f_moments: Vec<[BatchMoments; 4]> = Vec::new();
    let run_g = |tape: &mut Tape,
                     vars: &GeneratorVars,
                     params: &GeneratorParams,
                     input: Var,
                     sink: &mut Vec<[BatchMoments; 4]>|
     -> Result<Var, TensorError> {
        let out = model::generator_forward_on_tape(
            tape,
            vars,
            params,
            input,
            BnUse::Train,
            AttentionUse::Normal,
        )?;
        sink.push(out.moments.expect("train mode"));
        Ok(out.output)
    };

    let mut adv_acc: Option<Var> = None;
    let mut cyc_acc: Option<Var> = None;
    let mut astro_acc: Option<Var> = None;
    let mut idt_acc: Option<Var> = None;
    let mut paired_acc: Option<Var> = None;

    for (lr_img, hr_img) in batch_lr.iter().zip(batch_hr) {
        let x = tape.input(lr_img.to_tensor());
        let y = tape.input(hr_img.to_tensor());
        let x3 = optical(&mut tape, x)?;

        let fake_hr = run_g(&mut tape, &g_vars, &state.nets.g_lr2hr, x, &mut g_moments)?;
        let fake_lr = run_g(&mut tape, &f_vars, &state.nets.g_hr2lr, y, &mut f_moments)?;

        let d_on_fake_hr = model::discriminator_forward_on_tape(&mut tape, &d_hr_vars, fake_hr)?;
        let d_on_fake_lr = model::discriminator_forward_on_tape(&mut tape, &d_lr_vars, fake_lr)?;
        let a1 = adversarial_loss_on_tape(&mut tape, d_on_fake_hr, AdvTarget::Real);
        let a2 = adversarial_loss_on_tape(&mut tape, d_on_fake_lr, AdvTarget::Real);
        let a = tape.add(a1, a2)?;
        adv_acc = scaled_acc(&mut tape, adv_acc, a)?;

        if weights.cyc > 0.0 {
            let rec_lr = run_g(&mut tape, &f_vars, &state.nets.g_hr2lr, fake_hr, &mut f_moments)?;
            let c1 = cycle_loss_on_tape(&mut tape, x3, rec_lr)?;
            let fake_lr_in = adapt_to_generator_input(&mut tape, fake_lr, fusion)?;
            let rec_hr = run_g(&mut tape, &g_vars, &state.nets.g_lr2hr, fake_lr_in, &mut g_moments)?;
            let c2 = cycle_loss_on_tape(&mut tape, y, rec_hr)?;
            let c = tape.add(c1, c2)?;
            cyc_acc = scaled_acc(&mut tape, cyc_acc, c)?;
        }
        if weights.astro > 0.0 {
            let s1 = astro_regularization_on_tape(&mut tape, x3, fake_hr)?;
            let s2 = astro_regularization_on_tape(&mut tape, y, fake_lr)?;
            let s = tape.add(s1, s2)?;
            astro_acc = scaled_acc(&mut tape, astro_acc, s)?;
        }
        if weights.idt > 0.0 {
            let y_in = adapt_to_generator_input(&mut tape, y, fusion)?;
            let idt_hr = run_g(&mut tape, &g_vars, &state.nets.g_lr2hr, y_in, &mut g_moments)?;
            let i1 = cycle_loss_on_tape(&mut tape, y, idt_hr)?;
            let idt_lr = run_g(&mut tape, &f_vars, &state.nets.g_hr2lr, x3, &mut f_moments)?;
            let i2 = cycle_loss_on_tape(&mut tape, x3, idt_lr)?;
            let i = tape.add(i1, i2)?;
            idt_acc = scaled_acc(&mut tape, idt_acc, i)?;
        }
        if weights.paired > 0.0 {
            let p = cycle_loss_on_tape(&mut tape, y, fake_hr)?;
            paired_acc = scaled_acc(&mut tape, paired_acc, p)?;
        }
    }

    let component = |tape: &mut Tape, acc: Option<Var>| -> (f64, Option<Var>) {
        match acc {
            Some(v) => {
                let mean = tape.scale(v, 1.0 / b);
                (tape.value(mean).item(), Some(mean))
            }
            None => (0.0, None),
        }
    };
    let (adv_v, adv_var) = component(&mut tape, adv_acc);
    let (cyc_v, cyc_var) = component(&mut tape, cyc_acc);
    let (astro_v, astro_var) = component(&mut tape, astro_acc);
    let (idt_v, idt_var) = component(&mut tape, idt_acc);
    let (paired_v, paired_var) = component(&mut tape, paired_acc);

    let mut total: Option<Var> = None;
    for (weight, var) in [
        (weights.adv, adv_var),
        (weights.cyc, cyc_var),
        (weights.astro, astro_var),
        (weights.idt, idt_var),
        (weights.paired, paired_var),
    ] {
        if weight > 0.0 {
            if let Some(v) = var {
                let scaled = tape.scale(v, weight);
                total = scaled_acc(&mut tape, total, scaled)?;
            }
        }
    }
    let total = match total {
        Some(v) => v,
        None => tape.input(Tensor::scalar(0.0)),
    };
    let g_total = tape.value(total).item();

    let record = LossRecord {
        step,
        d_hr: loss_d_hr,
        d_lr: loss_d_lr,
        adv_g: adv_v,
        cyc: cyc_v,
        astro: astro_v,
        idt: idt_v,
        paired: paired_v,
        g_total,
    };
    if !record.all_finite() {
        return Err(TrainError::NonFiniteLoss {
            step,
            detail: record.log_line(),
        });
    }

    tape.backward(total)?;
    let hg = harvest(&tape, &g_vars.ordered())?;
    let hf = harvest(&tape, &f_vars.ordered())?;
    state
        .opts
        .g_lr2hr
        .apply(&mut state.nets.g_lr2hr.named_trainable_mut(), &hg.grads);
    state
        .opts
        .g_hr2lr
        .apply(&mut state.nets.g_hr2lr.named_trainable_mut(), &hf.grads);
    drop(tape);

    // Running statistics advance once per forward, in execution order.
    for m in &g_moments {
        state.nets.g_lr2hr.update_running_stats(m);
    }
    for m in &f_moments {
        state.nets.g_hr2lr.update_running_stats(m);
    }

    state.step = step;
    Ok(record)
}

// ── training state lifecycle ────────────────────────────────────────

impl TrainState {
    /// Fresh networks and optimizers from one seed.
    pub fn fresh(seed: u64, fusion: FusionMode, adam: AdamParams) -> Self {
        let g_lr2hr = GeneratorParams::init(derive_seed(seed, "g_lr2hr"), fusion);
        // The reverse generator maps the 3-channel HR domain back to
        // optical LR; spectral extras only enter the forward direction.
        let g_hr2lr = GeneratorParams::init(derive_seed(seed, "g_hr2lr"), FusionMode::OpticalOnly);
        let d_hr = DiscriminatorParams::init(derive_seed(seed, "d_hr"));
        let d_lr = DiscriminatorParams::init(derive_seed(seed, "d_lr"));
        let opts = OptStates {
            g_lr2hr: AdamState::new(adam, &g_lr2hr.named_trainable()),
            g_hr2lr: AdamState::new(adam, &g_hr2lr.named_trainable()),
            d_hr: AdamState::new(adam, &d_hr.named_trainable()),
            d_lr: AdamState::new(adam, &d_lr.named_trainable()),
        };
        TrainState {
            nets: TrainNets {
                g_lr2hr,
                g_hr2lr,
                d_hr,
                d_lr,
            },
            opts,
            step: 0,
        }
    }

    fn adam_sections(prefix: &str, opt: &AdamState) -> Vec<Section> {
        let mut out = Vec::new();
        for (i, name) in opt.names.iter().enumerate() {
            out.push(Section::from_slice(format!("{prefix}.{name}.m"), &opt.m[i]));
            out.push(Section::from_slice(format!("{prefix}.{name}.v"), &opt.v[i]));
        }
        out
    }

    fn load_adam(
        prefix: &str,
        sections: &[Section],
        opt: &mut AdamState,
        step: u64,
    ) -> Result<(), TrainError> {
        for (i, name) in opt.names.clone().iter().enumerate() {
            let m = sections
                .iter()
                .find(|s| s.name == format!("{prefix}.{name}.m"))
                .ok_or_else(|| TrainError::Checkpoint(format!("missing {prefix}.{name}.m")))?;
            let v = sections
                .iter()
                .find(|s| s.name == format!("{prefix}.{name}.v"))
                .ok_or_else(|| TrainError::Checkpoint(format!("missing {prefix}.{name}.v")))?;
            if m.data.len() != opt.m[i].len() || v.data.len() != opt.v[i].len() {
                return Err(TrainError::Checkpoint(format!(
                    "moment size mismatch for {prefix}.{name}"
                )));
            }
            opt.m[i].copy_from_slice(&m.data);
            opt.v[i].copy_from_slice(&v.data);
        }
        opt.step = step;
        Ok(())
    }

    /// Write the complete training state plus a text sidecar.
    pub fn save(&self, path: &Path, extra_meta: &[(String, String)]) -> Result<(), TrainError> {
        let mut sections = checkpoint::generator_sections("g_lr2hr", &self.nets.g_lr2hr);
        sections.extend(checkpoint::generator_sections("g_hr2lr", &self.nets.g_hr2lr));
        sections.extend(checkpoint::discriminator_sections("d_hr", &self.nets.d_hr));
        sections.extend(checkpoint::discriminator_sections("d_lr", &self.nets.d_lr));
        sections.extend(Self::adam_sections("adam.g_lr2hr", &self.opts.g_lr2hr));
        sections.extend(Self::adam_sections("adam.g_hr2lr", &self.opts.g_hr2lr));
        sections.extend(Self::adam_sections("adam.d_hr", &self.opts.d_hr));
        sections.extend(Self::adam_sections("adam.d_lr", &self.opts.d_lr));
        checkpoint::write_container(path, &sections)?;

        let mut meta = vec![
            ("format".to_string(), "train-state".to_string()),
            ("step".to_string(), self.step.to_string()),
            (
                "fusion".to_string(),
                self.nets.g_lr2hr.fusion.name(),
            ),
            (
                "tool_version".to_string(),
                env!("CARGO_PKG_VERSION").to_string(),
            ),
        ];
        meta.extend_from_slice(extra_meta);
        checkpoint::write_sidecar(path, &meta)?;
        Ok(())
    }

    /// Load a training state saved by [`TrainState::save`].
    pub fn load(path: &Path, adam: AdamParams) -> Result<Self, TrainError> {
        let sections = checkpoint::read_container(path)?;
        let meta = checkpoint::read_sidecar(path)?;
        let get = |key: &str| -> Result<String, TrainError> {
            meta.iter()
                .find(|(k, _)| k == key)
                .map(|(_, v)| v.clone())
                .ok_or_else(|| TrainError::Checkpoint(format!("sidecar missing {key}")))
        };
        let step: u64 = get("step")?
            .parse()
            .map_err(|_| TrainError::Checkpoint("bad step in sidecar".into()))?;
        let fusion = FusionMode::parse(&get("fusion")?)
            .ok_or_else(|| TrainError::Checkpoint("bad fusion in sidecar".into()))?;

        let mut state = TrainState::fresh(0, fusion, adam);
        checkpoint::load_generator("g_lr2hr", &sections, &mut state.nets.g_lr2hr)?;
        checkpoint::load_generator("g_hr2lr", &sections, &mut state.nets.g_hr2lr)?;
        checkpoint::load_discriminator("d_hr", &sections, &mut state.nets.d_hr)?;
        checkpoint::load_discriminator("d_lr", &sections, &mut state.nets.d_lr)?;
        Self::load_adam("adam.g_lr2hr", &sections, &mut state.opts.g_lr2hr, step)?;
        Self::load_adam("adam.g_hr2lr", &sections, &mut state.opts.g_hr2lr, step)?;
        Self::load_adam("adam.d_hr", &sections, &mut state.opts.d_hr, step)?;
        Self::load_adam("adam.d_lr", &sections, &mut state.opts.d_lr, step)?;
        state.step = step;
        Ok(state)
    }
}

// ── data assembly and the loop ──────────────────────────────────────

/// In-memory training corpus in the model domain.
#[derive(Debug, Clone)]
pub struct TrainData {
    pub lr: Vec<Image>,
    pub hr: Vec<Image>,
    /// Indices (lr, hr) of object/stem-matched pairs.
    pub pairs: Vec<(usize, usize)>,
}

/// Replicate or synthesize channels to reach `target`.
pub fn adapt_channels(img: &Image, target: usize) -> Image {
    let c = img.channels();
    if c == target {
        return img.clone();
    }
    let plane = img.height() * img.width();
    let mut data: Vec<f64>;
    if c == 1 {
        data = Vec::with_capacity(target * plane);
        for _ in 0..target.min(3) {
            data.extend_from_slice(img.channel(0));
        }
    } else {
        data = img.data()[..c.min(target) * plane].to_vec();
    }
    while data.len() < target * plane {
        // Luminance of what we have so far.
        let have = data.len() / plane;
        let mut lum = vec![0.0; plane];
        for ch in 0..have {
            for (l, &v) in lum.iter_mut().zip(&data[ch * plane..(ch + 1) * plane]) {
                *l += v / have as f64;
            }
        }
        data.extend_from_slice(&lum);
    }
    data.truncate(target * plane);
    Image::new(target, img.height(), img.width(), data, img.domain()).expect("channel math")
}

/// Load one split of the manifest into model-domain tensors at `side`.
pub fn load_train_data(
    manifest: &Manifest,
    split: Split,
    side: usize,
    fusion: FusionMode,
) -> Result<TrainData, TrainError> {
    let read = |path: &Path, channels: usize| -> Result<Image, TrainError> {
        let img = if channels == 4 {
            netpbm::read_with_nir(path)
        } else {
            netpbm::read(path)
        }
        .map_err(|e| TrainError::Data(e.to_string()))?;
        let img = resize_bilinear(&img, side, side);
        let img = adapt_channels(&img, channels);
        Ok(img.normalize(Domain::Model))
    };

    let mut lr = Vec::new();
    let mut lr_keys = Vec::new();
    for e in manifest.paths(Role::Mobil, split) {
        lr.push(read(&e.path, fusion.in_channels())?);
        lr_keys.push((e.object.clone(), stem(&e.path)));
    }
    let mut hr = Vec::new();
    let mut hr_keys = Vec::new();
    for e in manifest.paths(Role::GroundTruth, split) {
        hr.push(read(&e.path, 3)?);
        hr_keys.push((e.object.clone(), stem(&e.path)));
    }
    let mut pairs = Vec::new();
    for (i, key) in lr_keys.iter().enumerate() {
        if let Some(j) = hr_keys.iter().position(|k| k == key) {
            pairs.push((i, j));
        }
    }
    Ok(TrainData { lr, hr, pairs })
}

fn stem(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

/// Loop configuration (a distilled view of the run config).
#[derive(Debug, Clone)]
pub struct LoopConfig {
    pub epochs: usize,
    pub batch: usize,
    pub seed: u64,
    pub weights: LossWeights,
    pub adam: AdamParams,
    pub checkpoint_cadence: usize,
    pub log_cadence: usize,
    pub out_dir: PathBuf,
}

/// Draw the batch for an absolute step index. Pure function of
/// (seed, step, corpus sizes), so resumed runs see identical batches.
pub fn batch_indices(
    seed: u64,
    step: u64,
    data: &TrainData,
    batch: usize,
    paired: bool,
) -> (Vec<usize>, Vec<usize>) {
    let mut rng = StdRng::seed_from_u64(derive_seed_indexed(seed, "batch", step));
    let mut lr_idx = Vec::with_capacity(batch);
    let mut hr_idx = Vec::with_capacity(batch);
    if paired && !data.pairs.is_empty() {
        for _ in 0..batch {
            let (i, j) = data.pairs[rng.gen_range(0..data.pairs.len())];
            lr_idx.push(i);
            hr_idx.push(j);
        }
    } else {
        for _ in 0..batch {
            lr_idx.push(rng.gen_range(0..data.lr.len()));
        }
        for _ in 0..batch {
            hr_idx.push(rng.gen_range(0..data.hr.len()));
        }
    }
    (lr_idx, hr_idx)
}

/// Run `epochs x ceil(n/batch)` steps (continuing from `state.step` when
/// resuming), appending one record per step to `metrics.log` and writing
/// checkpoints at the configured cadence plus one at the end. Returns the
/// records produced by this call.
pub fn train_loop(
    state: &mut TrainState,
    data: &TrainData,
    cfg: &LoopConfig,
    mut progress: impl FnMut(&LossRecord),
) -> Result<Vec<LossRecord>, TrainError> {
    if data.lr.is_empty() {
        return Err(TrainError::EmptyDomain("mobil"));
    }
    if data.hr.is_empty() {
        return Err(TrainError::EmptyDomain("groundtruth"));
    }
    let paired = cfg.weights.paired > 0.0;
    if paired && data.pairs.is_empty() {
        return Err(TrainError::Data(
            "paired loss enabled but the corpus has no pairs".into(),
        ));
    }
    let per_epoch = if paired {
        data.pairs.len().div_ceil(cfg.batch)
    } else {
        data.lr.len().div_ceil(cfg.batch)
    };
    let target = (cfg.epochs * per_epoch) as u64;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| TrainError::Io {
        path: cfg.out_dir.clone(),
        message: e.to_string(),
    })?;
    let log_path = cfg.out_dir.join("metrics.log");
    let mut log = std::io::BufWriter::new(
        std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log_path)
            .map_err(|e| TrainError::Io {
                path: log_path.clone(),
                message: e.to_string(),
            })?,
    );

    let mut records = Vec::new();
    while state.step < target {
        let step = state.step + 1;
        let (lr_idx, hr_idx) = batch_indices(cfg.seed, step, data, cfg.batch, paired);
        let batch_lr: Vec<Image> = lr_idx.iter().map(|&i| data.lr[i].clone()).collect();
        let batch_hr: Vec<Image> = hr_idx.iter().map(|&i| data.hr[i].clone()).collect();
        let record = train_step(state, &batch_lr, &batch_hr, &cfg.weights)?;

        writeln!(log, "{}", record.log_line()).map_err(|e| TrainError::Io {
            path: log_path.clone(),
            message: e.to_string(),
        })?;
        if cfg.log_cadence > 0 && step % cfg.log_cadence as u64 == 0 {
            progress(&record);
        }
        let at_cadence = cfg.checkpoint_cadence > 0
            && step % cfg.checkpoint_cadence as u64 == 0;
        if at_cadence || step == target {
            let path = cfg.out_dir.join(format!("ckpt_{step:06}.strc"));
            state.save(&path, &[("seed".to_string(), cfg.seed.to_string())])?;
        }
        records.push(record);
    }
    log.flush().map_err(|e| TrainError::Io {
        path: log_path,
        message: e.to_string(),
    })?;
    Ok(records)
}

#[cfg(test)]
mod tests;
