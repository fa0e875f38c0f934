//! The generator (three-stage attention encoder-decoder with additive
//! skips) and the four-layer patch discriminator.
//!
//! Encoder channel chain 3 (or 4) -> 64 -> 128 -> 256 with 4x4/stride-2/
//! pad-1 kernels, batch norm on every block but the first, LeakyReLU(0.2).
//! A 1x1 convolution plus sigmoid gates the deepest features; the decoder
//! mirrors the encoder with transposed convolutions, adds the matching
//! encoder maps, and a final tanh pins the output to `[-1, 1]`. Multi-band
//! inputs enter either as a 4th channel (early fusion) or stacked along a
//! depth axis through a 3-d first stage (volumetric).

pub mod checkpoint;

use crate::dataset::{Domain, Image};
use crate::tensor::norm::BatchMoments;
use crate::tensor::{ConvSpec, RunningStats, Tape, Tensor, TensorError, Var};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};

pub const LEAKY_SLOPE: f64 = 0.2;
pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// How spectral bands enter the generator.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FusionMode {
    /// RGB only, `C_in = 3`.
    OpticalOnly,
    /// NIR as a 4th input channel, `C_in = 4`.
    EarlyFusionNir,
    /// Bands stacked along a depth axis through a 3-d first encoder stage.
    Volumetric { bands: usize },
}

impl FusionMode {
    pub fn in_channels(self) -> usize {
        match self {
            FusionMode::OpticalOnly => 3,
            FusionMode::EarlyFusionNir => 4,
            FusionMode::Volumetric { bands } => bands,
        }
    }

    pub fn name(self) -> String {
        match self {
            FusionMode::OpticalOnly => "optical_only".into(),
            FusionMode::EarlyFusionNir => "early_fusion_nir".into(),
            FusionMode::Volumetric { bands } => format!("volumetric:{bands}"),
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "optical_only" => Some(FusionMode::OpticalOnly),
            "early_fusion_nir" => Some(FusionMode::EarlyFusionNir),
            "volumetric" => Some(FusionMode::Volumetric { bands: 4 }),
            other => {
                let bands: usize = other.strip_prefix("volumetric:")?.parse().ok()?;
                if bands == 3 || bands == 4 {
                    Some(FusionMode::Volumetric { bands })
                } else {
                    None
                }
            }
        }
    }
}

/// Weight + bias of one convolution.
#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlock {
    pub weight: Tensor,
    pub bias: Tensor,
}

/// Batch-norm affine parameters plus running moments.
#[derive(Debug, Clone, PartialEq)]
pub struct BnBlock {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running: RunningStats,
}

pub const GEN_CHANNELS: [usize; 3] = [64, 128, 256];
pub const OUT_CHANNELS: usize = 3;

/// All learnable state of the generator.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneratorParams {
    pub fusion: FusionMode,
    pub e1: ConvBlock,
    pub e2: ConvBlock,
    pub bn2: BnBlock,
    pub e3: ConvBlock,
    pub bn3: BnBlock,
    pub att: ConvBlock,
    pub u1: ConvBlock,
    pub bnu1: BnBlock,
    pub u2: ConvBlock,
    pub bnu2: BnBlock,
    pub u3: ConvBlock,
}

/// All learnable state of the discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorParams {
    pub layers: [ConvBlock; 4],
}

pub const DISC_CHANNELS: [usize; 4] = [64, 128, 256, 1];
pub const DISC_STRIDES: [usize; 4] = [2, 2, 2, 1];

fn conv_spec_e1_2d(in_channels: usize) -> ConvSpec {
    ConvSpec::two_d(in_channels, GEN_CHANNELS[0], 4, 2, 1)
}

fn conv_spec_e1_3d(bands: usize) -> ConvSpec {
    // Kernel spans all bands with no depth padding, so depth collapses to 1.
    ConvSpec::three_d(1, GEN_CHANNELS[0], [bands, 4, 4], [1, 2, 2], [0, 1, 1])
}

fn gen_specs() -> (ConvSpec, ConvSpec, ConvSpec, ConvSpec, ConvSpec, ConvSpec) {
    (
        ConvSpec::two_d(GEN_CHANNELS[0], GEN_CHANNELS[1], 4, 2, 1), // e2
        ConvSpec::two_d(GEN_CHANNELS[1], GEN_CHANNELS[2], 4, 2, 1), // e3
        ConvSpec::two_d(GEN_CHANNELS[2], 1, 1, 1, 0),               // att
        ConvSpec::two_d(GEN_CHANNELS[2], GEN_CHANNELS[1], 4, 2, 1), // u1 (transposed)
        ConvSpec::two_d(GEN_CHANNELS[1], GEN_CHANNELS[0], 4, 2, 1), // u2 (transposed)
        ConvSpec::two_d(GEN_CHANNELS[0], OUT_CHANNELS, 4, 2, 1),    // u3 (transposed)
    )
}

fn disc_spec(layer: usize) -> ConvSpec {
    let cin = if layer == 0 { 3 } else { DISC_CHANNELS[layer - 1] };
    ConvSpec::two_d(cin, DISC_CHANNELS[layer], 4, DISC_STRIDES[layer], 1)
}

fn sample_normal(rng: &mut StdRng, shape: Vec<usize>, mean: f64, std: f64) -> Tensor {
    let dist = Normal::new(mean, std).expect("valid normal");
    let numel: usize = shape.iter().product();
    let mut t = Tensor::new(shape, (0..numel).map(|_| dist.sample(rng)).collect())
        .expect("shape matches count");
    // Parameters are f32-representable from birth so checkpoints are
    // lossless and resume is bit-exact.
    t.quantize_f32();
    t
}

fn init_conv(rng: &mut StdRng, wshape: Vec<usize>, out_channels: usize) -> ConvBlock {
    ConvBlock {
        weight: sample_normal(rng, wshape, 0.0, 0.02),
        bias: Tensor::zeros(vec![out_channels]),
    }
}

fn init_bn(rng: &mut StdRng, channels: usize) -> BnBlock {
    BnBlock {
        gamma: sample_normal(rng, vec![channels], 1.0, 0.02),
        beta: Tensor::zeros(vec![channels]),
        running: RunningStats::new(channels, BN_MOMENTUM),
    }
}

impl GeneratorParams {
    /// Convolution weights ~ Normal(0, 0.02^2), biases zero, batch-norm
    /// gamma ~ Normal(1, 0.02^2), beta zero; deterministic per seed.
    pub fn init(seed: u64, fusion: FusionMode) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let (s2, s3, sa, s_u1, s_u2, s_u3) = gen_specs();
        let e1 = match fusion {
            FusionMode::Volumetric { bands } => {
                let spec = conv_spec_e1_3d(bands);
                init_conv(&mut rng, spec.weight_shape(), GEN_CHANNELS[0])
            }
            _ => {
                let spec = conv_spec_e1_2d(fusion.in_channels());
                init_conv(&mut rng, spec.weight_shape(), GEN_CHANNELS[0])
            }
        };
        GeneratorParams {
            fusion,
            e1,
            e2: init_conv(&mut rng, s2.weight_shape(), GEN_CHANNELS[1]),
            bn2: init_bn(&mut rng, GEN_CHANNELS[1]),
            e3: init_conv(&mut rng, s3.weight_shape(), GEN_CHANNELS[2]),
            bn3: init_bn(&mut rng, GEN_CHANNELS[2]),
            att: init_conv(&mut rng, sa.weight_shape(), 1),
            u1: init_conv(&mut rng, s_u1.transpose_weight_shape(), GEN_CHANNELS[1]),
            bnu1: init_bn(&mut rng, GEN_CHANNELS[1]),
            u2: init_conv(&mut rng, s_u2.transpose_weight_shape(), GEN_CHANNELS[0]),
            bnu2: init_bn(&mut rng, GEN_CHANNELS[0]),
            u3: init_conv(&mut rng, s_u3.transpose_weight_shape(), OUT_CHANNELS),
        }
    }

    /// All-zero parameters (kept for the zero-output contract tests).
    pub fn zeros(fusion: FusionMode) -> Self {
        let mut p = Self::init(0, fusion);
        for (_, t) in p.named_trainable_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }

    pub fn named_trainable(&self) -> Vec<(String, &Tensor)> {
        let mut v: Vec<(String, &Tensor)> = Vec::new();
        for (name, block) in [
            ("e1", &self.e1),
            ("e2", &self.e2),
            ("e3", &self.e3),
            ("att", &self.att),
            ("u1", &self.u1),
            ("u2", &self.u2),
            ("u3", &self.u3),
        ] {
            v.push((format!("{name}.weight"), &block.weight));
            v.push((format!("{name}.bias"), &block.bias));
        }
        for (name, bn) in [
            ("bn2", &self.bn2),
            ("bn3", &self.bn3),
            ("bnu1", &self.bnu1),
            ("bnu2", &self.bnu2),
        ] {
            v.push((format!("{name}.gamma"), &bn.gamma));
            v.push((format!("{name}.beta"), &bn.beta));
        }
        v
    }

    pub fn named_trainable_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut v: Vec<(String, &mut Tensor)> = Vec::new();
        for (name, block) in [
            ("e1", &mut self.e1),
            ("e2", &mut self.e2),
            ("e3", &mut self.e3),
            ("att", &mut self.att),
            ("u1", &mut self.u1),
            ("u2", &mut self.u2),
            ("u3", &mut self.u3),
        ] {
            v.push((format!("{name}.weight"), &mut block.weight));
            v.push((format!("{name}.bias"), &mut block.bias));
        }
        for (name, bn) in [
            ("bn2", &mut self.bn2),
            ("bn3", &mut self.bn3),
            ("bnu1", &mut self.bnu1),
            ("bnu2", &mut self.bnu2),
        ] {
            v.push((format!("{name}.gamma"), &mut bn.gamma));
            v.push((format!("{name}.beta"), &mut bn.beta));
        }
        v
    }

    fn bn_blocks_mut(&mut self) -> [&mut BnBlock; 4] {
        [&mut self.bn2, &mut self.bn3, &mut self.bnu1, &mut self.bnu2]
    }

    /// Fold freshly observed batch moments into the running averages and
    /// keep them f32-representable.
    pub fn update_running_stats(&mut self, moments: &[BatchMoments; 4]) {
        for (bn, m) in self.bn_blocks_mut().into_iter().zip(moments.iter()) {
            bn.running.update(m);
            for v in bn.running.mean.iter_mut().chain(bn.running.var.iter_mut()) {
                *v = *v as f32 as f64;
            }
        }
    }
}

impl DiscriminatorParams {
    pub fn init(seed: u64) -> Self {
        let mut rng = StdRng::seed_from_u64(seed);
        let layers = std::array::from_fn(|i| {
            let spec = disc_spec(i);
            init_conv(&mut rng, spec.weight_shape(), DISC_CHANNELS[i])
        });
        DiscriminatorParams { layers }
    }

    pub fn zeros() -> Self {
        let mut p = Self::init(0);
        for (_, t) in p.named_trainable_mut() {
            t.data_mut().fill(0.0);
        }
        p
    }

    pub fn named_trainable(&self) -> Vec<(String, &Tensor)> {
        self.layers
            .iter()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("l{}.weight", i + 1), &b.weight),
                    (format!("l{}.bias", i + 1), &b.bias),
                ]
            })
            .collect()
    }

    pub fn named_trainable_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        self.layers
            .iter_mut()
            .enumerate()
            .flat_map(|(i, b)| {
                [
                    (format!("l{}.weight", i + 1), &mut b.weight),
                    (format!("l{}.bias", i + 1), &mut b.bias),
                ]
            })
            .collect()
    }
}

/// Convenience: one generator/discriminator pair from one seed.
pub fn init_weights(seed: u64, fusion: FusionMode) -> (GeneratorParams, DiscriminatorParams) {
    (
        GeneratorParams::init(crate::config::derive_seed(seed, "generator"), fusion),
        DiscriminatorParams::init(crate::config::derive_seed(seed, "discriminator")),
    )
}

/// Whether batch norm uses instance moments (train) or running ones (eval).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnUse {
    Train,
    Eval,
}

/// Variable handles for generator parameters registered on a tape.
pub struct GeneratorVars {
    pub e1_w: Var,
    pub e1_b: Var,
    pub e2_w: Var,
    pub e2_b: Var,
    pub bn2_g: Var,
    pub bn2_b: Var,
    pub e3_w: Var,
    pub e3_b: Var,
    pub bn3_g: Var,
    pub bn3_b: Var,
    pub att_w: Var,
    pub att_b: Var,
    pub u1_w: Var,
    pub u1_b: Var,
    pub bnu1_g: Var,
    pub bnu1_b: Var,
    pub u2_w: Var,
    pub u2_b: Var,
    pub bnu2_g: Var,
    pub bnu2_b: Var,
    pub u3_w: Var,
    pub u3_b: Var,
    fusion: FusionMode,
}

impl GeneratorVars {
    /// Parameter vars in the same order as `named_trainable`.
    pub fn ordered(&self) -> Vec<Var> {
        vec![
            self.e1_w, self.e1_b, self.e2_w, self.e2_b, self.e3_w, self.e3_b, self.att_w,
            self.att_b, self.u1_w, self.u1_b, self.u2_w, self.u2_b, self.u3_w, self.u3_b,
            self.bn2_g, self.bn2_b, self.bn3_g, self.bn3_b, self.bnu1_g, self.bnu1_b,
            self.bnu2_g, self.bnu2_b,
        ]
    }
}

/// Register generator parameters on a tape; `trainable` decides whether
/// gradients flow to them.
pub fn register_generator(tape: &mut Tape, p: &GeneratorParams, trainable: bool) -> GeneratorVars {
    let mut reg = |t: &Tensor| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.input(t.clone())
        }
    };
    GeneratorVars {
        e1_w: reg(&p.e1.weight),
        e1_b: reg(&p.e1.bias),
        e2_w: reg(&p.e2.weight),
        e2_b: reg(&p.e2.bias),
        bn2_g: reg(&p.bn2.gamma),
        bn2_b: reg(&p.bn2.beta),
        e3_w: reg(&p.e3.weight),
        e3_b: reg(&p.e3.bias),
        bn3_g: reg(&p.bn3.gamma),
        bn3_b: reg(&p.bn3.beta),
        att_w: reg(&p.att.weight),
        att_b: reg(&p.att.bias),
        u1_w: reg(&p.u1.weight),
        u1_b: reg(&p.u1.bias),
        bnu1_g: reg(&p.bnu1.gamma),
        bnu1_b: reg(&p.bnu1.beta),
        u2_w: reg(&p.u2.weight),
        u2_b: reg(&p.u2.bias),
        bnu2_g: reg(&p.bnu2.gamma),
        bnu2_b: reg(&p.bnu2.beta),
        u3_w: reg(&p.u3.weight),
        u3_b: reg(&p.u3.bias),
        fusion: p.fusion,
    }
}

/// Everything the forward pass produced that callers may need.
pub struct GeneratorOutput {
    pub output: Var,
    pub attention: Var,
    /// Batch moments of [bn2, bn3, bnu1, bnu2] when run in train mode.
    pub moments: Option<[BatchMoments; 4]>,
}

/// Gate applied to the deepest encoder features.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionUse {
    Normal,
    /// Skip the gate entirely (the "no-attention variant" the saturation
    /// property compares against).
    Bypass,
}

fn check_generator_input(x: &Tensor, fusion: FusionMode) -> Result<(), TensorError> {
    if x.shape().len() != 3 {
        return Err(TensorError::InvalidSpec(format!(
            "generator input must be [C, H, W], got {:?}",
            x.shape()
        )));
    }
    let (c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    if c != fusion.in_channels() {
        return Err(TensorError::ChannelMismatch {
            context: "generator input".into(),
            expected: fusion.in_channels(),
            actual: c,
        });
    }
    if h % 8 != 0 || w % 8 != 0 || h == 0 || w == 0 {
        return Err(TensorError::InvalidSpec(format!(
            "generator input spatial dims must be positive multiples of 8, got {h}x{w}"
        )));
    }
    Ok(())
}

/// Build the generator graph on `tape` from input var `x` (an image in the
/// model domain). Batch norm runs per `bn`; the returned moments let the
/// caller update running statistics after the step.
pub fn generator_forward_on_tape(
    tape: &mut Tape,
    vars: &GeneratorVars,
    params: &GeneratorParams,
    x: Var,
    bn: BnUse,
    attention: AttentionUse,
) -> Result<GeneratorOutput, TensorError> {
    check_generator_input(tape.value(x), vars.fusion)?;
    let (s2, s3, sa, s_u1, s_u2, s_u3) = gen_specs();

    // Encoder stage 1: 2-d, or 3-d over bands stacked as depth.
    let d1 = match vars.fusion {
        FusionMode::Volumetric { bands } => {
            let shape = tape.value(x).shape().to_vec();
            let (h, w) = (shape[1], shape[2]);
            let vol = tape.reshape(x, vec![1, bands, h, w])?;
            let y = tape.conv(vol, vars.e1_w, vars.e1_b, &conv_spec_e1_3d(bands))?;
            let squeezed = tape.reshape(y, vec![GEN_CHANNELS[0], h / 2, w / 2])?;
            tape.leaky_relu(squeezed, LEAKY_SLOPE)
        }
        mode => {
            let y = tape.conv(x, vars.e1_w, vars.e1_b, &conv_spec_e1_2d(mode.in_channels()))?;
            tape.leaky_relu(y, LEAKY_SLOPE)
        }
    };

    let mut moments: Vec<BatchMoments> = Vec::with_capacity(4);
    let bn_apply = |tape: &mut Tape,
                        v: Var,
                        g: Var,
                        b: Var,
                        block: &BnBlock,
                        moments: &mut Vec<BatchMoments>|
     -> Result<Var, TensorError> {
        match bn {
            BnUse::Train => {
                let (out, m) = tape.batch_norm_train(v, g, b, BN_EPS)?;
                moments.push(m);
                Ok(out)
            }
            BnUse::Eval => {
                tape.batch_norm_eval(v, g, b, BN_EPS, &block.running.mean, &block.running.var)
            }
        }
    };

    let y = tape.conv(d1, vars.e2_w, vars.e2_b, &s2)?;
    let y = bn_apply(tape, y, vars.bn2_g, vars.bn2_b, &params.bn2, &mut moments)?;
    let d2 = tape.leaky_relu(y, LEAKY_SLOPE);

    let y = tape.conv(d2, vars.e3_w, vars.e3_b, &s3)?;
    let y = bn_apply(tape, y, vars.bn3_g, vars.bn3_b, &params.bn3, &mut moments)?;
    let d3 = tape.leaky_relu(y, LEAKY_SLOPE);

    // Attention gate over the deepest features.
    let logits = tape.conv(d3, vars.att_w, vars.att_b, &sa)?;
    let att = tape.sigmoid(logits);
    let gated = match attention {
        AttentionUse::Normal => tape.mul_gate(d3, att)?,
        AttentionUse::Bypass => d3,
    };

    let y = tape.conv_transpose(gated, vars.u1_w, vars.u1_b, &s_u1)?;
    let y = bn_apply(tape, y, vars.bnu1_g, vars.bnu1_b, &params.bnu1, &mut moments)?;
    let y = tape.leaky_relu(y, LEAKY_SLOPE);
    let y = tape.add(y, d2)?;

    let y = tape.conv_transpose(y, vars.u2_w, vars.u2_b, &s_u2)?;
    let y = bn_apply(tape, y, vars.bnu2_g, vars.bnu2_b, &params.bnu2, &mut moments)?;
    let y = tape.leaky_relu(y, LEAKY_SLOPE);
    let y = tape.add(y, d1)?;

    let y = tape.conv_transpose(y, vars.u3_w, vars.u3_b, &s_u3)?;
    let output = tape.tanh(y);

    let moments = match bn {
        BnUse::Train => {
            let arr: [BatchMoments; 4] = moments.try_into().map_err(|_| {
                TensorError::InvalidSpec("expected four batch-norm stages".into())
            })?;
            Some(arr)
        }
        BnUse::Eval => None,
    };
    Ok(GeneratorOutput {
        output,
        attention: att,
        moments,
    })
}

/// Run the generator on an image. Train-mode batch norm updates the running
/// statistics in `params`; eval mode leaves them untouched.
pub fn generator_forward(
    params: &mut GeneratorParams,
    x: &Image,
    bn: BnUse,
) -> Result<Image, TensorError> {
    let mut tape = Tape::new();
    let input = tape.input(x.to_tensor());
    let vars = register_generator(&mut tape, params, false);
    let out = generator_forward_on_tape(&mut tape, &vars, params, input, bn, AttentionUse::Normal)?;
    if let Some(m) = &out.moments {
        params.update_running_stats(m);
    }
    Image::from_tensor(tape.value(out.output), Domain::Model)
        .map_err(|e| TensorError::InvalidSpec(e.to_string()))
}

/// The attention map alone: `sigmoid(conv1x1(d3))`, values in (0, 1).
pub fn attention_map(params: &GeneratorParams, d3: &Tensor) -> Result<Tensor, TensorError> {
    if d3.shape().first() != Some(&GEN_CHANNELS[2]) {
        return Err(TensorError::ChannelMismatch {
            context: "attention_map".into(),
            expected: GEN_CHANNELS[2],
            actual: d3.shape().first().copied().unwrap_or(0),
        });
    }
    let (_, _, sa, _, _, _) = gen_specs();
    let logits = crate::tensor::conv_forward(d3, &sa, &params.att.weight, &params.att.bias)?;
    Ok(crate::tensor::activation(
        &logits,
        crate::tensor::ActivationKind::Sigmoid,
    ))
}

/// Variable handles for discriminator parameters registered on a tape.
pub struct DiscriminatorVars {
    pub w: [Var; 4],
    pub b: [Var; 4],
}

impl DiscriminatorVars {
    pub fn ordered(&self) -> Vec<Var> {
        (0..4).flat_map(|i| [self.w[i], self.b[i]]).collect()
    }
}

pub fn register_discriminator(
    tape: &mut Tape,
    p: &DiscriminatorParams,
    trainable: bool,
) -> DiscriminatorVars {
    let mut reg = |t: &Tensor| {
        if trainable {
            tape.param(t.clone())
        } else {
            tape.input(t.clone())
        }
    };
    DiscriminatorVars {
        w: std::array::from_fn(|i| reg(&p.layers[i].weight)),
        b: std::array::from_fn(|i| reg(&p.layers[i].bias)),
    }
}

/// Build the discriminator graph: probability map in (0, 1).
pub fn discriminator_forward_on_tape(
    tape: &mut Tape,
    vars: &DiscriminatorVars,
    image: Var,
) -> Result<Var, TensorError> {
    let shape = tape.value(image).shape();
    if shape.len() != 3 || shape[0] != 3 {
        return Err(TensorError::ChannelMismatch {
            context: "discriminator input".into(),
            expected: 3,
            actual: shape.first().copied().unwrap_or(0),
        });
    }
    let mut y = image;
    for i in 0..4 {
        y = tape.conv(y, vars.w[i], vars.b[i], &disc_spec(i))?;
        if i < 3 {
            y = tape.leaky_relu(y, LEAKY_SLOPE);
        }
    }
    Ok(tape.sigmoid(y))
}

/// Run the discriminator on an image, returning the probability map.
pub fn discriminator_forward(
    params: &DiscriminatorParams,
    image: &Image,
) -> Result<Tensor, TensorError> {
    let mut tape = Tape::new();
    let input = tape.input(image.to_tensor());
    let vars = register_discriminator(&mut tape, params, false);
    let out = discriminator_forward_on_tape(&mut tape, &vars, input)?;
    Ok(tape.value(out).clone())
}
