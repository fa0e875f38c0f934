//! Minimal differentiable N-d array engine.
//!
//! A [`Tensor`] is a row-major, channel-first `f64` buffer with explicit
//! shape. Forward operators live in [`conv`] as plain functions; training
//! records them on a [`tape::Tape`] which replays the recorded graph in
//! reverse to accumulate gradients. 64-bit floats throughout: correctness
//! tests check against central finite differences at `h = 1e-5`, which f32
//! cannot resolve.

pub mod conv;
pub mod norm;
pub mod tape;

pub use norm::BatchMoments;
pub use tape::{ActivationKind, Tape, Var};

use std::fmt;

/// Errors from shape-checked tensor operations.
#[derive(Debug, Clone, PartialEq)]
pub enum TensorError {
    /// Shapes incompatible for the attempted operation.
    ShapeMismatch {
        context: String,
        expected: Vec<usize>,
        actual: Vec<usize>,
    },
    /// Channel count differs from what the operation requires.
    ChannelMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },
    /// A convolution spec violates its invariants, or the input is too
    /// small for the kernel/stride/padding combination.
    InvalidSpec(String),
    /// Gradient requested before `Tape::backward` ran.
    BackwardNotRun,
    /// A value that must be finite was NaN or infinite.
    NonFinite(String),
}

impl fmt::Display for TensorError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            TensorError::ShapeMismatch {
                context,
                expected,
                actual,
            } => write!(
                f,
                "{context}: shape mismatch, expected {expected:?} but got {actual:?}"
            ),
            TensorError::ChannelMismatch {
                context,
                expected,
                actual,
            } => write!(
                f,
                "{context}: channel mismatch, expected {expected} but got {actual}"
            ),
            TensorError::InvalidSpec(reason) => write!(f, "invalid spec: {reason}"),
            TensorError::BackwardNotRun => {
                write!(f, "gradient requested before backward() was run")
            }
            TensorError::NonFinite(context) => write!(f, "non-finite value in {context}"),
        }
    }
}

impl std::error::Error for TensorError {}

/// N-dimensional array: row-major `f64` buffer plus shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Build from shape and flat data. Fails if `product(shape) != data.len()`.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(TensorError::ShapeMismatch {
                context: "Tensor::new".into(),
                expected: vec![numel],
                actual: vec![data.len()],
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; numel],
        }
    }

    pub fn filled(shape: Vec<usize>, value: f64) -> Self {
        let numel = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; numel],
        }
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    /// The single element of a scalar tensor.
    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.data.len(), 1, "item() on non-scalar tensor");
        self.data[0]
    }

    /// Reinterpret the buffer under a new shape of equal element count.
    pub fn reshaped(mut self, shape: Vec<usize>) -> Result<Self, TensorError> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() {
            return Err(TensorError::ShapeMismatch {
                context: "Tensor::reshaped".into(),
                expected: vec![self.data.len()],
                actual: vec![numel],
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Quantize every element through f32, so the value survives a 32-bit
    /// checkpoint round trip unchanged. Used on all mutable training state.
    pub fn quantize_f32(&mut self) {
        for v in &mut self.data {
            *v = *v as f32 as f64;
        }
    }
}

/// Geometry of a convolution: channel counts plus per-spatial-dim kernel,
/// stride and padding. `kernel.len()` is the dimensionality (2 or 3).
#[derive(Debug, Clone, PartialEq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: Vec<usize>,
    pub stride: Vec<usize>,
    pub padding: Vec<usize>,
}

impl ConvSpec {
    /// Square 2-d kernel with uniform stride and padding.
    pub fn two_d(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: vec![kernel; 2],
            stride: vec![stride; 2],
            padding: vec![padding; 2],
        }
    }

    /// 3-d kernel with per-dim geometry, ordered (depth, height, width).
    pub fn three_d(
        in_channels: usize,
        out_channels: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel: kernel.to_vec(),
            stride: stride.to_vec(),
            padding: padding.to_vec(),
        }
    }

    pub fn dimensionality(&self) -> usize {
        self.kernel.len()
    }

    pub fn validate(&self) -> Result<(), TensorError> {
        let d = self.kernel.len();
        if d != 2 && d != 3 {
            return Err(TensorError::InvalidSpec(format!(
                "dimensionality must be 2 or 3, got {d}"
            )));
        }
        if self.stride.len() != d || self.padding.len() != d {
            return Err(TensorError::InvalidSpec(
                "kernel/stride/padding dimensionality disagree".into(),
            ));
        }
        if self.in_channels == 0 || self.out_channels == 0 {
            return Err(TensorError::InvalidSpec("zero channel count".into()));
        }
        if self.kernel.iter().any(|&k| k == 0) {
            return Err(TensorError::InvalidSpec("kernel size must be >= 1".into()));
        }
        if self.stride.iter().any(|&s| s == 0) {
            return Err(TensorError::InvalidSpec("stride must be >= 1".into()));
        }
        Ok(())
    }

    /// Weight shape for the forward convolution: `[out, in, kernel...]`.
    pub fn weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.out_channels, self.in_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    /// Weight shape for the transposed convolution: `[in, out, kernel...]`.
    pub fn transpose_weight_shape(&self) -> Vec<usize> {
        let mut s = vec![self.in_channels, self.out_channels];
        s.extend_from_slice(&self.kernel);
        s
    }

    /// Output spatial size of the forward convolution:
    /// `floor((in + 2 pad - kernel) / stride) + 1` per dim.
    pub fn out_size(&self, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        let mut out = Vec::with_capacity(input.len());
        for (dim, &n) in input.iter().enumerate() {
            let padded = n + 2 * self.padding[dim];
            if padded < self.kernel[dim] {
                return Err(TensorError::InvalidSpec(format!(
                    "spatial dim {dim} of size {n} too small for kernel {} with padding {}",
                    self.kernel[dim], self.padding[dim]
                )));
            }
            out.push((padded - self.kernel[dim]) / self.stride[dim] + 1);
        }
        Ok(out)
    }

    /// Output spatial size of the transposed convolution:
    /// `(in - 1) * stride - 2 pad + kernel` per dim.
    pub fn transpose_out_size(&self, input: &[usize]) -> Result<Vec<usize>, TensorError> {
        let mut out = Vec::with_capacity(input.len());
        for (dim, &n) in input.iter().enumerate() {
            let grown = (n - 1) * self.stride[dim] + self.kernel[dim];
            if grown < 2 * self.padding[dim] {
                return Err(TensorError::InvalidSpec(format!(
                    "spatial dim {dim}: transposed output would be negative"
                )));
            }
            out.push(grown - 2 * self.padding[dim]);
        }
        Ok(out)
    }
}

/// Stateless forward convolution (2-d or 3-d by `spec`). Input `[C_in,
/// spatial...]`, weights `spec.weight_shape()`, bias `[C_out]`.
pub fn conv_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    conv::conv_forward(input, spec, weights, bias)
}

/// Stateless transposed convolution, the adjoint of [`conv_forward`] for a
/// matching spec with zero bias. Weights `spec.transpose_weight_shape()`.
pub fn conv_transpose_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    conv::conv_transpose_forward(input, spec, weights, bias)
}

/// Batch-norm execution mode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BnMode {
    Train,
    Eval,
}

/// Exponential-moving-average channel statistics carried across steps.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
    pub momentum: f64,
}

impl RunningStats {
    pub fn new(channels: usize, momentum: f64) -> Self {
        RunningStats {
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
            momentum,
        }
    }

    /// EMA update: `running = (1 - momentum) * running + momentum * batch`.
    pub fn update(&mut self, moments: &BatchMoments) {
        for (r, &b) in self.mean.iter_mut().zip(&moments.mean) {
            *r = (1.0 - self.momentum) * *r + self.momentum * b;
        }
        for (r, &b) in self.var.iter_mut().zip(&moments.var) {
            *r = (1.0 - self.momentum) * *r + self.momentum * b;
        }
    }
}

/// Stateless batch norm over `[C, spatial...]`. Train mode normalizes with
/// the instance's channel moments and updates `running`; eval mode uses the
/// running averages as constants.
pub fn batch_norm(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    mode: BnMode,
    running: &mut RunningStats,
) -> Result<Tensor, TensorError> {
    match mode {
        BnMode::Train => {
            let (out, _, moments) = norm::bn_train_forward(input, gamma, beta, eps)?;
            running.update(&moments);
            Ok(out)
        }
        BnMode::Eval => {
            let (out, _) =
                norm::bn_eval_forward(input, gamma, beta, eps, &running.mean, &running.var)?;
            Ok(out)
        }
    }
}

/// Stateless elementwise activation.
pub fn activation(input: &Tensor, kind: ActivationKind) -> Tensor {
    let data = input.data().iter().map(|&v| kind.apply(v)).collect();
    Tensor {
        shape: input.shape().to_vec(),
        data,
    }
}
