//! Per-channel normalization over the spatial dims of a single instance.
//!
//! Train mode normalizes with the instance's own (biased) channel moments and
//! reports them so callers can update running averages; eval mode treats the
//! supplied running moments as constants.

use super::{Tensor, TensorError};

/// Channel moments observed during a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BatchMoments {
    pub mean: Vec<f64>,
    pub var: Vec<f64>,
}

pub(crate) struct BnSaved {
    pub xhat: Vec<f64>,
    pub inv_std: Vec<f64>,
}

fn check_channels(input: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<usize, TensorError> {
    let c = input.shape()[0];
    for (name, t) in [("gamma", gamma), ("beta", beta)] {
        if t.shape() != [c] {
            return Err(TensorError::ChannelMismatch {
                context: format!("batch_norm {name}"),
                expected: c,
                actual: t.numel(),
            });
        }
    }
    Ok(c)
}

pub(crate) fn bn_train_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
) -> Result<(Tensor, BnSaved, BatchMoments), TensorError> {
    if eps <= 0.0 {
        return Err(TensorError::InvalidSpec("batch_norm eps must be > 0".into()));
    }
    let c = check_channels(input, gamma, beta)?;
    let n = input.numel() / c;
    let x = input.data();
    let mut out = vec![0.0; input.numel()];
    let mut xhat = vec![0.0; input.numel()];
    let mut inv_std = vec![0.0; c];
    let mut mean = vec![0.0; c];
    let mut var = vec![0.0; c];
    for ci in 0..c {
        let xc = &x[ci * n..][..n];
        let m = xc.iter().sum::<f64>() / n as f64;
        let v = xc.iter().map(|&u| (u - m) * (u - m)).sum::<f64>() / n as f64;
        let istd = 1.0 / (v + eps).sqrt();
        mean[ci] = m;
        var[ci] = v;
        inv_std[ci] = istd;
        let (g, b) = (gamma.data()[ci], beta.data()[ci]);
        for i in 0..n {
            let xh = (xc[i] - m) * istd;
            xhat[ci * n + i] = xh;
            out[ci * n + i] = g * xh + b;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out).expect("same shape"),
        BnSaved { xhat, inv_std },
        BatchMoments { mean, var },
    ))
}

pub(crate) fn bn_eval_forward(
    input: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f64,
    run_mean: &[f64],
    run_var: &[f64],
) -> Result<(Tensor, BnSaved), TensorError> {
    if eps <= 0.0 {
        return Err(TensorError::InvalidSpec("batch_norm eps must be > 0".into()));
    }
    let c = check_channels(input, gamma, beta)?;
    let n = input.numel() / c;
    let x = input.data();
    let mut out = vec![0.0; input.numel()];
    let mut xhat = vec![0.0; input.numel()];
    let mut inv_std = vec![0.0; c];
    for ci in 0..c {
        let istd = 1.0 / (run_var[ci] + eps).sqrt();
        inv_std[ci] = istd;
        let (m, g, b) = (run_mean[ci], gamma.data()[ci], beta.data()[ci]);
        for i in 0..n {
            let xh = (x[ci * n + i] - m) * istd;
            xhat[ci * n + i] = xh;
            out[ci * n + i] = g * xh + b;
        }
    }
    Ok((
        Tensor::new(input.shape().to_vec(), out).expect("same shape"),
        BnSaved { xhat, inv_std },
    ))
}

/// VJP of train-mode normalization. The mean/variance dependence on the
/// input contributes the two correction terms.
pub(crate) fn bn_train_backward(
    d_out: &[f64],
    gamma: &Tensor,
    saved: &BnSaved,
    channels: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = d_out.len() / channels;
    let nf = n as f64;
    let mut d_x = vec![0.0; d_out.len()];
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for ci in 0..channels {
        let dy = &d_out[ci * n..][..n];
        let xh = &saved.xhat[ci * n..][..n];
        let sum_dy: f64 = dy.iter().sum();
        let sum_dy_xh: f64 = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
        d_beta[ci] = sum_dy;
        d_gamma[ci] = sum_dy_xh;
        let scale = gamma.data()[ci] * saved.inv_std[ci];
        for i in 0..n {
            d_x[ci * n + i] = scale * (dy[i] - sum_dy / nf - xh[i] * sum_dy_xh / nf);
        }
    }
    (d_x, d_gamma, d_beta)
}

/// VJP of eval-mode normalization: the moments are constants, so only the
/// affine part differentiates.
pub(crate) fn bn_eval_backward(
    d_out: &[f64],
    gamma: &Tensor,
    saved: &BnSaved,
    channels: usize,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let n = d_out.len() / channels;
    let mut d_x = vec![0.0; d_out.len()];
    let mut d_gamma = vec![0.0; channels];
    let mut d_beta = vec![0.0; channels];
    for ci in 0..channels {
        let dy = &d_out[ci * n..][..n];
        let xh = &saved.xhat[ci * n..][..n];
        d_beta[ci] = dy.iter().sum();
        d_gamma[ci] = dy.iter().zip(xh).map(|(a, b)| a * b).sum();
        let scale = gamma.data()[ci] * saved.inv_std[ci];
        for i in 0..n {
            d_x[ci * n + i] = scale * dy[i];
        }
    }
    (d_x, d_gamma, d_beta)
}
