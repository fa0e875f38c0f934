//! Convolution kernels and their gradients.
//!
//! The 2-d path lowers to an im2col buffer and accumulation-ordered matrix
//! products so the hot inner loops are contiguous and auto-vectorize; the 3-d
//! path is a direct nested sum (it only runs on the volumetric first encoder
//! stage and in tests). Transposed convolution shares the same col2im
//! scatter, which makes it the exact adjoint of the forward convolution by
//! construction.

use super::{ConvSpec, Tensor, TensorError};

/// Per-axis 2-d geometry, resolved once per call.
#[derive(Clone, Copy)]
struct Geom2 {
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    ph: usize,
    pw: usize,
}

impl Geom2 {
    fn of(spec: &ConvSpec) -> Self {
        Geom2 {
            kh: spec.kernel[0],
            kw: spec.kernel[1],
            sh: spec.stride[0],
            sw: spec.stride[1],
            ph: spec.padding[0],
            pw: spec.padding[1],
        }
    }
}

/// Valid output range `[lo, hi)` so that `o * stride + k - pad` lands in
/// `[0, n)`.
fn valid_range(n: usize, o_len: usize, stride: usize, k: usize, pad: usize) -> (usize, usize) {
    let lo = if k >= pad {
        0
    } else {
        (pad - k + stride - 1) / stride
    };
    // largest o with o*stride + k - pad <= n - 1
    let hi = if n + pad > k {
        ((n + pad - k - 1) / stride + 1).min(o_len)
    } else {
        0
    };
    (lo.min(hi), hi)
}

/// col[(c,ky,kx)][oy*ow+ox] = x[c][oy*sh+ky-ph][ox*sw+kx-pw], zero outside.
fn im2col_2d(x: &[f64], c: usize, h: usize, w: usize, g: Geom2, oh: usize, ow: usize) -> Vec<f64> {
    let p = oh * ow;
    let mut col = vec![0.0; c * g.kh * g.kw * p];
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &mut col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                let (ox_lo, ox_hi) = valid_range(w, ow, g.sw, kx, g.pw);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let src = &x[ci * h * w + iy as usize * w..][..w];
                    let dst = &mut row[oy * ow..][..ow];
                    if g.sw == 1 {
                        let ix0 = ox_lo + kx - g.pw;
                        dst[ox_lo..ox_hi].copy_from_slice(&src[ix0..ix0 + (ox_hi - ox_lo)]);
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox] = src[ox * g.sw + kx - g.pw];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Adjoint of [`im2col_2d`]: scatter-add col rows back into an image buffer.
fn col2im_add_2d(
    col: &[f64],
    c: usize,
    h: usize,
    w: usize,
    g: Geom2,
    oh: usize,
    ow: usize,
    out: &mut [f64],
) {
    let p = oh * ow;
    for ci in 0..c {
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = &col[((ci * g.kh + ky) * g.kw + kx) * p..][..p];
                let (ox_lo, ox_hi) = valid_range(w, ow, g.sw, kx, g.pw);
                if ox_lo >= ox_hi {
                    continue;
                }
                for oy in 0..oh {
                    let iy = (oy * g.sh + ky) as isize - g.ph as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let dst = &mut out[ci * h * w + iy as usize * w..][..w];
                    let src = &row[oy * ow..][..ow];
                    if g.sw == 1 {
                        let ix0 = ox_lo + kx - g.pw;
                        for (d, s) in dst[ix0..ix0 + (ox_hi - ox_lo)]
                            .iter_mut()
                            .zip(&src[ox_lo..ox_hi])
                        {
                            *d += s;
                        }
                    } else {
                        for ox in ox_lo..ox_hi {
                            dst[ox * g.sw + kx - g.pw] += src[ox];
                        }
                    }
                }
            }
        }
    }
}

/// out(m x n) += a(m x k) . b(k x n), accumulation-ordered over k.
fn gemm_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let orow = &mut out[i * n..][..n];
        for (kk, &wv) in arow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let brow = &b[kk * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += wv * bv;
            }
        }
    }
}

/// out(m x k) += a(m x n) . b(k x n)^T — rows of both operands are contiguous.
fn gemm_abt_acc(a: &[f64], m: usize, n: usize, b: &[f64], k: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * n..][..n];
        for kk in 0..k {
            let brow = &b[kk * n..][..n];
            let dot: f64 = arow.iter().zip(brow).map(|(x, y)| x * y).sum();
            out[i * k + kk] += dot;
        }
    }
}

/// out(k x n) += a(m x k)^T . b(m x n).
fn gemm_atb_acc(a: &[f64], m: usize, k: usize, b: &[f64], n: usize, out: &mut [f64]) {
    for i in 0..m {
        let arow = &a[i * k..][..k];
        let brow = &b[i * n..][..n];
        for (kk, &wv) in arow.iter().enumerate() {
            if wv == 0.0 {
                continue;
            }
            let orow = &mut out[kk * n..][..n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += wv * bv;
            }
        }
    }
}

fn check_input(input: &Tensor, spec: &ConvSpec, context: &str) -> Result<(), TensorError> {
    spec.validate()?;
    let d = spec.dimensionality();
    if input.shape().len() != d + 1 {
        return Err(TensorError::ShapeMismatch {
            context: format!("{context}: input rank"),
            expected: vec![d + 1],
            actual: vec![input.shape().len()],
        });
    }
    if input.shape()[0] != spec.in_channels {
        return Err(TensorError::ChannelMismatch {
            context: format!("{context}: input channels"),
            expected: spec.in_channels,
            actual: input.shape()[0],
        });
    }
    Ok(())
}

fn check_weights(
    weights: &Tensor,
    bias: &Tensor,
    wshape: &[usize],
    out_channels: usize,
    context: &str,
) -> Result<(), TensorError> {
    if weights.shape() != wshape {
        return Err(TensorError::ShapeMismatch {
            context: format!("{context}: weights"),
            expected: wshape.to_vec(),
            actual: weights.shape().to_vec(),
        });
    }
    if bias.shape() != [out_channels] {
        return Err(TensorError::ShapeMismatch {
            context: format!("{context}: bias"),
            expected: vec![out_channels],
            actual: bias.shape().to_vec(),
        });
    }
    Ok(())
}

pub fn conv_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    check_input(input, spec, "conv_forward")?;
    check_weights(
        weights,
        bias,
        &spec.weight_shape(),
        spec.out_channels,
        "conv_forward",
    )?;
    match spec.dimensionality() {
        2 => Ok(conv2d_forward(input, spec, weights, bias)),
        _ => Ok(conv3d_forward(input, spec, weights, bias)?),
    }
}

pub fn conv_transpose_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    check_input(input, spec, "conv_transpose_forward")?;
    check_weights(
        weights,
        bias,
        &spec.transpose_weight_shape(),
        spec.out_channels,
        "conv_transpose_forward",
    )?;
    match spec.dimensionality() {
        2 => conv_transpose2d_forward(input, spec, weights, bias),
        _ => conv_transpose3d_forward(input, spec, weights, bias),
    }
}

fn conv2d_forward(input: &Tensor, spec: &ConvSpec, weights: &Tensor, bias: &Tensor) -> Tensor {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let out_sz = spec.out_size(&[h, w]).expect("validated");
    let (oh, ow) = (out_sz[0], out_sz[1]);
    let g = Geom2::of(spec);
    let col = im2col_2d(input.data(), spec.in_channels, h, w, g, oh, ow);
    let kdim = spec.in_channels * g.kh * g.kw;
    let p = oh * ow;
    let mut out = vec![0.0; spec.out_channels * p];
    for co in 0..spec.out_channels {
        out[co * p..][..p].fill(bias.data()[co]);
    }
    gemm_acc(weights.data(), spec.out_channels, kdim, &col, p, &mut out);
    Tensor::new(vec![spec.out_channels, oh, ow], out).expect("shape computed")
}

/// Gradients of the 2-d convolution. `d_input` is skipped when the input
/// does not need a gradient (the first layer of a network).
pub fn conv2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    d_out: &[f64],
    need_d_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let out_sz = spec.out_size(&[h, w]).expect("validated");
    let (oh, ow) = (out_sz[0], out_sz[1]);
    let g = Geom2::of(spec);
    let kdim = spec.in_channels * g.kh * g.kw;
    let p = oh * ow;

    let col = im2col_2d(input.data(), spec.in_channels, h, w, g, oh, ow);
    let mut d_w = vec![0.0; spec.out_channels * kdim];
    gemm_abt_acc(d_out, spec.out_channels, p, &col, kdim, &mut d_w);

    let mut d_b = vec![0.0; spec.out_channels];
    for co in 0..spec.out_channels {
        d_b[co] = d_out[co * p..][..p].iter().sum();
    }

    let d_input = if need_d_input {
        let mut d_col = vec![0.0; kdim * p];
        gemm_atb_acc(weights.data(), spec.out_channels, kdim, d_out, p, &mut d_col);
        let mut dx = vec![0.0; input.numel()];
        col2im_add_2d(&d_col, spec.in_channels, h, w, g, oh, ow, &mut dx);
        Some(dx)
    } else {
        None
    };
    (d_input, d_w, d_b)
}

fn conv_transpose2d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let out_sz = spec.transpose_out_size(&[h, w])?;
    let (bh, bw) = (out_sz[0], out_sz[1]);
    let g = Geom2::of(spec);
    let kdim = spec.out_channels * g.kh * g.kw;
    let p = h * w;

    // weights [C_in, C_out*kh*kw]^T . input [C_in, h*w] -> col [kdim, h*w]
    let mut col = vec![0.0; kdim * p];
    gemm_atb_acc(weights.data(), spec.in_channels, kdim, input.data(), p, &mut col);

    let mut out = vec![0.0; spec.out_channels * bh * bw];
    col2im_add_2d(&col, spec.out_channels, bh, bw, g, h, w, &mut out);
    for co in 0..spec.out_channels {
        let b = bias.data()[co];
        for v in &mut out[co * bh * bw..][..bh * bw] {
            *v += b;
        }
    }
    Tensor::new(vec![spec.out_channels, bh, bw], out)
}

/// Gradients of the 2-d transposed convolution.
pub fn conv_transpose2d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    d_out: &[f64],
    weights: &Tensor,
    need_d_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (h, w) = (input.shape()[1], input.shape()[2]);
    let out_sz = spec.transpose_out_size(&[h, w]).expect("validated");
    let (bh, bw) = (out_sz[0], out_sz[1]);
    let g = Geom2::of(spec);
    let kdim = spec.out_channels * g.kh * g.kw;
    let p = h * w;
    let big = bh * bw;

    let d_col = im2col_2d(d_out, spec.out_channels, bh, bw, g, h, w);

    let mut d_w = vec![0.0; spec.in_channels * kdim];
    gemm_abt_acc(input.data(), spec.in_channels, p, &d_col, kdim, &mut d_w);

    let mut d_b = vec![0.0; spec.out_channels];
    for co in 0..spec.out_channels {
        d_b[co] = d_out[co * big..][..big].iter().sum();
    }

    let d_input = if need_d_input {
        let mut dx = vec![0.0; input.numel()];
        gemm_acc(weights.data(), spec.in_channels, kdim, &d_col, p, &mut dx);
        Some(dx)
    } else {
        None
    };
    (d_input, d_w, d_b)
}

fn spatial3(shape: &[usize]) -> (usize, usize, usize) {
    (shape[1], shape[2], shape[3])
}

fn conv3d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    let (d, h, w) = spatial3(input.shape());
    let out_sz = spec.out_size(&[d, h, w])?;
    let (od, oh, ow) = (out_sz[0], out_sz[1], out_sz[2]);
    let (kd, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (sd, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let (pd, ph, pw) = (spec.padding[0], spec.padding[1], spec.padding[2]);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; spec.out_channels * od * oh * ow];
    for co in 0..spec.out_channels {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let mut acc = bias.data()[co];
                    for ci in 0..spec.in_channels {
                        for kz in 0..kd {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ci * d + iz as usize) * h + iy as usize) * w
                                        + ix as usize;
                                    let wi = (((co * spec.in_channels + ci) * kd + kz) * kh + ky)
                                        * kw
                                        + kx;
                                    acc += x[xi] * wt[wi];
                                }
                            }
                        }
                    }
                    out[((co * od + oz) * oh + oy) * ow + ox] = acc;
                }
            }
        }
    }
    Tensor::new(vec![spec.out_channels, od, oh, ow], out)
}

/// Gradients of the 3-d convolution (direct loops).
pub fn conv3d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    d_out: &[f64],
    need_d_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (d, h, w) = spatial3(input.shape());
    let out_sz = spec.out_size(&[d, h, w]).expect("validated");
    let (od, oh, ow) = (out_sz[0], out_sz[1], out_sz[2]);
    let (kd, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (sd, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let (pd, ph, pw) = (spec.padding[0], spec.padding[1], spec.padding[2]);
    let x = input.data();
    let wt = weights.data();
    let mut d_w = vec![0.0; weights.numel()];
    let mut d_b = vec![0.0; spec.out_channels];
    let mut d_x = vec![0.0; if need_d_input { input.numel() } else { 0 }];
    for co in 0..spec.out_channels {
        for oz in 0..od {
            for oy in 0..oh {
                for ox in 0..ow {
                    let go = d_out[((co * od + oz) * oh + oy) * ow + ox];
                    if go == 0.0 {
                        continue;
                    }
                    d_b[co] += go;
                    for ci in 0..spec.in_channels {
                        for kz in 0..kd {
                            let iz = (oz * sd + kz) as isize - pd as isize;
                            if iz < 0 || iz >= d as isize {
                                continue;
                            }
                            for ky in 0..kh {
                                let iy = (oy * sh + ky) as isize - ph as isize;
                                if iy < 0 || iy >= h as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ix = (ox * sw + kx) as isize - pw as isize;
                                    if ix < 0 || ix >= w as isize {
                                        continue;
                                    }
                                    let xi = ((ci * d + iz as usize) * h + iy as usize) * w
                                        + ix as usize;
                                    let wi = (((co * spec.in_channels + ci) * kd + kz) * kh + ky)
                                        * kw
                                        + kx;
                                    d_w[wi] += go * x[xi];
                                    if need_d_input {
                                        d_x[xi] += go * wt[wi];
                                    }
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    (if need_d_input { Some(d_x) } else { None }, d_w, d_b)
}

/// Gradients of the 3-d transposed convolution (direct loops).
pub fn conv_transpose3d_backward(
    input: &Tensor,
    spec: &ConvSpec,
    d_out: &[f64],
    weights: &Tensor,
    need_d_input: bool,
) -> (Option<Vec<f64>>, Vec<f64>, Vec<f64>) {
    let (d, h, w) = spatial3(input.shape());
    let out_sz = spec.transpose_out_size(&[d, h, w]).expect("validated");
    let (bd, bh, bw) = (out_sz[0], out_sz[1], out_sz[2]);
    let (kd, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (sd, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let (pd, ph, pw) = (spec.padding[0], spec.padding[1], spec.padding[2]);
    let x = input.data();
    let wt = weights.data();
    let mut d_w = vec![0.0; weights.numel()];
    let mut d_b = vec![0.0; spec.out_channels];
    let mut d_x = vec![0.0; if need_d_input { input.numel() } else { 0 }];
    for co in 0..spec.out_channels {
        d_b[co] = d_out[co * bd * bh * bw..][..bd * bh * bw].iter().sum();
    }
    for ci in 0..spec.in_channels {
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w {
                    let xi = ((ci * d + iz) * h + iy) * w + ix;
                    let xv = x[xi];
                    let mut gx = 0.0;
                    for co in 0..spec.out_channels {
                        for kz in 0..kd {
                            let oz = (iz * sd + kz) as isize - pd as isize;
                            if oz < 0 || oz >= bd as isize {
                                continue;
                            }
                            for ky in 0..kh {
                                let oy = (iy * sh + ky) as isize - ph as isize;
                                if oy < 0 || oy >= bh as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ox = (ix * sw + kx) as isize - pw as isize;
                                    if ox < 0 || ox >= bw as isize {
                                        continue;
                                    }
                                    let go = d_out[((co * bd + oz as usize) * bh + oy as usize)
                                        * bw
                                        + ox as usize];
                                    let wi = (((ci * spec.out_channels + co) * kd + kz) * kh + ky)
                                        * kw
                                        + kx;
                                    d_w[wi] += go * xv;
                                    gx += go * wt[wi];
                                }
                            }
                        }
                    }
                    if need_d_input {
                        d_x[xi] = gx;
                    }
                }
            }
        }
    }
    (if need_d_input { Some(d_x) } else { None }, d_w, d_b)
}

fn conv_transpose3d_forward(
    input: &Tensor,
    spec: &ConvSpec,
    weights: &Tensor,
    bias: &Tensor,
) -> Result<Tensor, TensorError> {
    let (d, h, w) = spatial3(input.shape());
    let out_sz = spec.transpose_out_size(&[d, h, w])?;
    let (bd, bh, bw) = (out_sz[0], out_sz[1], out_sz[2]);
    let (kd, kh, kw) = (spec.kernel[0], spec.kernel[1], spec.kernel[2]);
    let (sd, sh, sw) = (spec.stride[0], spec.stride[1], spec.stride[2]);
    let (pd, ph, pw) = (spec.padding[0], spec.padding[1], spec.padding[2]);
    let x = input.data();
    let wt = weights.data();
    let mut out = vec![0.0; spec.out_channels * bd * bh * bw];
    for co in 0..spec.out_channels {
        let b = bias.data()[co];
        for v in &mut out[co * bd * bh * bw..][..bd * bh * bw] {
            *v = b;
        }
    }
    // Stamp each input element's kernel into the output grid.
    for ci in 0..spec.in_channels {
        for iz in 0..d {
            for iy in 0..h {
                for ix in 0..w {
                    let v = x[((ci * d + iz) * h + iy) * w + ix];
                    if v == 0.0 {
                        continue;
                    }
                    for co in 0..spec.out_channels {
                        for kz in 0..kd {
                            let oz = (iz * sd + kz) as isize - pd as isize;
                            if oz < 0 || oz >= bd as isize {
                                continue;
                            }
                            for ky in 0..kh {
                                let oy = (iy * sh + ky) as isize - ph as isize;
                                if oy < 0 || oy >= bh as isize {
                                    continue;
                                }
                                for kx in 0..kw {
                                    let ox = (ix * sw + kx) as isize - pw as isize;
                                    if ox < 0 || ox >= bw as isize {
                                        continue;
                                    }
                                    let wi = (((ci * spec.out_channels + co) * kd + kz) * kh + ky)
                                        * kw
                                        + kx;
                                    out[((co * bd + oz as usize) * bh + oy as usize) * bw
                                        + ox as usize] += v * wt[wi];
                                }
                            }
                        }
                    }
                }
            }
        }
    }
    Tensor::new(vec![spec.out_channels, bd, bh, bw], out)
}
