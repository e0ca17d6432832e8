//! Differentiable operations over [`Tensor`]: exactly what the NWS networks
//! need, nothing more.

use crate::error::{NwsError, Result};
use crate::tensor::{Float, Tensor};

pub fn add(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "add: shape mismatch");
    let data: Vec<Float> = a
        .data()
        .iter()
        .zip(b.data().iter())
        .map(|(x, y)| x + y)
        .collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |up| {
            if pa.requires_grad() {
                pa.accumulate_grad(up);
            }
            if pb.requires_grad() {
                pb.accumulate_grad(up);
            }
        }),
    )
}

pub fn mul(a: &Tensor, b: &Tensor) -> Tensor {
    assert_eq!(a.shape(), b.shape(), "mul: shape mismatch");
    let (av, bv) = (a.data(), b.data());
    let data: Vec<Float> = av.iter().zip(bv.iter()).map(|(x, y)| x * y).collect();
    let (pa, pb) = (a.clone(), b.clone());
    Tensor::from_op(
        a.shape(),
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |up| {
            if pa.requires_grad() {
                let d: Vec<Float> = up.iter().zip(bv.iter()).map(|(u, y)| u * y).collect();
                pa.accumulate_grad(&d);
            }
            if pb.requires_grad() {
                let d: Vec<Float> = up.iter().zip(av.iter()).map(|(u, x)| u * x).collect();
                pb.accumulate_grad(&d);
            }
        }),
    )
}

pub fn scale(a: &Tensor, c: Float) -> Tensor {
    let data: Vec<Float> = a.data().iter().map(|x| x * c).collect();
    let pa = a.clone();
    Tensor::from_op(
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |up| {
            let d: Vec<Float> = up.iter().map(|u| u * c).collect();
            pa.accumulate_grad(&d);
        }),
    )
}

pub fn sum(a: &Tensor) -> Tensor {
    let total: Float = a.data().iter().sum();
    let n = a.numel();
    let pa = a.clone();
    Tensor::from_op(
        vec![],
        vec![total],
        vec![a.clone()],
        Box::new(move |up| {
            pa.accumulate_grad(&vec![up[0]; n]);
        }),
    )
}

pub fn relu(a: &Tensor) -> Tensor {
    let av = a.data();
    let data: Vec<Float> = av.iter().map(|x| x.max(0.0)).collect();
    let pa = a.clone();
    Tensor::from_op(
        a.shape(),
        data,
        vec![a.clone()],
        Box::new(move |up| {
            let d: Vec<Float> = up
                .iter()
                .zip(av.iter())
                .map(|(u, x)| if *x > 0.0 { *u } else { 0.0 })
                .collect();
            pa.accumulate_grad(&d);
        }),
    )
}

/// Shape change without touching values; gradient passes through unchanged.
pub fn reshape(a: &Tensor, shape: Vec<usize>) -> Result<Tensor> {
    let numel: usize = shape.iter().product();
    if numel != a.numel() {
        return Err(NwsError::dim(
            "reshape",
            format!("{} elements", a.numel()),
            format!("shape {:?} ({} elements)", shape, numel),
        ));
    }
    let pa = a.clone();
    Ok(Tensor::from_op(
        shape,
        a.data(),
        vec![a.clone()],
        Box::new(move |up| pa.accumulate_grad(up)),
    ))
}

fn conv_out_dim(input: usize, k: usize, stride: usize, padding: usize) -> usize {
    (input + 2 * padding - k) / stride + 1
}

/// im2col: [N, C, H, W] -> rows of length C*k*k, one row per (n, oh, ow).
fn im2col(
    input: &[Float],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
) -> Vec<Float> {
    let ck = c * k * k;
    let mut cols = vec![0.0; n * out_h * out_w * ck];
    for ni in 0..n {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let row = ((ni * out_h + oh) * out_w + ow) * ck;
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oh * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_base = ((ni * c + ci) * h + iy as usize) * w;
                        let col_base = row + (ci * k + ky) * k;
                        for kx in 0..k {
                            let ix = (ow * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            cols[col_base + kx] = input[in_base + ix as usize];
                        }
                    }
                }
            }
        }
    }
    cols
}

fn col2im_accumulate(
    grad_cols: &[Float],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    k: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
    grad_input: &mut [Float],
) {
    let ck = c * k * k;
    for ni in 0..n {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let row = ((ni * out_h + oh) * out_w + ow) * ck;
                for ci in 0..c {
                    for ky in 0..k {
                        let iy = (oh * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        let in_base = ((ni * c + ci) * h + iy as usize) * w;
                        let col_base = row + (ci * k + ky) * k;
                        for kx in 0..k {
                            let ix = (ow * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            grad_input[in_base + ix as usize] += grad_cols[col_base + kx];
                        }
                    }
                }
            }
        }
    }
}

/// 2-D convolution, NCHW input, [out, in, k, k] kernels, no bias.
/// Gradient flows to both input and kernels.
pub fn conv2d(input: &Tensor, kernels: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let ishape = input.shape();
    let kshape = kernels.shape();
    if ishape.len() != 4 {
        return Err(NwsError::dim("conv2d input", "4-d NCHW", format!("{:?}", ishape)));
    }
    if kshape.len() != 4 || kshape[2] != kshape[3] {
        return Err(NwsError::dim(
            "conv2d kernels",
            "[out, in, k, k]",
            format!("{:?}", kshape),
        ));
    }
    if stride < 1 {
        return Err(NwsError::InvalidInput("conv2d: stride must be >= 1".into()));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    let (o, kc, k) = (kshape[0], kshape[1], kshape[2]);
    if c != kc {
        return Err(NwsError::dim(
            "conv2d channels",
            format!("input channels == kernel in-channels ({})", kc),
            format!("{}", c),
        ));
    }
    if h + 2 * padding < k || w + 2 * padding < k {
        return Err(NwsError::dim(
            "conv2d spatial",
            format!("padded input >= kernel size {}", k),
            format!("{}x{} with padding {}", h, w, padding),
        ));
    }
    let out_h = conv_out_dim(h, k, stride, padding);
    let out_w = conv_out_dim(w, k, stride, padding);
    let ck = c * k * k;
    let rows = n * out_h * out_w;

    let idata = input.data();
    let kdata = kernels.data();
    let cols = im2col(&idata, n, c, h, w, k, stride, padding, out_h, out_w);

    // out[n][o][oh][ow] = cols[row] . kernels[o]
    let mut out = vec![0.0; n * o * out_h * out_w];
    for ni in 0..n {
        for oh in 0..out_h {
            for ow in 0..out_w {
                let row = ((ni * out_h + oh) * out_w + ow) * ck;
                let col = &cols[row..row + ck];
                for oi in 0..o {
                    let ker = &kdata[oi * ck..(oi + 1) * ck];
                    let mut acc = 0.0;
                    for i in 0..ck {
                        acc += col[i] * ker[i];
                    }
                    out[((ni * o + oi) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }

    let (pi, pk) = (input.clone(), kernels.clone());
    Ok(Tensor::from_op(
        vec![n, o, out_h, out_w],
        out,
        vec![input.clone(), kernels.clone()],
        Box::new(move |up| {
            // Row-major view of the upstream gradient: [rows, o].
            let mut up_rm = vec![0.0; rows * o];
            for ni in 0..n {
                for oi in 0..o {
                    for oh in 0..out_h {
                        for ow in 0..out_w {
                            let row = (ni * out_h + oh) * out_w + ow;
                            up_rm[row * o + oi] = up[((ni * o + oi) * out_h + oh) * out_w + ow];
                        }
                    }
                }
            }
            if pk.requires_grad() {
                let mut gk = vec![0.0; o * ck];
                for row in 0..rows {
                    let col = &cols[row * ck..(row + 1) * ck];
                    for oi in 0..o {
                        let g = up_rm[row * o + oi];
                        if g == 0.0 {
                            continue;
                        }
                        let dst = &mut gk[oi * ck..(oi + 1) * ck];
                        for i in 0..ck {
                            dst[i] += g * col[i];
                        }
                    }
                }
                pk.accumulate_grad(&gk);
            }
            if pi.requires_grad() {
                let mut grad_cols = vec![0.0; rows * ck];
                for row in 0..rows {
                    let dst = &mut grad_cols[row * ck..(row + 1) * ck];
                    for oi in 0..o {
                        let g = up_rm[row * o + oi];
                        if g == 0.0 {
                            continue;
                        }
                        let ker = &kdata[oi * ck..(oi + 1) * ck];
                        for i in 0..ck {
                            dst[i] += g * ker[i];
                        }
                    }
                }
                let mut gi = vec![0.0; n * c * h * w];
                col2im_accumulate(
                    &grad_cols, n, c, h, w, k, stride, padding, out_h, out_w, &mut gi,
                );
                pi.accumulate_grad(&gi);
            }
        }),
    ))
}

/// Average pooling with a square window; `kernel == H == W` gives global
/// average pooling.
pub fn avgpool2d(input: &Tensor, kernel: usize, stride: usize) -> Result<Tensor> {
    let ishape = input.shape();
    if ishape.len() != 4 {
        return Err(NwsError::dim("avgpool2d input", "4-d NCHW", format!("{:?}", ishape)));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if kernel == 0 || kernel > h || kernel > w {
        return Err(NwsError::InvalidInput(format!(
            "avgpool2d: kernel {} invalid for {}x{} input",
            kernel, h, w
        )));
    }
    let out_h = (h - kernel) / stride + 1;
    let out_w = (w - kernel) / stride + 1;
    let idata = input.data();
    let inv = 1.0 / (kernel * kernel) as Float;
    let mut out = vec![0.0; n * c * out_h * out_w];
    for ni in 0..n {
        for ci in 0..c {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc = 0.0;
                    for ky in 0..kernel {
                        for kx in 0..kernel {
                            acc += idata[((ni * c + ci) * h + oh * stride + ky) * w
                                + ow * stride
                                + kx];
                        }
                    }
                    out[((ni * c + ci) * out_h + oh) * out_w + ow] = acc * inv;
                }
            }
        }
    }
    let pi = input.clone();
    Ok(Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![input.clone()],
        Box::new(move |up| {
            let mut gi = vec![0.0; n * c * h * w];
            for ni in 0..n {
                for ci in 0..c {
                    for oh in 0..out_h {
                        for ow in 0..out_w {
                            let g = up[((ni * c + ci) * out_h + oh) * out_w + ow] * inv;
                            for ky in 0..kernel {
                                for kx in 0..kernel {
                                    gi[((ni * c + ci) * h + oh * stride + ky) * w
                                        + ow * stride
                                        + kx] += g;
                                }
                            }
                        }
                    }
                }
            }
            pi.accumulate_grad(&gi);
        }),
    ))
}

/// Per-channel batch normalization state: learnable scale/shift plus running
/// statistics tracked with momentum. Running variance is the biased batch
/// variance.
pub struct BatchNormState {
    pub channels: usize,
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<Float>,
    pub running_var: Vec<Float>,
    pub momentum: Float,
    pub epsilon: Float,
}

impl BatchNormState {
    pub fn new(channels: usize, momentum: Float, epsilon: Float) -> BatchNormState {
        BatchNormState {
            channels,
            gamma: Tensor::new(vec![channels], vec![1.0; channels], true).unwrap(),
            beta: Tensor::new(vec![channels], vec![0.0; channels], true).unwrap(),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
            momentum,
            epsilon,
        }
    }
}

/// Batch normalization over NCHW input. Training mode normalizes by batch
/// statistics and updates running statistics; eval mode uses running
/// statistics. Gradients flow to input, gamma, and beta.
pub fn batchnorm(input: &Tensor, state: &mut BatchNormState, training: bool) -> Result<Tensor> {
    let ishape = input.shape();
    if ishape.len() != 4 {
        return Err(NwsError::dim("batchnorm input", "4-d NCHW", format!("{:?}", ishape)));
    }
    let (n, c, h, w) = (ishape[0], ishape[1], ishape[2], ishape[3]);
    if c != state.channels {
        return Err(NwsError::dim(
            "batchnorm channels",
            format!("{}", state.channels),
            format!("{}", c),
        ));
    }
    let m = n * h * w;
    if training && m == 0 {
        return Err(NwsError::InvalidInput(
            "batchnorm: zero-size batch in training mode".into(),
        ));
    }
    let idata = input.data();
    let gval = state.gamma.data();
    let bval = state.beta.data();

    let (mean, var) = if training {
        let mut mean = vec![0.0; c];
        let mut var = vec![0.0; c];
        for ci in 0..c {
            let mut acc = 0.0;
            for ni in 0..n {
                let base = ((ni * c + ci) * h) * w;
                for i in 0..h * w {
                    acc += idata[base + i];
                }
            }
            mean[ci] = acc / m as Float;
            let mut vacc = 0.0;
            for ni in 0..n {
                let base = ((ni * c + ci) * h) * w;
                for i in 0..h * w {
                    let d = idata[base + i] - mean[ci];
                    vacc += d * d;
                }
            }
            var[ci] = vacc / m as Float;
        }
        let mom = state.momentum;
        for ci in 0..c {
            state.running_mean[ci] = (1.0 - mom) * state.running_mean[ci] + mom * mean[ci];
            state.running_var[ci] = (1.0 - mom) * state.running_var[ci] + mom * var[ci];
        }
        (mean, var)
    } else {
        (state.running_mean.clone(), state.running_var.clone())
    };

    let inv_std: Vec<Float> = var.iter().map(|v| 1.0 / (v + state.epsilon).sqrt()).collect();
    let mut x_hat = vec![0.0; idata.len()];
    let mut out = vec![0.0; idata.len()];
    for ni in 0..n {
        for ci in 0..c {
            let base = ((ni * c + ci) * h) * w;
            for i in 0..h * w {
                let xh = (idata[base + i] - mean[ci]) * inv_std[ci];
                x_hat[base + i] = xh;
                out[base + i] = gval[ci] * xh + bval[ci];
            }
        }
    }

    let (pi, pg, pb) = (input.clone(), state.gamma.clone(), state.beta.clone());
    let parents = vec![input.clone(), state.gamma.clone(), state.beta.clone()];
    Ok(Tensor::from_op(
        ishape,
        out,
        parents,
        Box::new(move |up| {
            let mut dgamma = vec![0.0; c];
            let mut dbeta = vec![0.0; c];
            for ni in 0..n {
                for ci in 0..c {
                    let base = ((ni * c + ci) * h) * w;
                    for i in 0..h * w {
                        dgamma[ci] += up[base + i] * x_hat[base + i];
                        dbeta[ci] += up[base + i];
                    }
                }
            }
            if pg.requires_grad() {
                pg.accumulate_grad(&dgamma);
            }
            if pb.requires_grad() {
                pb.accumulate_grad(&dbeta);
            }
            if pi.requires_grad() {
                let mut gi = vec![0.0; up.len()];
                if training {
                    let inv_m = 1.0 / m as Float;
                    for ci in 0..c {
                        let mean_dy = dbeta[ci] * inv_m;
                        let mean_dy_xhat = dgamma[ci] * inv_m;
                        let scale = gval[ci] * inv_std[ci];
                        for ni in 0..n {
                            let base = ((ni * c + ci) * h) * w;
                            for i in 0..h * w {
                                gi[base + i] = scale
                                    * (up[base + i] - mean_dy - x_hat[base + i] * mean_dy_xhat);
                            }
                        }
                    }
                } else {
                    for ci in 0..c {
                        let scale = gval[ci] * inv_std[ci];
                        for ni in 0..n {
                            let base = ((ni * c + ci) * h) * w;
                            for i in 0..h * w {
                                gi[base + i] = scale * up[base + i];
                            }
                        }
                    }
                }
                pi.accumulate_grad(&gi);
            }
        }),
    ))
}

/// Mean softmax cross-entropy over the batch. Gradient at the logits is
/// (softmax - one-hot) / N.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 {
        return Err(NwsError::dim("softmax_cross_entropy", "[N, V] logits", format!("{:?}", shape)));
    }
    let (n, v) = (shape[0], shape[1]);
    if labels.len() != n {
        return Err(NwsError::dim(
            "softmax_cross_entropy labels",
            format!("{}", n),
            format!("{}", labels.len()),
        ));
    }
    for (i, &y) in labels.iter().enumerate() {
        if y >= v {
            return Err(NwsError::InvalidInput(format!(
                "label {} at position {} out of range [0, {})",
                y, i, v
            )));
        }
    }
    let ldata = logits.data();
    let mut probs = vec![0.0; n * v];
    let mut loss = 0.0;
    for i in 0..n {
        let row = &ldata[i * v..(i + 1) * v];
        let max = row.iter().cloned().fold(Float::NEG_INFINITY, Float::max);
        let mut denom = 0.0;
        for j in 0..v {
            let e = (row[j] - max).exp();
            probs[i * v + j] = e;
            denom += e;
        }
        for j in 0..v {
            probs[i * v + j] /= denom;
        }
        loss -= (probs[i * v + labels[i]]).ln();
    }
    loss /= n as Float;

    let pl = logits.clone();
    let labels = labels.to_vec();
    Ok(Tensor::from_op(
        vec![],
        vec![loss],
        vec![logits.clone()],
        Box::new(move |up| {
            let inv_n = up[0] / n as Float;
            let mut g = vec![0.0; n * v];
            for i in 0..n {
                for j in 0..v {
                    let delta = if labels[i] == j { 1.0 } else { 0.0 };
                    g[i * v + j] = (probs[i * v + j] - delta) * inv_n;
                }
            }
            pl.accumulate_grad(&g);
        }),
    ))
}
