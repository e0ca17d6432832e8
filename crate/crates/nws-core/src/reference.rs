//! Independent reference implementations used as test oracles and by the
//! `verify` command. These deliberately share no code with the production
//! paths they check.

use crate::tensor::Float;

/// Naive sextuple-loop 2-D convolution. NCHW input, [out, in, k, k] kernels.
/// Returns (output, out_h, out_w).
#[allow(clippy::too_many_arguments)]
pub fn naive_conv2d(
    input: &[Float],
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    kernels: &[Float],
    o: usize,
    k: usize,
    stride: usize,
    padding: usize,
) -> (Vec<Float>, usize, usize) {
    let out_h = (h + 2 * padding - k) / stride + 1;
    let out_w = (w + 2 * padding - k) / stride + 1;
    let mut out = vec![0.0; n * o * out_h * out_w];
    for ni in 0..n {
        for oi in 0..o {
            for oh in 0..out_h {
                for ow in 0..out_w {
                    let mut acc: Float = 0.0;
                    for ci in 0..c {
                        for ky in 0..k {
                            for kx in 0..k {
                                let iy = (oh * stride + ky) as isize - padding as isize;
                                let ix = (ow * stride + kx) as isize - padding as isize;
                                if iy < 0 || iy >= h as isize || ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                let iv = input
                                    [((ni * c + ci) * h + iy as usize) * w + ix as usize];
                                let kv = kernels[((oi * c + ci) * k + ky) * k + kx];
                                acc += iv * kv;
                            }
                        }
                    }
                    out[((ni * o + oi) * out_h + oh) * out_w + ow] = acc;
                }
            }
        }
    }
    (out, out_h, out_w)
}

/// Exhaustive nearest-neighbor scan over flattened pool entries with the
/// lowest-index tie-break. Distances are squared L2.
pub fn exhaustive_nearest(entries: &[Float], entry_len: usize, query: &[Float]) -> (usize, Float) {
    assert_eq!(query.len(), entry_len);
    let count = entries.len() / entry_len;
    assert!(count >= 1);
    let mut best_idx = 0usize;
    let mut best_dist = Float::INFINITY;
    for i in 0..count {
        let e = &entries[i * entry_len..(i + 1) * entry_len];
        let mut d: Float = 0.0;
        for j in 0..entry_len {
            let diff = query[j] - e[j];
            d += diff * diff;
        }
        if d < best_dist {
            best_dist = d;
            best_idx = i;
        }
    }
    (best_idx, best_dist)
}

/// Central finite differences of `f` with respect to `params`, step `h`.
pub fn finite_difference<F>(params: &mut [Float], h: Float, mut f: F) -> Vec<Float>
where
    F: FnMut(&[Float]) -> Float,
{
    let mut grad = vec![0.0; params.len()];
    for i in 0..params.len() {
        let orig = params[i];
        params[i] = orig + h;
        let fp = f(params);
        params[i] = orig - h;
        let fm = f(params);
        params[i] = orig;
        grad[i] = (fp - fm) / (2.0 * h);
    }
    grad
}

/// max_i |a_i - b_i| / max(1, |a_i|, |b_i|)
pub fn max_relative_error(a: &[Float], b: &[Float]) -> Float {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs() / (1.0 as Float).max(x.abs()).max(y.abs()))
        .fold(0.0, Float::max)
}
