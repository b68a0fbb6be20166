//! Raw forward/backward math on flat row-major buffers.
//!
//! Nothing here owns state or touches RNGs; the graph layer wires these into
//! the tape. Convolution parallelizes over independent output planes, so the
//! floating-point reduction order per element is fixed regardless of thread
//! count.

use super::Scalar;
use rayon::prelude::*;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dCfg {
    pub stride: usize,
    pub padding: usize,
    pub groups: usize,
}

impl Default for Conv2dCfg {
    fn default() -> Self {
        Conv2dCfg {
            stride: 1,
            padding: 0,
            groups: 1,
        }
    }
}

pub fn conv_out_dim(input: usize, padding: usize, kernel: usize, stride: usize) -> usize {
    (input + 2 * padding - kernel) / stride + 1
}

/// input: N×C×H×W, weight: OC×(C/g)×kH×kW, bias: len OC. Returns N×OC×OH×OW.
pub fn conv2d_forward<T: Scalar>(
    input: &[T],
    ishape: [usize; 4],
    weight: &[T],
    wshape: [usize; 4],
    bias: Option<&[T]>,
    cfg: Conv2dCfg,
) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let [oc, cg, kh, kw] = wshape;
    let g = cfg.groups;
    let (s, p) = (cfg.stride, cfg.padding);
    debug_assert_eq!(c / g, cg);
    debug_assert_eq!(oc % g, 0);
    let oh = conv_out_dim(h, p, kh, s);
    let ow = conv_out_dim(w, p, kw, s);
    let oc_per_g = oc / g;

    let mut out = vec![T::zero(); n * oc * oh * ow];
    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane, out_plane)| {
        let ni = plane / oc;
        let o = plane % oc;
        let group = o / oc_per_g;
        let ic0 = group * cg;
        let b = bias.map(|b| b[o]).unwrap_or_else(T::zero);
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = b;
                for ic in 0..cg {
                    let in_ch = &input[((ni * c + ic0 + ic) * h) * w..];
                    let w_ch = &weight[((o * cg + ic) * kh) * kw..];
                    for ky in 0..kh {
                        let iy = (y * s + ky) as isize - p as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kw {
                            let ix = (x * s + kx) as isize - p as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            acc += in_ch[iy as usize * w + ix as usize] * w_ch[ky * kw + kx];
                        }
                    }
                }
                out_plane[y * ow + x] = acc;
            }
        }
    });
    out
}

/// Gradients for conv2d. Returns (dinput, dweight, dbias-if-bias).
pub fn conv2d_backward<T: Scalar>(
    input: &[T],
    ishape: [usize; 4],
    weight: &[T],
    wshape: [usize; 4],
    has_bias: bool,
    cfg: Conv2dCfg,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let [n, c, h, w] = ishape;
    let [oc, cg, kh, kw] = wshape;
    let g = cfg.groups;
    let (s, p) = (cfg.stride, cfg.padding);
    let oh = conv_out_dim(h, p, kh, s);
    let ow = conv_out_dim(w, p, kw, s);
    let oc_per_g = oc / g;

    // dinput: each sample's slice is written by exactly one task.
    let mut dinput = vec![T::zero(); n * c * h * w];
    dinput.par_chunks_mut(c * h * w).enumerate().for_each(|(ni, din)| {
        for o in 0..oc {
            let group = o / oc_per_g;
            let ic0 = group * cg;
            let dout_plane = &dout[((ni * oc + o) * oh) * ow..][..oh * ow];
            for y in 0..oh {
                for x in 0..ow {
                    let go = dout_plane[y * ow + x];
                    if go == T::zero() {
                        continue;
                    }
                    for ic in 0..cg {
                        let w_ch = &weight[((o * cg + ic) * kh) * kw..];
                        for ky in 0..kh {
                            let iy = (y * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for kx in 0..kw {
                                let ix = (x * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                din[((ic0 + ic) * h + iy as usize) * w + ix as usize] +=
                                    go * w_ch[ky * kw + kx];
                            }
                        }
                    }
                }
            }
        }
    });

    // dweight: each output channel's filter is written by exactly one task.
    let mut dweight = vec![T::zero(); oc * cg * kh * kw];
    dweight.par_chunks_mut(cg * kh * kw).enumerate().for_each(|(o, dw)| {
        let group = o / oc_per_g;
        let ic0 = group * cg;
        for ni in 0..n {
            let dout_plane = &dout[((ni * oc + o) * oh) * ow..][..oh * ow];
            for ic in 0..cg {
                let in_ch = &input[((ni * c + ic0 + ic) * h) * w..][..h * w];
                for ky in 0..kh {
                    for kx in 0..kw {
                        let mut acc = T::zero();
                        for y in 0..oh {
                            let iy = (y * s + ky) as isize - p as isize;
                            if iy < 0 || iy >= h as isize {
                                continue;
                            }
                            for x in 0..ow {
                                let ix = (x * s + kx) as isize - p as isize;
                                if ix < 0 || ix >= w as isize {
                                    continue;
                                }
                                acc += dout_plane[y * ow + x]
                                    * in_ch[iy as usize * w + ix as usize];
                            }
                        }
                        dw[(ic * kh + ky) * kw + kx] += acc;
                    }
                }
            }
        }
    });

    let dbias = has_bias.then(|| {
        let mut db = vec![T::zero(); oc];
        for ni in 0..n {
            for o in 0..oc {
                let plane = &dout[((ni * oc + o) * oh) * ow..][..oh * ow];
                for &v in plane {
                    db[o] += v;
                }
            }
        }
        db
    });

    (dinput, dweight, dbias)
}

/// Per-channel batch statistics and normalized output (training mode).
/// Returns (out, batch_mean, batch_var_biased, xhat).
pub fn batch_norm_train_forward<T: Scalar>(
    input: &[T],
    ishape: [usize; 4],
    gamma: &[T],
    beta: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = ishape;
    let m = (n * h * w) as f64;
    let mut mean = vec![T::zero(); c];
    let mut var = vec![T::zero(); c];
    for ch in 0..c {
        let mut sum = T::zero();
        for ni in 0..n {
            let plane = &input[((ni * c + ch) * h) * w..][..h * w];
            for &v in plane {
                sum += v;
            }
        }
        let mu = sum / T::from_f64(m);
        let mut sq = T::zero();
        for ni in 0..n {
            let plane = &input[((ni * c + ch) * h) * w..][..h * w];
            for &v in plane {
                let d = v - mu;
                sq += d * d;
            }
        }
        mean[ch] = mu;
        var[ch] = sq / T::from_f64(m);
    }
    let mut out = vec![T::zero(); input.len()];
    let mut xhat = vec![T::zero(); input.len()];
    for ni in 0..n {
        for ch in 0..c {
            let inv_std = (var[ch] + eps).sqrt().recip();
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                let xh = (input[base + i] - mean[ch]) * inv_std;
                xhat[base + i] = xh;
                out[base + i] = gamma[ch] * xh + beta[ch];
            }
        }
    }
    (out, mean, var, xhat)
}

pub fn batch_norm_eval_forward<T: Scalar>(
    input: &[T],
    ishape: [usize; 4],
    gamma: &[T],
    beta: &[T],
    running_mean: &[T],
    running_var: &[T],
    eps: T,
) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let mut out = vec![T::zero(); input.len()];
    for ni in 0..n {
        for ch in 0..c {
            let inv_std = (running_var[ch] + eps).sqrt().recip();
            let scale = gamma[ch] * inv_std;
            let shift = beta[ch] - running_mean[ch] * scale;
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                out[base + i] = input[base + i] * scale + shift;
            }
        }
    }
    out
}

/// Training-mode backward through the batch statistics.
/// Returns (dinput, dgamma, dbeta).
pub fn batch_norm_train_backward<T: Scalar>(
    ishape: [usize; 4],
    gamma: &[T],
    var: &[T],
    xhat: &[T],
    eps: T,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let [n, c, h, w] = ishape;
    let m = T::from_f64((n * h * w) as f64);
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    let mut dinput = vec![T::zero(); xhat.len()];
    for ch in 0..c {
        let mut sum_dy = T::zero();
        let mut sum_dy_xhat = T::zero();
        for ni in 0..n {
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                let dy = dout[base + i];
                sum_dy += dy;
                sum_dy_xhat += dy * xhat[base + i];
            }
        }
        dgamma[ch] = sum_dy_xhat;
        dbeta[ch] = sum_dy;
        let inv_std = (var[ch] + eps).sqrt().recip();
        let k = gamma[ch] * inv_std / m;
        for ni in 0..n {
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                dinput[base + i] =
                    k * (m * dout[base + i] - sum_dy - xhat[base + i] * sum_dy_xhat);
            }
        }
    }
    (dinput, dgamma, dbeta)
}

pub fn batch_norm_eval_backward<T: Scalar>(
    ishape: [usize; 4],
    gamma: &[T],
    running_var: &[T],
    eps: T,
    dout: &[T],
) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let mut dinput = vec![T::zero(); dout.len()];
    for ni in 0..n {
        for ch in 0..c {
            let scale = gamma[ch] * (running_var[ch] + eps).sqrt().recip();
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                dinput[base + i] = dout[base + i] * scale;
            }
        }
    }
    dinput
}

/// out[n][c] = mean over the H×W plane.
pub fn global_avg_pool_forward<T: Scalar>(input: &[T], ishape: [usize; 4]) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut out = vec![T::zero(); n * c];
    for ni in 0..n {
        for ch in 0..c {
            let plane = &input[((ni * c + ch) * h) * w..][..h * w];
            let mut s = T::zero();
            for &v in plane {
                s += v;
            }
            out[ni * c + ch] = s * inv;
        }
    }
    out
}

pub fn global_avg_pool_backward<T: Scalar>(ishape: [usize; 4], dout: &[T]) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let inv = T::from_f64(1.0 / (h * w) as f64);
    let mut dinput = vec![T::zero(); n * c * h * w];
    for ni in 0..n {
        for ch in 0..c {
            let g = dout[ni * c + ch] * inv;
            let base = ((ni * c + ch) * h) * w;
            for i in 0..h * w {
                dinput[base + i] = g;
            }
        }
    }
    dinput
}

/// Per-pixel mean and max over channels. Output channel 0 is the mean map,
/// channel 1 the max map. Max ties resolve to the lowest channel index.
/// Returns (out N×2×H×W, argmax channel per pixel).
pub fn channel_pool_forward<T: Scalar>(input: &[T], ishape: [usize; 4]) -> (Vec<T>, Vec<u32>) {
    let [n, c, h, w] = ishape;
    let hw = h * w;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut out = vec![T::zero(); n * 2 * hw];
    let mut argmax = vec![0u32; n * hw];
    for ni in 0..n {
        for i in 0..hw {
            let mut sum = T::zero();
            let mut best = input[(ni * c * h) * w + i];
            let mut best_ch = 0u32;
            for ch in 0..c {
                let v = input[((ni * c + ch) * h) * w + i];
                sum += v;
                if v > best {
                    best = v;
                    best_ch = ch as u32;
                }
            }
            out[(ni * 2) * hw + i] = sum * inv_c;
            out[(ni * 2 + 1) * hw + i] = best;
            argmax[ni * hw + i] = best_ch;
        }
    }
    (out, argmax)
}

pub fn channel_pool_backward<T: Scalar>(
    ishape: [usize; 4],
    argmax: &[u32],
    dout: &[T],
) -> Vec<T> {
    let [n, c, h, w] = ishape;
    let hw = h * w;
    let inv_c = T::from_f64(1.0 / c as f64);
    let mut dinput = vec![T::zero(); n * c * hw];
    for ni in 0..n {
        for i in 0..hw {
            let davg = dout[(ni * 2) * hw + i] * inv_c;
            for ch in 0..c {
                dinput[((ni * c + ch) * h) * w + i] += davg;
            }
            let mch = argmax[ni * hw + i] as usize;
            dinput[((ni * c + mch) * h) * w + i] += dout[(ni * 2 + 1) * hw + i];
        }
    }
    dinput
}

/// out = input·weightᵀ + bias. input: N×D, weight: K×D, bias: len K.
pub fn linear_forward<T: Scalar>(
    input: &[T],
    n: usize,
    d: usize,
    weight: &[T],
    k: usize,
    bias: Option<&[T]>,
) -> Vec<T> {
    let mut out = vec![T::zero(); n * k];
    out.par_chunks_mut(k).enumerate().for_each(|(ni, row)| {
        let x = &input[ni * d..][..d];
        for (ki, o) in row.iter_mut().enumerate() {
            let wrow = &weight[ki * d..][..d];
            let mut acc = bias.map(|b| b[ki]).unwrap_or_else(T::zero);
            for i in 0..d {
                acc += x[i] * wrow[i];
            }
            *o = acc;
        }
    });
    out
}

pub fn linear_backward<T: Scalar>(
    input: &[T],
    n: usize,
    d: usize,
    weight: &[T],
    k: usize,
    has_bias: bool,
    dout: &[T],
) -> (Vec<T>, Vec<T>, Option<Vec<T>>) {
    let mut dinput = vec![T::zero(); n * d];
    for ni in 0..n {
        for ki in 0..k {
            let g = dout[ni * k + ki];
            if g == T::zero() {
                continue;
            }
            let wrow = &weight[ki * d..][..d];
            let dx = &mut dinput[ni * d..][..d];
            for i in 0..d {
                dx[i] += g * wrow[i];
            }
        }
    }
    let mut dweight = vec![T::zero(); k * d];
    for ni in 0..n {
        let x = &input[ni * d..][..d];
        for ki in 0..k {
            let g = dout[ni * k + ki];
            if g == T::zero() {
                continue;
            }
            let dw = &mut dweight[ki * d..][..d];
            for i in 0..d {
                dw[i] += g * x[i];
            }
        }
    }
    let dbias = has_bias.then(|| {
        let mut db = vec![T::zero(); k];
        for ni in 0..n {
            for ki in 0..k {
                db[ki] += dout[ni * k + ki];
            }
        }
        db
    });
    (dinput, dweight, dbias)
}

/// Max pooling over H×W windows; ties go to the first cell in scan order.
/// Returns (out, argmax flat input index per output element).
pub fn max_pool2d_forward<T: Scalar>(
    input: &[T],
    ishape: [usize; 4],
    kernel: usize,
    stride: usize,
    padding: usize,
) -> (Vec<T>, Vec<u32>, [usize; 4]) {
    let [n, c, h, w] = ishape;
    let oh = conv_out_dim(h, padding, kernel, stride);
    let ow = conv_out_dim(w, padding, kernel, stride);
    let mut out = vec![T::zero(); n * c * oh * ow];
    let mut argmax = vec![u32::MAX; n * c * oh * ow];
    for ni in 0..n {
        for ch in 0..c {
            let in_base = ((ni * c + ch) * h) * w;
            let out_base = ((ni * c + ch) * oh) * ow;
            for y in 0..oh {
                for x in 0..ow {
                    let mut best = T::neg_infinity();
                    let mut best_idx = u32::MAX;
                    for ky in 0..kernel {
                        let iy = (y * stride + ky) as isize - padding as isize;
                        if iy < 0 || iy >= h as isize {
                            continue;
                        }
                        for kx in 0..kernel {
                            let ix = (x * stride + kx) as isize - padding as isize;
                            if ix < 0 || ix >= w as isize {
                                continue;
                            }
                            let idx = in_base + iy as usize * w + ix as usize;
                            if input[idx] > best {
                                best = input[idx];
                                best_idx = idx as u32;
                            }
                        }
                    }
                    let o = out_base + y * ow + x;
                    if best_idx == u32::MAX {
                        out[o] = T::zero(); // window entirely in padding
                    } else {
                        out[o] = best;
                        argmax[o] = best_idx;
                    }
                }
            }
        }
    }
    (out, argmax, [n, c, oh, ow])
}

pub fn max_pool2d_backward<T: Scalar>(
    input_len: usize,
    argmax: &[u32],
    dout: &[T],
) -> Vec<T> {
    let mut dinput = vec![T::zero(); input_len];
    for (i, &idx) in argmax.iter().enumerate() {
        if idx != u32::MAX {
            dinput[idx as usize] += dout[i];
        }
    }
    dinput
}

/// Mean negative log softmax probability of the targets, with the
/// max-subtraction trick. Returns (loss, probs N×K).
pub fn softmax_cross_entropy_forward<T: Scalar>(
    logits: &[T],
    n: usize,
    k: usize,
    targets: &[usize],
) -> (T, Vec<T>) {
    let mut probs = vec![T::zero(); n * k];
    let mut loss = T::zero();
    for ni in 0..n {
        let row = &logits[ni * k..][..k];
        let mut mx = row[0];
        for &v in &row[1..] {
            if v > mx {
                mx = v;
            }
        }
        let mut sum = T::zero();
        for (i, &v) in row.iter().enumerate() {
            let e = (v - mx).exp();
            probs[ni * k + i] = e;
            sum += e;
        }
        let log_sum = sum.ln();
        for i in 0..k {
            probs[ni * k + i] /= sum;
        }
        loss += log_sum - (row[targets[ni]] - mx);
    }
    (loss / T::from_f64(n as f64), probs)
}

/// dlogits = upstream · (softmax − onehot)/N.
pub fn softmax_cross_entropy_backward<T: Scalar>(
    probs: &[T],
    n: usize,
    k: usize,
    targets: &[usize],
    upstream: T,
) -> Vec<T> {
    let inv_n = T::from_f64(1.0 / n as f64);
    let mut d = vec![T::zero(); n * k];
    for ni in 0..n {
        for i in 0..k {
            let mut g = probs[ni * k + i];
            if i == targets[ni] {
                g -= T::one();
            }
            d[ni * k + i] = upstream * g * inv_n;
        }
    }
    d
}
