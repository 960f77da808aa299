//! Raw forward and backward kernels on flat row-major buffers.

use crate::scalar::{axpy, dot, Scalar};

#[derive(Clone, Copy, Debug)]
pub(crate) struct ConvDims {
    pub frames: usize,
    pub c_in: usize,
    pub c_out: usize,
    pub width: usize,
    pub dilation: usize,
}

impl ConvDims {
    /// Input frame read by output frame `t` through tap `k`, if inside the sequence.
    #[inline]
    fn tap(&self, t: usize, k: usize) -> Option<usize> {
        let offset = (k as isize - (self.width / 2) as isize) * self.dilation as isize;
        let src = t as isize + offset;
        (src >= 0 && (src as usize) < self.frames).then_some(src as usize)
    }
}

/// Kernel `[c_out, c_in, width]` reordered to `[width, c_out, c_in]`.
fn tap_major<S: Scalar>(kernel: &[S], d: &ConvDims) -> Vec<S> {
    let mut out = vec![S::zero(); kernel.len()];
    for o in 0..d.c_out {
        for c in 0..d.c_in {
            for k in 0..d.width {
                out[(k * d.c_out + o) * d.c_in + c] = kernel[(o * d.c_in + c) * d.width + k];
            }
        }
    }
    out
}

pub(crate) fn conv1d_forward<S: Scalar>(
    input: &[S],
    kernel: &[S],
    bias: Option<&[S]>,
    d: &ConvDims,
) -> Vec<S> {
    let wt = tap_major(kernel, d);
    let mut out = vec![S::zero(); d.frames * d.c_out];
    for t in 0..d.frames {
        let row = &mut out[t * d.c_out..(t + 1) * d.c_out];
        if let Some(b) = bias {
            row.copy_from_slice(b);
        }
        for k in 0..d.width {
            let Some(src) = d.tap(t, k) else { continue };
            let x = &input[src * d.c_in..(src + 1) * d.c_in];
            let wk = &wt[k * d.c_out * d.c_in..(k + 1) * d.c_out * d.c_in];
            for (o, r) in row.iter_mut().enumerate() {
                *r += dot(&wk[o * d.c_in..(o + 1) * d.c_in], x);
            }
        }
    }
    out
}

pub(crate) struct ConvGrads<S> {
    pub input: Vec<S>,
    pub kernel: Vec<S>,
    pub bias: Vec<S>,
}

pub(crate) fn conv1d_backward<S: Scalar>(
    grad_out: &[S],
    input: &[S],
    kernel: &[S],
    d: &ConvDims,
) -> ConvGrads<S> {
    let wt = tap_major(kernel, d);
    let mut dx = vec![S::zero(); input.len()];
    let mut dwt = vec![S::zero(); kernel.len()];
    let mut db = vec![S::zero(); d.c_out];
    for t in 0..d.frames {
        let g = &grad_out[t * d.c_out..(t + 1) * d.c_out];
        for (b, &gv) in db.iter_mut().zip(g) {
            *b += gv;
        }
        for k in 0..d.width {
            let Some(src) = d.tap(t, k) else { continue };
            let x = &input[src * d.c_in..(src + 1) * d.c_in];
            let base = k * d.c_out * d.c_in;
            for (o, &gv) in g.iter().enumerate() {
                if gv == S::zero() {
                    continue;
                }
                let range = base + o * d.c_in..base + (o + 1) * d.c_in;
                axpy(
                    gv,
                    &wt[range.clone()],
                    &mut dx[src * d.c_in..(src + 1) * d.c_in],
                );
                axpy(gv, x, &mut dwt[range]);
            }
        }
    }
    let mut dw = vec![S::zero(); kernel.len()];
    for o in 0..d.c_out {
        for c in 0..d.c_in {
            for k in 0..d.width {
                dw[(o * d.c_in + c) * d.width + k] = dwt[(k * d.c_out + o) * d.c_in + c];
            }
        }
    }
    ConvGrads {
        input: dx,
        kernel: dw,
        bias: db,
    }
}

pub(crate) fn matmul<S: Scalar>(a: &[S], b: &[S], m: usize, n: usize, p: usize) -> Vec<S> {
    let mut out = vec![S::zero(); m * p];
    for i in 0..m {
        let row = &mut out[i * p..(i + 1) * p];
        for k in 0..n {
            let av = a[i * n + k];
            if av != S::zero() {
                axpy(av, &b[k * p..(k + 1) * p], row);
            }
        }
    }
    out
}

pub(crate) fn transpose<S: Scalar>(a: &[S], rows: usize, cols: usize) -> Vec<S> {
    let mut out = vec![S::zero(); a.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = a[r * cols + c];
        }
    }
    out
}

/// Row-wise log-softmax of a `[rows, cols]` buffer, max-shifted.
pub(crate) fn log_softmax_rows<S: Scalar>(x: &[S], cols: usize) -> Vec<S> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let max = row.iter().copied().fold(S::neg_infinity(), S::max);
        let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<S>().ln();
        out.extend(row.iter().map(|&v| v - lse));
    }
    out
}

/// Per-channel statistics of a `[frames, channels]` buffer.
pub(crate) struct NormCache<S> {
    pub normalized: Vec<S>,
    pub inv_std: Vec<S>,
}

pub(crate) fn channel_norm_forward<S: Scalar>(
    x: &[S],
    channels: usize,
    gain: &[S],
    bias: &[S],
    eps: S,
) -> (Vec<S>, NormCache<S>) {
    let frames = x.len() / channels;
    let n = S::of(frames as f64);
    let mut mean = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![S::zero(); channels];
    for row in x.chunks_exact(channels) {
        for c in 0..channels {
            let dv = row[c] - mean[c];
            var[c] += dv * dv;
        }
    }
    let inv_std: Vec<S> = var.iter().map(|&v| (v / n + eps).sqrt().recip()).collect();
    let mut normalized = vec![S::zero(); x.len()];
    let mut out = vec![S::zero(); x.len()];
    for (i, (&v, (h, o))) in x
        .iter()
        .zip(normalized.iter_mut().zip(out.iter_mut()))
        .enumerate()
    {
        let c = i % channels;
        *h = (v - mean[c]) * inv_std[c];
        *o = gain[c] * *h + bias[c];
    }
    (
        out,
        NormCache {
            normalized,
            inv_std,
        },
    )
}

/// Returns gradients for (input, gain, bias).
pub(crate) fn channel_norm_backward<S: Scalar>(
    grad_out: &[S],
    cache: &NormCache<S>,
    gain: &[S],
    channels: usize,
) -> (Vec<S>, Vec<S>, Vec<S>) {
    let frames = grad_out.len() / channels;
    let n = S::of(frames as f64);
    let mut dgain = vec![S::zero(); channels];
    let mut dbias = vec![S::zero(); channels];
    // sums of d(normalized) and d(normalized) * normalized per channel
    let mut sum_dh = vec![S::zero(); channels];
    let mut sum_dh_h = vec![S::zero(); channels];
    for (i, (&g, &h)) in grad_out.iter().zip(&cache.normalized).enumerate() {
        let c = i % channels;
        dgain[c] += g * h;
        dbias[c] += g;
        let dh = g * gain[c];
        sum_dh[c] += dh;
        sum_dh_h[c] += dh * h;
    }
    let mut dx = vec![S::zero(); grad_out.len()];
    for (i, (d, (&g, &h))) in dx
        .iter_mut()
        .zip(grad_out.iter().zip(&cache.normalized))
        .enumerate()
    {
        let c = i % channels;
        let dh = g * gain[c];
        *d = cache.inv_std[c] / n * (n * dh - sum_dh[c] - h * sum_dh_h[c]);
    }
    (dx, dgain, dbias)
}

/// Gathers `[frames, channels]` into `[frames, channels, behind + 1 + ahead]`,
/// zero-filling positions that fall outside the sequence.
pub(crate) fn window_stack<S: Scalar>(
    x: &[S],
    channels: usize,
    behind: usize,
    ahead: usize,
) -> Vec<S> {
    let frames = x.len() / channels;
    let width = behind + 1 + ahead;
    let mut out = vec![S::zero(); frames * channels * width];
    for t in 0..frames {
        for j in 0..width {
            let src = t as isize + j as isize - behind as isize;
            if src < 0 || src as usize >= frames {
                continue;
            }
            let src = src as usize;
            for c in 0..channels {
                out[(t * channels + c) * width + j] = x[src * channels + c];
            }
        }
    }
    out
}

pub(crate) fn window_stack_backward<S: Scalar>(
    grad_out: &[S],
    frames: usize,
    channels: usize,
    behind: usize,
    ahead: usize,
) -> Vec<S> {
    let width = behind + 1 + ahead;
    let mut dx = vec![S::zero(); frames * channels];
    for t in 0..frames {
        for j in 0..width {
            let src = t as isize + j as isize - behind as isize;
            if src < 0 || src as usize >= frames {
                continue;
            }
            let src = src as usize;
            for c in 0..channels {
                dx[src * channels + c] += grad_out[(t * channels + c) * width + j];
            }
        }
    }
    dx
}

/// `sum_{t>=1,c} min(|lp[t,c] - lp[t-1,c]|, tau) / (frames * classes)`.
pub(crate) fn truncated_smoothing<S: Scalar>(log_probs: &[S], classes: usize, tau: S) -> S {
    let frames = log_probs.len() / classes;
    if frames < 2 {
        return S::zero();
    }
    let mut acc = S::zero();
    for t in 1..frames {
        for c in 0..classes {
            let delta = (log_probs[t * classes + c] - log_probs[(t - 1) * classes + c]).abs();
            acc += delta.min(tau);
        }
    }
    acc / S::of((frames * classes) as f64)
}

/// Sum over the listed rows of `||onehot(target) - exp(log_probs[row])||^2`.
pub(crate) fn midpoint_sq_error<S: Scalar>(
    log_probs: &[S],
    classes: usize,
    rows: &[usize],
    targets: &[usize],
) -> S {
    let mut acc = S::zero();
    for (&r, &y) in rows.iter().zip(targets) {
        for c in 0..classes {
            let p = log_probs[r * classes + c].exp();
            let target = if c == y { S::one() } else { S::zero() };
            acc += (target - p) * (target - p);
        }
    }
    acc
}

#[inline]
pub(crate) fn sigmoid<S: Scalar>(x: S) -> S {
    if x >= S::zero() {
        (S::one() + (-x).exp()).recip()
    } else {
        let e = x.exp();
        e / (S::one() + e)
    }
}
