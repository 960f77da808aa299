//! Loop-level reference implementations shared by the integration tests.
//! Nothing here calls into the autodiff graph.
#![allow(dead_code)]

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use tmmf::blocks::{DilatedResidualBlock, NORM_EPS};
use tmmf::model::TmmfModel;
use tmmf::tensor::{ParamStore, Tensor};

pub type Matrix = Vec<Vec<f64>>;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

pub fn to_matrix(t: &Tensor<f64>) -> Matrix {
    (0..t.shape()[0]).map(|r| t.row(r).to_vec()).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

pub fn flatten(m: &Matrix) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

/// Zero-padded dilated convolution; kernel `[c_out, c_in, K]`, tap `k` reads
/// frame `t + (k - K/2) * dilation`.
pub fn conv(x: &Matrix, w: &Tensor<f64>, bias: Option<&[f64]>, dilation: usize) -> Matrix {
    let frames = x.len();
    let (c_out, c_in, width) = (w.shape()[0], w.shape()[1], w.shape()[2]);
    let mut out = vec![vec![0.0; c_out]; frames];
    for t in 0..frames {
        for o in 0..c_out {
            let mut acc = bias.map_or(0.0, |b| b[o]);
            for c in 0..c_in {
                for k in 0..width {
                    let src = t as i64 + (k as i64 - (width / 2) as i64) * dilation as i64;
                    if src >= 0 && (src as usize) < frames {
                        acc += x[src as usize][c] * w.at(&[o, c, k]);
                    }
                }
            }
            out[t][o] = acc;
        }
    }
    out
}

pub fn relu(x: &Matrix) -> Matrix {
    x.iter()
        .map(|r| r.iter().map(|v| v.max(0.0)).collect())
        .collect()
}

/// Per-channel mean and population variance over frames.
pub fn channel_stats(x: &Matrix) -> (Vec<f64>, Vec<f64>) {
    let (frames, c) = (x.len() as f64, x[0].len());
    let mean: Vec<f64> = (0..c)
        .map(|j| x.iter().map(|r| r[j]).sum::<f64>() / frames)
        .collect();
    let var = (0..c)
        .map(|j| x.iter().map(|r| (r[j] - mean[j]).powi(2)).sum::<f64>() / frames)
        .collect();
    (mean, var)
}

pub fn normalise(x: &Matrix, stats: &(Vec<f64>, Vec<f64>), gain: &[f64], bias: &[f64]) -> Matrix {
    let (mean, var) = stats;
    x.iter()
        .map(|r| {
            r.iter()
                .enumerate()
                .map(|(j, v)| gain[j] * (v - mean[j]) / (var[j] + NORM_EPS).sqrt() + bias[j])
                .collect()
        })
        .collect()
}

/// One residual block. With `frozen = Some(stats)` the normalisation uses
/// the given statistics instead of the sequence's own; the statistics
/// actually used are returned.
pub fn block(
    store: &ParamStore<f64>,
    b: &DilatedResidualBlock,
    x: &Matrix,
    frozen: Option<&(Vec<f64>, Vec<f64>)>,
) -> (Matrix, (Vec<f64>, Vec<f64>)) {
    let h = relu(&conv(
        x,
        store.get(b.dilated_kernel),
        Some(store.get(b.dilated_bias).data()),
        b.dilation,
    ));
    let h = conv(&h, store.get(b.pointwise_kernel), None, 1);
    let stats = frozen.cloned().unwrap_or_else(|| channel_stats(&h));
    let h = relu(&normalise(
        &h,
        &stats,
        store.get(b.norm_gain).data(),
        store.get(b.norm_bias).data(),
    ));
    let out = x
        .iter()
        .zip(&h)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| p + q).collect())
        .collect();
    (out, stats)
}

pub type Stats = Vec<(Vec<f64>, Vec<f64>)>;

pub fn stack(
    store: &ParamStore<f64>,
    blocks: &[DilatedResidualBlock],
    x: &Matrix,
    frozen: Option<&Stats>,
) -> (Matrix, Stats) {
    let mut h = x.clone();
    let mut used = Vec::new();
    for (l, b) in blocks.iter().enumerate() {
        let (next, s) = block(store, b, &h, frozen.map(|f| &f[l]));
        h = next;
        used.push(s);
    }
    (h, used)
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Fused `[T, d * A * M]` frames: for every frame and channel, the window
/// positions of mode 0, then mode 1, ..., optionally gated.
pub fn fuse(
    modes: &[Matrix],
    behind: usize,
    ahead: usize,
    gate: Option<(&Tensor<f64>, &Tensor<f64>)>,
) -> Matrix {
    let frames = modes[0].len();
    let d = modes[0][0].len();
    let width = behind + 1 + ahead;
    let m = modes.len();
    (0..frames)
        .map(|t| {
            // eta[c][mode * width + j]
            let mut eta = vec![vec![0.0; width * m]; d];
            for (mi, mode) in modes.iter().enumerate() {
                for j in 0..width {
                    let src = t as i64 - behind as i64 + j as i64;
                    if src >= 0 && (src as usize) < frames {
                        for c in 0..d {
                            eta[c][mi * width + j] = mode[src as usize][c];
                        }
                    }
                }
            }
            if let Some((w1, w2)) = gate {
                let hidden = w1.shape()[0];
                let z: Vec<f64> = eta
                    .iter()
                    .map(|r| r.iter().sum::<f64>() / r.len() as f64)
                    .collect();
                let h: Vec<f64> = (0..hidden)
                    .map(|i| (0..d).map(|c| w1.at(&[i, c]) * z[c]).sum::<f64>().max(0.0))
                    .collect();
                for c in 0..d {
                    let beta = sigmoid((0..hidden).map(|i| w2.at(&[c, i]) * h[i]).sum());
                    eta[c].iter_mut().for_each(|v| *v *= beta);
                }
            }
            eta.into_iter().flatten().collect()
        })
        .collect()
}

pub fn log_softmax(x: &Matrix) -> Matrix {
    x.iter()
        .map(|r| {
            let m = r.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let lse = m + r.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
            r.iter().map(|v| v - lse).collect()
        })
        .collect()
}

/// Whole-model forward pass written out by hand.
pub fn model_forward(model: &TmmfModel<f64>, streams: &[Tensor<f64>]) -> Matrix {
    let cfg = model.config();
    let store = model.params();
    let modes: Vec<Matrix> = if cfg.ablation.use_ufm {
        model
            .ufm_blocks()
            .iter()
            .zip(streams)
            .map(|(u, s)| {
                let h = conv(&to_matrix(s), store.get(u.entry.kernel), None, 1);
                stack(store, &u.blocks, &h, None).0
            })
            .collect()
    } else {
        streams.iter().map(to_matrix).collect()
    };
    let fusion = model.fusion_block();
    let b = fusion.level.bounds();
    let gate = fusion
        .enhancer
        .as_ref()
        .map(|fe| (store.get(fe.w1), store.get(fe.w2)));
    let fused = fuse(&modes, b.behind, b.ahead, gate);
    let h = match model.mfm_block() {
        Some(m) => {
            let h = conv(&fused, store.get(m.entry.kernel), None, 1);
            stack(store, &m.blocks, &h, None).0
        }
        None => fused,
    };
    let (k, bias) = model.head();
    log_softmax(&conv(&h, store.get(k), Some(store.get(bias).data()), 1))
}

/// Set-based reference: per class, the frame sets of ground truth and
/// prediction; IoU summed over classes in either, divided by true classes.
pub fn jaccard_reference(gt: &[usize], pred: &[usize], include_bg: bool) -> f64 {
    let frames_of = |seq: &[usize], c: usize| -> BTreeSet<usize> {
        (0..seq.len()).filter(|&t| seq[t] == c).collect()
    };
    let keep = |c: &usize| include_bg || *c != 0;
    let true_set: BTreeSet<usize> = gt.iter().copied().filter(keep).collect();
    let all: BTreeSet<usize> = gt.iter().chain(pred).copied().filter(keep).collect();
    if true_set.is_empty() {
        return if all.is_empty() { 1.0 } else { 0.0 };
    }
    let sum: f64 = all
        .iter()
        .map(|&c| {
            let g = frames_of(gt, c);
            let p = frames_of(pred, c);
            g.intersection(&p).count() as f64 / g.union(&p).count() as f64
        })
        .sum();
    sum / true_set.len() as f64
}

/// The textbook recursion without memoisation.
pub fn edit_naive(a: &[u8], b: &[u8]) -> usize {
    match (a.split_last(), b.split_last()) {
        (None, _) => b.len(),
        (_, None) => a.len(),
        (Some((x, ra)), Some((y, rb))) => {
            let sub = edit_naive(ra, rb) + usize::from(x != y);
            sub.min(edit_naive(ra, b) + 1).min(edit_naive(a, rb) + 1)
        }
    }
}

/// The same recursion, memoised on suffix lengths.
pub fn edit_memo(a: &[u8], b: &[u8]) -> usize {
    fn go(a: &[u8], b: &[u8], i: usize, j: usize, memo: &mut [[Option<usize>; 9]; 9]) -> usize {
        if let Some(v) = memo[i][j] {
            return v;
        }
        let v = if i == 0 {
            j
        } else if j == 0 {
            i
        } else {
            let sub = go(a, b, i - 1, j - 1, memo) + usize::from(a[i - 1] != b[j - 1]);
            sub.min(go(a, b, i - 1, j, memo) + 1)
                .min(go(a, b, i, j - 1, memo) + 1)
        };
        memo[i][j] = Some(v);
        v
    }
    go(a, b, a.len(), b.len(), &mut [[None; 9]; 9])
}

/// Every string over {0, 1, 2} of length at most `max_len`.
pub fn all_strings(max_len: usize) -> Vec<Vec<u8>> {
    let mut out = vec![vec![]];
    let mut layer = vec![vec![]];
    for _ in 0..max_len {
        layer = layer
            .iter()
            .flat_map(|s: &Vec<u8>| {
                (0..3u8).map(move |c| {
                    let mut n = s.clone();
                    n.push(c);
                    n
                })
            })
            .collect();
        out.extend(layer.iter().cloned());
    }
    out
}

pub fn random_labels(r: &mut impl Rng, frames: usize, classes: usize) -> Vec<usize> {
    // runs, so that segments have realistic lengths
    let mut out = Vec::with_capacity(frames);
    while out.len() < frames {
        let c = r.random_range(0..classes);
        let len = r.random_range(1..8);
        out.extend(std::iter::repeat(c).take(len));
    }
    out.truncate(frames);
    out
}

pub fn smoothing_reference(lp: &Tensor<f64>, tau: f64) -> f64 {
    let (frames, classes) = (lp.shape()[0], lp.shape()[1]);
    if frames < 2 {
        return 0.0;
    }
    let mut acc = 0.0;
    for t in 1..frames {
        for c in 0..classes {
            acc += (lp.at(&[t, c]) - lp.at(&[t - 1, c])).abs().min(tau);
        }
    }
    acc / (frames * classes) as f64
}

/// Enumerates every window start explicitly, without the library's helper.
pub fn midpoint_reference(lp: &Tensor<f64>, labels: &[usize], window: usize, stride: usize) -> f64 {
    let (frames, classes) = (lp.shape()[0], lp.shape()[1]);
    let mut centres = Vec::new();
    let mut start = 0;
    while start + window <= frames {
        centres.push(start + window / 2);
        start += stride;
    }
    if window > frames {
        centres.push(frames / 2);
    }
    centres
        .iter()
        .map(|&t| {
            (0..classes)
                .map(|c| {
                    let y = if labels[t] == c { 1.0 } else { 0.0 };
                    (y - lp.at(&[t, c]).exp()).powi(2)
                })
                .sum::<f64>()
        })
        .sum()
}
