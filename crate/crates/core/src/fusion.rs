//! Temporally aligned multi-modal fusion.
//!
//! At every frame `t` the fusion block takes the units `t - behind ..= t + ahead`
//! from each mode's encoded sequence, lays the per-mode windows side by side
//! into a `(d, A * M)` matrix and rescales each channel row with a learned
//! sigmoid gate computed from the row means.
//!
//! Frames are 0-based throughout. Window positions outside the sequence are
//! zero columns so that every frame yields the same shape.
//!
//! Two implementations live here: per-frame functions on plain tensors
//! ([`select_subvector`], [`concat_modes`], [`feature_enhance`],
//! [`fuse_sequence`]) and the batched, differentiable path used by the
//! model ([`FusionBlock::forward`]).

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::kernels::sigmoid;
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};

/// Number of temporally adjacent units taken from each mode per frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct AttentionLevel(usize);

impl AttentionLevel {
    pub fn new(level: usize) -> Result<Self> {
        if level < 1 {
            return Err(Error::Parameter(
                "attention level must be at least 1".into(),
            ));
        }
        Ok(AttentionLevel(level))
    }

    pub fn get(self) -> usize {
        self.0
    }

    pub fn bounds(self) -> WindowBounds {
        let a = self.0;
        if a % 2 == 0 {
            WindowBounds {
                ahead: a / 2,
                behind: (a - 2) / 2,
            }
        } else {
            WindowBounds {
                ahead: (a - 1) / 2,
                behind: (a - 1) / 2,
            }
        }
    }
}

/// Units ahead of (`i_inc`) and behind (`i_dec`) the current frame.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct WindowBounds {
    pub ahead: usize,
    pub behind: usize,
}

impl WindowBounds {
    pub fn width(self) -> usize {
        self.behind + 1 + self.ahead
    }
}

/// Even levels lean one unit forward; odd levels are symmetric.
pub fn window_bounds(level: usize) -> Result<WindowBounds> {
    Ok(AttentionLevel::new(level)?.bounds())
}

/// `[T, d]` sequence to the `[d, A]` window around frame `t`.
pub fn select_subvector<S: Scalar>(v: &Tensor<S>, t: usize, b: WindowBounds) -> Result<Tensor<S>> {
    if v.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [T, d], got {:?}",
            v.shape()
        )));
    }
    let (frames, d) = (v.shape()[0], v.shape()[1]);
    if t >= frames {
        return Err(Error::Contract(format!("frame {t} outside 0..{frames}")));
    }
    let width = b.width();
    let mut out = Tensor::zeros(&[d, width]);
    for j in 0..width {
        let src = t as isize - b.behind as isize + j as isize;
        if src < 0 || src as usize >= frames {
            continue;
        }
        let row = v.row(src as usize);
        for c in 0..d {
            out.data_mut()[c * width + j] = row[c];
        }
    }
    Ok(out)
}

/// Places the per-mode `[d, A]` windows side by side in mode order.
pub fn concat_modes<S: Scalar>(parts: &[Tensor<S>]) -> Result<Tensor<S>> {
    let first = parts
        .first()
        .ok_or_else(|| Error::Parameter("no modes to concatenate".into()))?;
    if first.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [d, A], got {:?}",
            first.shape()
        )));
    }
    let (d, a) = (first.shape()[0], first.shape()[1]);
    if let Some(bad) = parts.iter().find(|p| p.shape() != [d, a]) {
        return Err(Error::Dimension(format!(
            "mode window {:?} does not match {:?}",
            bad.shape(),
            first.shape()
        )));
    }
    let m = parts.len();
    let mut out = Tensor::zeros(&[d, a * m]);
    for (mi, p) in parts.iter().enumerate() {
        for c in 0..d {
            out.data_mut()[c * a * m + mi * a..c * a * m + (mi + 1) * a]
                .copy_from_slice(&p.data()[c * a..(c + 1) * a]);
        }
    }
    Ok(out)
}

/// Gate weights: `w1` is `[hidden, d]`, `w2` is `[d, hidden]`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeParams<S> {
    pub w1: Tensor<S>,
    pub w2: Tensor<S>,
}

impl<S: Scalar> FeParams<S> {
    pub fn zeros(channels: usize, reduction: usize) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Ok(FeParams {
            w1: Tensor::zeros(&[hidden, channels]),
            w2: Tensor::zeros(&[channels, hidden]),
        })
    }

    fn check(&self, channels: usize) -> Result<usize> {
        let (s1, s2) = (self.w1.shape(), self.w2.shape());
        if s1.len() != 2 || s2.len() != 2 || s1[1] != channels || s2 != [channels, s1[0]] {
            return Err(Error::Dimension(format!(
                "gate weights {s1:?} / {s2:?} do not fit {channels} channels"
            )));
        }
        Ok(s1[0])
    }
}

pub fn hidden_width(channels: usize, reduction: usize) -> Result<usize> {
    if reduction == 0 || channels % reduction != 0 || channels < reduction {
        return Err(Error::Config(format!(
            "channel count {channels} is not divisible by reduction ratio {reduction}"
        )));
    }
    Ok(channels / reduction)
}

/// Channel gate `sigmoid(w2 relu(w1 z))` of the row means `z` of a
/// `[d, A * M]` matrix; every row is scaled by its gate.
pub fn feature_enhance<S: Scalar>(eta: &Tensor<S>, fe: &FeParams<S>) -> Result<Tensor<S>> {
    if eta.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [d, A*M], got {:?}",
            eta.shape()
        )));
    }
    let (d, w) = (eta.shape()[0], eta.shape()[1]);
    let hidden = fe.check(d)?;
    let inv = S::of(w as f64).recip();
    let z: Vec<S> = (0..d)
        .map(|c| eta.data()[c * w..(c + 1) * w].iter().copied().sum::<S>() * inv)
        .collect();
    let h: Vec<S> = (0..hidden)
        .map(|j| {
            let acc: S = (0..d).map(|c| fe.w1.data()[j * d + c] * z[c]).sum();
            acc.max(S::zero())
        })
        .collect();
    let mut out = eta.clone();
    for c in 0..d {
        let pre: S = (0..hidden)
            .map(|j| fe.w2.data()[c * hidden + j] * h[j])
            .sum();
        let beta = sigmoid(pre);
        out.data_mut()[c * w..(c + 1) * w]
            .iter_mut()
            .for_each(|v| *v *= beta);
    }
    Ok(out)
}

/// Per-frame fused matrices for synchronised `[T, d]` mode sequences.
/// `fe = None` skips the gate.
pub fn fuse_sequence<S: Scalar>(
    modes: &[Tensor<S>],
    level: AttentionLevel,
    fe: Option<&FeParams<S>>,
) -> Result<Vec<Tensor<S>>> {
    let first = modes
        .first()
        .ok_or_else(|| Error::Parameter("no modes to fuse".into()))?;
    let frames = first.shape()[0];
    if let Some(bad) = modes.iter().find(|m| m.shape()[0] != frames) {
        return Err(Error::Sync(format!(
            "mode lengths {} and {} differ",
            frames,
            bad.shape()[0]
        )));
    }
    let bounds = level.bounds();
    (0..frames)
        .map(|t| {
            let parts = modes
                .iter()
                .map(|v| select_subvector(v, t, bounds))
                .collect::<Result<Vec<_>>>()?;
            let eta = concat_modes(&parts)?;
            match fe {
                Some(p) => feature_enhance(&eta, p),
                None => Ok(eta),
            }
        })
        .collect()
}

/// Trainable gate inside the model.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureEnhancer {
    pub w1: ParamId,
    pub w2: ParamId,
    pub channels: usize,
    pub hidden: usize,
}

impl FeatureEnhancer {
    pub fn declare<S: Scalar>(
        store: &mut ParamStore<S>,
        channels: usize,
        reduction: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let hidden = hidden_width(channels, reduction)?;
        Ok(FeatureEnhancer {
            w1: store.declare("fe.w1", &[hidden, channels], Init::FanIn(channels), rng),
            w2: store.declare("fe.w2", &[channels, hidden], Init::FanIn(hidden), rng),
            channels,
            hidden,
        })
    }

    pub fn params<S: Scalar>(&self, store: &ParamStore<S>) -> FeParams<S> {
        FeParams {
            w1: store.get(self.w1).clone(),
            w2: store.get(self.w2).clone(),
        }
    }

    /// `[T, d, W]` to `[T, d, W]`, one gate per frame and channel.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], eta: Var) -> Result<Var> {
        let z = g.mean_axes(eta, &[2])?;
        let w1t = g.transpose(params[self.w1.index()])?;
        let h = g.matmul(z, w1t)?;
        let h = g.relu(h)?;
        let w2t = g.transpose(params[self.w2.index()])?;
        let pre = g.matmul(h, w2t)?;
        let beta = g.sigmoid(pre)?;
        g.mul(eta, beta)
    }
}

/// Differentiable fusion over whole sequences.
#[derive(Clone, Debug, PartialEq)]
pub struct FusionBlock {
    pub level: AttentionLevel,
    pub enhancer: Option<FeatureEnhancer>,
}

impl FusionBlock {
    /// `M` sequences `[T, d]` to `[T, d * A * M]`: each frame's `(d, A * M)`
    /// matrix flattened row-major (channel-major, window position minor).
    pub fn forward<S: Scalar>(
        &self,
        g: &mut Graph<S>,
        params: &[Var],
        modes: &[Var],
    ) -> Result<Var> {
        let first = *modes
            .first()
            .ok_or_else(|| Error::Parameter("no modes to fuse".into()))?;
        let shape = g.value(first)?.shape().to_vec();
        for &m in modes {
            let s = g.value(m)?.shape();
            if s.len() != 2 || s[0] != shape[0] {
                return Err(Error::Sync(format!(
                    "mode shapes {shape:?} and {s:?} differ in length"
                )));
            }
            if s[1] != shape[1] {
                return Err(Error::Dimension(format!(
                    "mode widths {} and {} differ",
                    shape[1], s[1]
                )));
            }
        }
        let b = self.level.bounds();
        let windows = modes
            .iter()
            .map(|&m| g.window_stack(m, b.behind, b.ahead))
            .collect::<Result<Vec<_>>>()?;
        let eta = if windows.len() == 1 {
            windows[0]
        } else {
            g.concat_last(&windows)?
        };
        let eta = match &self.enhancer {
            Some(fe) => fe.forward(g, params, eta)?,
            None => eta,
        };
        let width = b.width() * modes.len();
        g.reshape(eta, &[shape[0], shape[1] * width])
    }
}
