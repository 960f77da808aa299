//! Temporal layers shared by the per-mode and fused encoders.

use rand::Rng;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Init, ParamId, ParamStore, Var};

/// Variance floor of the per-sequence channel normalisation.
pub const NORM_EPS: f64 = 1e-5;

/// Frames reachable on each side of an output frame through `layers`
/// stacked blocks with dilations `1, 2, 4, ...` and odd kernel width.
pub fn receptive_radius(layers: usize, kernel_width: usize) -> usize {
    (0..layers)
        .map(|l| (1usize << l) * (kernel_width / 2))
        .sum()
}

/// Bias-free 1x1 temporal convolution: a per-frame linear projection
/// from `c_in` to `c_out` channels.
#[derive(Clone, Debug, PartialEq)]
pub struct TemporalProjection {
    pub kernel: ParamId,
    pub c_in: usize,
    pub c_out: usize,
}

impl TemporalProjection {
    pub fn declare<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        c_in: usize,
        c_out: usize,
        rng: &mut impl Rng,
    ) -> Self {
        let kernel = store.declare(name, &[c_out, c_in, 1], Init::FanIn(c_in), rng);
        TemporalProjection {
            kernel,
            c_in,
            c_out,
        }
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], x: Var) -> Result<Var> {
        let width = g.value(x)?.shape()[1];
        if width != self.c_in {
            return Err(Error::Dimension(format!(
                "projection expects {} input channels, got {width}",
                self.c_in
            )));
        }
        g.conv1d(x, params[self.kernel.index()], None, 1)
    }
}

/// `x + relu(norm(conv1x1(relu(dilated_conv(x)))))` with length-preserving
/// zero padding and per-sequence channel normalisation.
#[derive(Clone, Debug, PartialEq)]
pub struct DilatedResidualBlock {
    pub dilated_kernel: ParamId,
    pub dilated_bias: ParamId,
    pub pointwise_kernel: ParamId,
    pub norm_gain: ParamId,
    pub norm_bias: ParamId,
    pub dilation: usize,
    pub channels: usize,
}

impl DilatedResidualBlock {
    pub fn declare<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        channels: usize,
        kernel_width: usize,
        dilation: usize,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        if kernel_width % 2 == 0 {
            return Err(Error::Config(format!(
                "kernel width {kernel_width} must be odd"
            )));
        }
        if dilation == 0 {
            return Err(Error::Parameter("dilation must be at least 1".into()));
        }
        let fan = channels * kernel_width;
        Ok(DilatedResidualBlock {
            dilated_kernel: store.declare(
                format!("{prefix}.dilated.kernel"),
                &[channels, channels, kernel_width],
                Init::FanIn(fan),
                rng,
            ),
            dilated_bias: store.declare(
                format!("{prefix}.dilated.bias"),
                &[channels],
                Init::Constant(0.0),
                rng,
            ),
            pointwise_kernel: store.declare(
                format!("{prefix}.pointwise.kernel"),
                &[channels, channels, 1],
                Init::FanIn(channels),
                rng,
            ),
            norm_gain: store.declare(
                format!("{prefix}.norm.gain"),
                &[channels],
                Init::Constant(1.0),
                rng,
            ),
            norm_bias: store.declare(
                format!("{prefix}.norm.bias"),
                &[channels],
                Init::Constant(0.0),
                rng,
            ),
            dilation,
            channels,
        })
    }

    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], x: Var) -> Result<Var> {
        let width = g.value(x)?.shape()[1];
        if width != self.channels {
            return Err(Error::Dimension(format!(
                "residual block expects {} channels, got {width}",
                self.channels
            )));
        }
        let p = |id: ParamId| params[id.index()];
        let h = g.conv1d(
            x,
            p(self.dilated_kernel),
            Some(p(self.dilated_bias)),
            self.dilation,
        )?;
        let h = g.relu(h)?;
        let h = g.conv1d(h, p(self.pointwise_kernel), None, 1)?;
        let h = g.channel_norm(h, p(self.norm_gain), p(self.norm_bias), S::of(NORM_EPS))?;
        let h = g.relu(h)?;
        g.add(x, h)
    }
}

/// Stack of residual blocks with dilation doubling at every layer.
pub(crate) fn declare_stack<S: Scalar>(
    store: &mut ParamStore<S>,
    prefix: &str,
    layers: usize,
    channels: usize,
    kernel_width: usize,
    rng: &mut impl Rng,
) -> Result<Vec<DilatedResidualBlock>> {
    (0..layers)
        .map(|l| {
            DilatedResidualBlock::declare(
                store,
                &format!("{prefix}.layer{l}"),
                channels,
                kernel_width,
                1 << l,
                rng,
            )
        })
        .collect()
}

pub(crate) fn forward_stack<S: Scalar>(
    blocks: &[DilatedResidualBlock],
    g: &mut Graph<S>,
    params: &[Var],
    mut x: Var,
) -> Result<Var> {
    for b in blocks {
        x = b.forward(g, params, x)?;
    }
    Ok(x)
}
