//! Per-mode temporal encoder: an entry projection to the shared channel
//! width followed by a stack of dilated residual blocks. It produces
//! features only; classification happens after fusion.

use rand::Rng;

use crate::blocks::{declare_stack, forward_stack, DilatedResidualBlock, TemporalProjection};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore, Var};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UfmConfig {
    pub layers: usize,
    pub channels: usize,
    pub input_dim: usize,
    pub kernel_width: usize,
}

impl UfmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers < 1 {
            return Err(Error::Config("encoder needs at least one layer".into()));
        }
        if self.channels == 0 || self.input_dim == 0 {
            return Err(Error::Config("channel counts must be positive".into()));
        }
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config("kernel width must be odd".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct UfmBlock {
    pub config: UfmConfig,
    pub entry: TemporalProjection,
    pub blocks: Vec<DilatedResidualBlock>,
}

impl UfmBlock {
    pub fn declare<S: Scalar>(
        store: &mut ParamStore<S>,
        prefix: &str,
        config: UfmConfig,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        config.validate()?;
        let entry = TemporalProjection::declare(
            store,
            &format!("{prefix}.entry"),
            config.input_dim,
            config.channels,
            rng,
        );
        let blocks = declare_stack(
            store,
            prefix,
            config.layers,
            config.channels,
            config.kernel_width,
            rng,
        )?;
        Ok(UfmBlock {
            config,
            entry,
            blocks,
        })
    }

    /// `[T, input_dim]` to `[T, channels]`.
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], x: Var) -> Result<Var> {
        let shape = g.value(x)?.shape().to_vec();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::Dimension(format!(
                "encoder expects [T, {}] features, got {shape:?}",
                self.config.input_dim
            )));
        }
        let h = self.entry.forward(g, params, x)?;
        forward_stack(&self.blocks, g, params, h)
    }
}
