//! The assembled network: per-mode encoders, fusion, fused encoder and a
//! per-frame classification head, with switches for the ablation variants.

mod checkpoint;

pub use checkpoint::{from_bytes, load, save, to_bytes, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::blocks::{declare_stack, forward_stack, DilatedResidualBlock, TemporalProjection};
use crate::error::{Error, Result};
use crate::fusion::{AttentionLevel, FeatureEnhancer, FusionBlock};
use crate::scalar::Scalar;
use crate::tensor::{Graph, Init, ParamId, ParamStore, Tensor, Var};
use crate::ufm::{UfmBlock, UfmConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FusionMode {
    /// Windowed fusion at the configured attention level.
    Attention,
    /// Per-frame concatenation: attention level 1 and no gate.
    Simple,
}

/// Structural switches; each combination is one ablation variant.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Ablation {
    pub use_ufm: bool,
    pub use_fe: bool,
    pub use_mfm: bool,
    pub fusion: FusionMode,
}

impl Default for Ablation {
    fn default() -> Self {
        Ablation {
            use_ufm: true,
            use_fe: true,
            use_mfm: true,
            fusion: FusionMode::Attention,
        }
    }
}

impl Ablation {
    /// Single-stream baseline: one encoder straight into the fused encoder.
    pub fn unimodal() -> Self {
        Ablation {
            fusion: FusionMode::Simple,
            use_fe: false,
            ..Self::default()
        }
    }

    pub(crate) fn bits(self) -> u32 {
        (self.use_ufm as u32)
            | (self.use_fe as u32) << 1
            | (self.use_mfm as u32) << 2
            | ((self.fusion == FusionMode::Simple) as u32) << 3
    }

    pub(crate) fn from_bits(bits: u32) -> Result<Self> {
        if bits >> 4 != 0 {
            return Err(Error::Load(format!("unknown flag bits {bits:#x}")));
        }
        Ok(Ablation {
            use_ufm: bits & 1 != 0,
            use_fe: bits & 2 != 0,
            use_mfm: bits & 4 != 0,
            fusion: if bits & 8 != 0 {
                FusionMode::Simple
            } else {
                FusionMode::Attention
            },
        })
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    /// Feature dimension of each input mode.
    pub input_dims: Vec<usize>,
    pub channels: usize,
    pub ufm_layers: usize,
    pub mfm_layers: usize,
    /// Class count including the background class 0.
    pub classes: usize,
    pub attention: usize,
    pub reduction: usize,
    pub kernel_width: usize,
    pub ablation: Ablation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dims: vec![64, 64],
            channels: 64,
            ufm_layers: 12,
            mfm_layers: 10,
            classes: 2,
            attention: 8,
            reduction: 4,
            kernel_width: 3,
            ablation: Ablation::default(),
        }
    }
}

impl ModelConfig {
    pub fn modes(&self) -> usize {
        self.input_dims.len()
    }

    /// Attention level actually used by the fusion block.
    pub fn effective_attention(&self) -> usize {
        match self.ablation.fusion {
            FusionMode::Attention => self.attention,
            FusionMode::Simple => 1,
        }
    }

    pub fn gate_enabled(&self) -> bool {
        self.ablation.use_fe && self.ablation.fusion == FusionMode::Attention
    }

    /// Channel width of the sequences entering fusion.
    pub fn fusion_channels(&self) -> usize {
        if self.ablation.use_ufm {
            self.channels
        } else {
            self.input_dims.first().copied().unwrap_or(0)
        }
    }

    /// Per-frame width after flattening the fused matrix.
    pub fn fused_dim(&self) -> usize {
        self.fusion_channels() * self.effective_attention() * self.modes()
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dims.is_empty() || self.input_dims.contains(&0) {
            return Err(Error::Config(
                "need at least one mode with a positive feature dimension".into(),
            ));
        }
        if self.channels == 0 {
            return Err(Error::Config("channel width must be positive".into()));
        }
        if self.classes < 2 {
            return Err(Error::Config(
                "need the background class and at least one gesture class".into(),
            ));
        }
        AttentionLevel::new(self.attention).map_err(|e| Error::Config(e.to_string()))?;
        if self.kernel_width % 2 == 0 {
            return Err(Error::Config("kernel width must be odd".into()));
        }
        if self.ablation.use_ufm && self.ufm_layers < 1 {
            return Err(Error::Config(
                "per-mode encoder needs at least one layer".into(),
            ));
        }
        if self.ablation.use_mfm && self.mfm_layers < 1 {
            return Err(Error::Config(
                "fused encoder needs at least one layer".into(),
            ));
        }
        if !self.ablation.use_ufm && self.input_dims.iter().any(|&d| d != self.input_dims[0]) {
            return Err(Error::Config(
                "without per-mode encoders every mode must share one feature dimension".into(),
            ));
        }
        if self.gate_enabled() {
            crate::fusion::hidden_width(self.fusion_channels(), self.reduction)?;
        }
        Ok(())
    }
}

/// Fused encoder: projection of the flattened fused frames to the channel
/// width, then a dilated residual stack.
#[derive(Clone, Debug, PartialEq)]
pub struct MfmBlock {
    pub entry: TemporalProjection,
    pub blocks: Vec<DilatedResidualBlock>,
}

impl MfmBlock {
    pub fn forward<S: Scalar>(&self, g: &mut Graph<S>, params: &[Var], fused: Var) -> Result<Var> {
        let h = self.entry.forward(g, params, fused)?;
        forward_stack(&self.blocks, g, params, h)
    }
}

/// Per-frame class distribution and its argmax track.
#[derive(Clone, Debug, PartialEq)]
pub struct PredictionSequence<S> {
    /// `[T, C]` log-probabilities.
    pub log_probs: Tensor<S>,
    pub labels: Vec<usize>,
}

impl<S: Scalar> PredictionSequence<S> {
    pub fn from_log_probs(log_probs: Tensor<S>) -> Self {
        let labels = argmax_rows(&log_probs);
        PredictionSequence { log_probs, labels }
    }

    pub fn probs(&self) -> Tensor<S> {
        self.log_probs.map(|v| v.exp())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Index of the largest entry of each row; ties go to the lowest index.
pub fn argmax_rows<S: Scalar>(scores: &Tensor<S>) -> Vec<usize> {
    let cols = scores.shape()[1];
    scores
        .data()
        .chunks_exact(cols)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, S::neg_infinity()), |(bi, bv), (i, &v)| {
                    if v > bv {
                        (i, v)
                    } else {
                        (bi, bv)
                    }
                })
                .0
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct TmmfModel<S> {
    config: ModelConfig,
    params: ParamStore<S>,
    ufm: Vec<UfmBlock>,
    fusion: FusionBlock,
    mfm: Option<MfmBlock>,
    head_kernel: ParamId,
    head_bias: ParamId,
}

impl<S: Scalar> TmmfModel<S> {
    /// Declares every parameter in a fixed order and initialises it from `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = ParamStore::new();
        let mut ufm = Vec::new();
        if config.ablation.use_ufm {
            for (i, &d_in) in config.input_dims.iter().enumerate() {
                ufm.push(UfmBlock::declare(
                    &mut params,
                    &format!("ufm{i}"),
                    UfmConfig {
                        layers: config.ufm_layers,
                        channels: config.channels,
                        input_dim: d_in,
                        kernel_width: config.kernel_width,
                    },
                    &mut rng,
                )?);
            }
        }
        let enhancer = if config.gate_enabled() {
            Some(FeatureEnhancer::declare(
                &mut params,
                config.fusion_channels(),
                config.reduction,
                &mut rng,
            )?)
        } else {
            None
        };
        let fusion = FusionBlock {
            level: AttentionLevel::new(config.effective_attention())?,
            enhancer,
        };
        let fused_dim = config.fused_dim();
        let (mfm, head_in) = if config.ablation.use_mfm {
            let entry = TemporalProjection::declare(
                &mut params,
                "mfm.entry",
                fused_dim,
                config.channels,
                &mut rng,
            );
            let blocks = declare_stack(
                &mut params,
                "mfm",
                config.mfm_layers,
                config.channels,
                config.kernel_width,
                &mut rng,
            )?;
            (Some(MfmBlock { entry, blocks }), config.channels)
        } else {
            (None, fused_dim)
        };
        let head_kernel = params.declare(
            "head.kernel",
            &[config.classes, head_in, 1],
            Init::FanIn(head_in),
            &mut rng,
        );
        let head_bias = params.declare(
            "head.bias",
            &[config.classes],
            Init::Constant(0.0),
            &mut rng,
        );
        Ok(TmmfModel {
            config,
            params,
            ufm,
            fusion,
            mfm,
            head_kernel,
            head_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<S> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<S> {
        &mut self.params
    }

    pub fn ufm_blocks(&self) -> &[UfmBlock] {
        &self.ufm
    }

    pub fn fusion_block(&self) -> &FusionBlock {
        &self.fusion
    }

    pub fn mfm_block(&self) -> Option<&MfmBlock> {
        self.mfm.as_ref()
    }

    pub fn head(&self) -> (ParamId, ParamId) {
        (self.head_kernel, self.head_bias)
    }

    fn check_streams(&self, streams: &[Tensor<S>]) -> Result<usize> {
        if streams.len() != self.config.modes() {
            return Err(Error::Dimension(format!(
                "model has {} modes, got {} streams",
                self.config.modes(),
                streams.len()
            )));
        }
        let frames = streams[0].shape()[0];
        for (i, (s, &d_in)) in streams.iter().zip(&self.config.input_dims).enumerate() {
            if s.rank() != 2 || s.shape()[1] != d_in {
                return Err(Error::Dimension(format!(
                    "mode {i} expects [T, {d_in}] features, got {:?}",
                    s.shape()
                )));
            }
            if s.shape()[0] != frames {
                return Err(Error::Sync(format!(
                    "mode {i} has {} frames, mode 0 has {frames}",
                    s.shape()[0]
                )));
            }
        }
        Ok(frames)
    }

    /// Encoded per-mode sequences entering fusion.
    pub fn encode_modes(
        &self,
        g: &mut Graph<S>,
        params: &[Var],
        streams: &[Tensor<S>],
    ) -> Result<Vec<Var>> {
        self.check_streams(streams)?;
        streams
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let x = g.input(s.clone());
                if self.config.ablation.use_ufm {
                    self.ufm[i].forward(g, params, x)
                } else {
                    Ok(x)
                }
            })
            .collect()
    }

    /// Fused encoder and head on flattened fused frames; `[T, C]` log-probabilities.
    pub fn classify(&self, g: &mut Graph<S>, params: &[Var], fused: Var) -> Result<Var> {
        let width = g.value(fused)?.shape()[1];
        if width != self.config.fused_dim() {
            return Err(Error::Dimension(format!(
                "fused frames have width {width}, expected {}",
                self.config.fused_dim()
            )));
        }
        let h = match &self.mfm {
            Some(m) => m.forward(g, params, fused)?,
            None => fused,
        };
        let logits = g.conv1d(
            h,
            params[self.head_kernel.index()],
            Some(params[self.head_bias.index()]),
            1,
        )?;
        g.log_softmax_rows(logits)
    }

    /// Records the full forward pass on `g` and returns `[T, C]` log-probabilities.
    pub fn forward(&self, g: &mut Graph<S>, streams: &[Tensor<S>]) -> Result<Var> {
        let params = g.bind(&self.params);
        let modes = self.encode_modes(g, &params, streams)?;
        let fused = self.fusion.forward(g, &params, &modes)?;
        self.classify(g, &params, fused)
    }

    /// Whole-sequence inference.
    pub fn predict(&self, streams: &[Tensor<S>]) -> Result<PredictionSequence<S>> {
        let mut g = Graph::new();
        let out = self.forward(&mut g, streams)?;
        let log_probs = g.value(out)?.clone();
        Ok(PredictionSequence::from_log_probs(log_probs))
    }

    /// Rebuilds the structure for `config` and installs `values` in declaration order.
    pub(crate) fn with_values(config: ModelConfig, values: Vec<Tensor<S>>) -> Result<Self> {
        let mut model = Self::new(config, 0)?;
        if values.len() != model.params.len() {
            return Err(Error::Load(format!(
                "expected {} parameter tensors, found {}",
                model.params.len(),
                values.len()
            )));
        }
        for (id, v) in model
            .params
            .ids()
            .collect::<Vec<_>>()
            .into_iter()
            .zip(values)
        {
            model
                .params
                .assign(id, v)
                .map_err(|e| Error::Load(e.to_string()))?;
        }
        Ok(model)
    }
}
