//! Adam, the per-sequence training loop and evaluation.

use std::fmt::Write as _;
use std::fs::OpenOptions;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::losses::{total_loss, LossTerms, LossWeights};
use crate::metrics::{mean_jaccard_index, sliding_window_predict, MetricReport};
use crate::model::{save, Ablation, FusionMode, ModelConfig, TmmfModel};
use crate::scalar::Scalar;
use crate::tensor::{Graph, ParamStore};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 0.0005,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam<S> {
    pub config: AdamConfig,
    first: Vec<Vec<S>>,
    second: Vec<Vec<S>>,
    step: u64,
}

impl<S: Scalar> Adam<S> {
    pub fn new(store: &ParamStore<S>, config: AdamConfig) -> Self {
        let zeros: Vec<Vec<S>> = store
            .ids()
            .map(|id| vec![S::zero(); store.get(id).numel()])
            .collect();
        Adam {
            config,
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Bias-corrected update of every parameter; gradients are cleared afterwards.
    pub fn step(&mut self, store: &mut ParamStore<S>) -> Result<()> {
        if store.len() != self.first.len() {
            return Err(Error::Contract(format!(
                "optimizer tracks {} parameters, store has {}",
                self.first.len(),
                store.len()
            )));
        }
        let ids: Vec<_> = store.ids().collect();
        if let Some(&id) = ids.iter().find(|&&id| store.get(id).grad().is_none()) {
            return Err(Error::Contract(format!(
                "parameter {} has no gradient",
                store.name(id)
            )));
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (S::of(c.beta1), S::of(c.beta2));
        let correct1 = S::one() - S::of(c.beta1.powi(self.step.min(i32::MAX as u64) as i32));
        let correct2 = S::one() - S::of(c.beta2.powi(self.step.min(i32::MAX as u64) as i32));
        let (lr, eps) = (S::of(c.lr), S::of(c.eps));
        for (k, id) in ids.into_iter().enumerate() {
            let p = store.get_mut(id);
            let grad = p.grad().expect("checked above").to_vec();
            let (m, v) = (&mut self.first[k], &mut self.second[k]);
            for (((w, g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(grad)
                .zip(m.iter_mut())
                .zip(v.iter_mut())
            {
                *m = b1 * *m + (S::one() - b1) * g;
                *v = b2 * *v + (S::one() - b2) * g * g;
                let m_hat = *m / correct1;
                let v_hat = *v / correct2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        store.zero_grads();
        Ok(())
    }
}

/// Rescales all gradients so their global norm is at most `max_norm`;
/// returns the norm before clipping.
pub fn clip_grad_norm<S: Scalar>(store: &mut ParamStore<S>, max_norm: S) -> S {
    let norm = store.grad_norm();
    if norm > max_norm {
        store.scale_grads(max_norm / norm);
    }
    norm
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EvalMode {
    Full,
    Window { length: usize, stride: usize },
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub seed: u64,
    pub epochs: usize,
    /// Sequences drawn per epoch; 0 means the whole training set.
    pub sequences_per_epoch: usize,
    pub lr: f64,
    pub clip_norm: f64,
    pub loss: LossWeights<f64>,
    pub channels: usize,
    pub ufm_layers: usize,
    pub mfm_layers: usize,
    pub attention: usize,
    pub reduction: usize,
    pub kernel_width: usize,
    pub ablation: Ablation,
    /// Validate every this many epochs; the final epoch is always validated.
    pub eval_every: usize,
    pub eval: EvalMode,
    pub checkpoint: Option<PathBuf>,
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        let m = ModelConfig::default();
        TrainConfig {
            seed: 0,
            epochs: 20,
            sequences_per_epoch: 0,
            lr: AdamConfig::default().lr,
            clip_norm: 10.0,
            loss: LossWeights::default(),
            channels: m.channels,
            ufm_layers: m.ufm_layers,
            mfm_layers: m.mfm_layers,
            attention: m.attention,
            reduction: m.reduction,
            kernel_width: m.kernel_width,
            ablation: Ablation::default(),
            eval_every: 1,
            eval: EvalMode::Window {
                length: 16,
                stride: 8,
            },
            checkpoint: None,
            log: None,
        }
    }
}

pub const TRAIN_KEYS: &[&str] = &[
    "seed",
    "epochs",
    "sequences_per_epoch",
    "lr",
    "clip_norm",
    "lambda1",
    "lambda2",
    "tau",
    "mid_window",
    "mid_stride",
    "detach_previous",
    "channels",
    "ufm_layers",
    "mfm_layers",
    "attention",
    "reduction",
    "kernel_width",
    "use_ufm",
    "use_fe",
    "use_mfm",
    "fusion",
    "eval_every",
    "eval_window",
    "eval_stride",
    "full_sequence",
    "checkpoint",
    "log",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config(format!("invalid value {value:?} for {key}")))
}

impl TrainConfig {
    pub fn model_config(&self, input_dims: &[usize], classes: usize) -> ModelConfig {
        ModelConfig {
            input_dims: input_dims.to_vec(),
            channels: self.channels,
            ufm_layers: self.ufm_layers,
            mfm_layers: self.mfm_layers,
            classes,
            attention: self.attention,
            reduction: self.reduction,
            kernel_width: self.kernel_width,
            ablation: self.ablation,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.loss.validate()?;
        if !(self.lr >= 0.0) || !self.lr.is_finite() {
            return Err(Error::Config(format!(
                "learning rate must be finite and >= 0, got {}",
                self.lr
            )));
        }
        if !(self.clip_norm > 0.0) {
            return Err(Error::Config("clip_norm must be positive".into()));
        }
        if self.eval_every == 0 {
            return Err(Error::Config("eval_every must be at least 1".into()));
        }
        if let EvalMode::Window { length, stride } = self.eval {
            if length == 0 || stride == 0 || stride > length {
                return Err(Error::Config(format!(
                    "evaluation needs 0 < stride <= window, got window {length}, stride {stride}"
                )));
            }
        }
        Ok(())
    }

    /// Sets one field from its `key = value` form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let value = value.trim();
        match key {
            "seed" => self.seed = parse(key, value)?,
            "epochs" => self.epochs = parse(key, value)?,
            "sequences_per_epoch" => self.sequences_per_epoch = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "clip_norm" => self.clip_norm = parse(key, value)?,
            "lambda1" => self.loss.smoothing = parse(key, value)?,
            "lambda2" => self.loss.midpoint = parse(key, value)?,
            "tau" => self.loss.tau = parse(key, value)?,
            "mid_window" => self.loss.window = parse(key, value)?,
            "mid_stride" => self.loss.stride = parse(key, value)?,
            "detach_previous" => self.loss.detach_previous = parse(key, value)?,
            "channels" => self.channels = parse(key, value)?,
            "ufm_layers" => self.ufm_layers = parse(key, value)?,
            "mfm_layers" => self.mfm_layers = parse(key, value)?,
            "attention" => self.attention = parse(key, value)?,
            "reduction" => self.reduction = parse(key, value)?,
            "kernel_width" => self.kernel_width = parse(key, value)?,
            "use_ufm" => self.ablation.use_ufm = parse(key, value)?,
            "use_fe" => self.ablation.use_fe = parse(key, value)?,
            "use_mfm" => self.ablation.use_mfm = parse(key, value)?,
            "fusion" => {
                self.ablation.fusion = match value {
                    "attention" => FusionMode::Attention,
                    "simple" => FusionMode::Simple,
                    _ => {
                        return Err(Error::Config(format!(
                            "fusion must be attention or simple, got {value:?}"
                        )))
                    }
                }
            }
            "eval_every" => self.eval_every = parse(key, value)?,
            "eval_window" | "eval_stride" | "full_sequence" => {
                let (mut length, mut stride) = match self.eval {
                    EvalMode::Window { length, stride } => (length, stride),
                    EvalMode::Full => (16, 8),
                };
                match key {
                    "eval_window" => length = parse(key, value)?,
                    "eval_stride" => stride = parse(key, value)?,
                    _ => {
                        if parse::<bool>(key, value)? {
                            self.eval = EvalMode::Full;
                            return Ok(());
                        }
                    }
                }
                self.eval = EvalMode::Window { length, stride };
            }
            "checkpoint" => self.checkpoint = (!value.is_empty()).then(|| PathBuf::from(value)),
            "log" => self.log = (!value.is_empty()).then(|| PathBuf::from(value)),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// `key = value` lines in [`TRAIN_KEYS`] order.
    pub fn to_text(&self) -> String {
        let (window, stride, full) = match self.eval {
            EvalMode::Window { length, stride } => (length, stride, false),
            EvalMode::Full => (16, 8, true),
        };
        let path = |p: &Option<PathBuf>| {
            p.as_ref()
                .map_or(String::new(), |p| p.display().to_string())
        };
        let values = [
            self.seed.to_string(),
            self.epochs.to_string(),
            self.sequences_per_epoch.to_string(),
            self.lr.to_string(),
            self.clip_norm.to_string(),
            self.loss.smoothing.to_string(),
            self.loss.midpoint.to_string(),
            self.loss.tau.to_string(),
            self.loss.window.to_string(),
            self.loss.stride.to_string(),
            self.loss.detach_previous.to_string(),
            self.channels.to_string(),
            self.ufm_layers.to_string(),
            self.mfm_layers.to_string(),
            self.attention.to_string(),
            self.reduction.to_string(),
            self.kernel_width.to_string(),
            self.ablation.use_ufm.to_string(),
            self.ablation.use_fe.to_string(),
            self.ablation.use_mfm.to_string(),
            match self.ablation.fusion {
                FusionMode::Attention => "attention".into(),
                FusionMode::Simple => "simple".into(),
            },
            self.eval_every.to_string(),
            window.to_string(),
            stride.to_string(),
            full.to_string(),
            path(&self.checkpoint),
            path(&self.log),
        ];
        let mut out = String::new();
        for (k, v) in TRAIN_KEYS.iter().zip(values) {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }

    /// Parses `key = value` lines; `#` starts a comment.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (key, value) in parse_key_values(text)? {
            cfg.set(&key, &value)?;
        }
        Ok(cfg)
    }
}

/// Splits `key = value` lines, skipping blanks and `#` comments.
pub fn parse_key_values(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| {
            Error::Config(format!("line {}: expected key = value, got {raw:?}", n + 1))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    /// Means over the epoch's training sequences.
    pub terms: LossTerms<f64>,
    pub val_frame_accuracy: Option<f64>,
    pub val_mji: Option<f64>,
}

pub const LOG_HEADER: [&str; 7] = [
    "epoch",
    "ce",
    "smoothing",
    "midpoint",
    "total",
    "val_frame_accuracy",
    "val_mji",
];

/// Appends one row per epoch; writes the header into an empty file.
pub fn append_log(path: &Path, rows: &[EpochLog]) -> Result<()> {
    let file = OpenOptions::new()
        .create(true)
        .append(true)
        .open(path)
        .map_err(|e| Error::io(path, e))?;
    let empty = file.metadata().map_err(|e| Error::io(path, e))?.len() == 0;
    let mut w = csv::Writer::from_writer(file);
    if empty {
        w.write_record(LOG_HEADER)?;
    }
    let opt = |v: Option<f64>| v.map_or(String::new(), |v| v.to_string());
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            r.terms.ce.to_string(),
            r.terms.smoothing.to_string(),
            r.terms.midpoint.to_string(),
            r.terms.total.to_string(),
            opt(r.val_frame_accuracy),
            opt(r.val_mji),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

#[derive(Debug)]
pub struct TrainOutcome {
    /// Best model by validation MJI, or the final one without validation data.
    pub model: TmmfModel<f64>,
    pub best_epoch: usize,
    pub log: Vec<EpochLog>,
}

/// One optimisation step on a single sequence; returns its loss terms.
pub fn train_step(
    model: &mut TmmfModel<f64>,
    adam: &mut Adam<f64>,
    sequence: &crate::data::Sequence,
    weights: &LossWeights<f64>,
    clip_norm: f64,
) -> Result<LossTerms<f64>> {
    let mut g = Graph::new();
    let out = model.forward(&mut g, &sequence.streams)?;
    let (loss, terms) = total_loss(&mut g, out, &sequence.labels, weights)?;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            sequence: sequence.id.clone(),
            ce: terms.ce,
            smoothing: terms.smoothing,
            midpoint: terms.midpoint,
        });
    }
    g.backward(loss)?;
    let store = model.params_mut();
    store.zero_grads();
    g.accumulate_param_grads(store)?;
    clip_grad_norm(store, clip_norm);
    adam.step(store)?;
    Ok(terms)
}

pub fn train(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val: Option<&Dataset>,
) -> Result<TrainOutcome> {
    train_with(cfg, train_set, val, |_| {})
}

/// Trains with batch size 1 in a seeded shuffled order, calling `on_epoch`
/// after every epoch.
pub fn train_with(
    cfg: &TrainConfig,
    train_set: &Dataset,
    val: Option<&Dataset>,
    mut on_epoch: impl FnMut(&EpochLog),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::Data("training set is empty".into()));
    }
    train_set.validate()?;
    if let Some(v) = val {
        if v.input_dims != train_set.input_dims || v.classes != train_set.classes {
            return Err(Error::Data(
                "validation set does not match the training set layout".into(),
            ));
        }
    }
    let mut model = TmmfModel::new(
        cfg.model_config(&train_set.input_dims, train_set.classes),
        cfg.seed,
    )?;
    let mut adam = Adam::new(
        model.params(),
        AdamConfig {
            lr: cfg.lr,
            ..AdamConfig::default()
        },
    );
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(0x5eed);
    let per_epoch = match cfg.sequences_per_epoch {
        0 => train_set.len(),
        n => n.min(train_set.len()),
    };
    let config_text = cfg.to_text();
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut best: Option<(f64, usize, TmmfModel<f64>)> = None;
    let mut log = Vec::with_capacity(cfg.epochs);

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = LossTerms::<f64>::default();
        for &i in &order[..per_epoch] {
            let t = train_step(
                &mut model,
                &mut adam,
                &train_set.sequences[i],
                &cfg.loss,
                cfg.clip_norm,
            )?;
            sum.ce += t.ce;
            sum.smoothing += t.smoothing;
            sum.midpoint += t.midpoint;
            sum.total += t.total;
        }
        let n = per_epoch as f64;
        let mut row = EpochLog {
            epoch,
            terms: LossTerms {
                ce: sum.ce / n,
                smoothing: sum.smoothing / n,
                midpoint: sum.midpoint / n,
                total: sum.total / n,
            },
            val_frame_accuracy: None,
            val_mji: None,
        };
        if let Some(v) = val.filter(|_| epoch % cfg.eval_every == 0 || epoch == cfg.epochs) {
            let report = evaluate(&model, v, cfg.eval)?;
            row.val_frame_accuracy = Some(report.frame_accuracy);
            row.val_mji = Some(report.mean_jaccard);
            if best
                .as_ref()
                .is_none_or(|(mji, _, _)| report.mean_jaccard > *mji)
            {
                if let Some(path) = &cfg.checkpoint {
                    save(&model, path, Some(&config_text))?;
                }
                best = Some((report.mean_jaccard, epoch, model.clone()));
            }
        }
        if let Some(path) = &cfg.log {
            append_log(path, std::slice::from_ref(&row))?;
        }
        on_epoch(&row);
        log.push(row);
    }

    let (model, best_epoch) = match best {
        Some((_, epoch, m)) => (m, epoch),
        None => {
            if let Some(path) = &cfg.checkpoint {
                save(&model, path, Some(&config_text))?;
            }
            (model, cfg.epochs)
        }
    };
    Ok(TrainOutcome {
        model,
        best_epoch,
        log,
    })
}

/// Predicted labels for every sequence, in dataset order.
pub fn predict_dataset<S: Scalar>(
    model: &TmmfModel<S>,
    data: &Dataset,
    mode: EvalMode,
) -> Result<Vec<Vec<usize>>> {
    if data.input_dims != model.config().input_dims {
        return Err(Error::Load(format!(
            "model expects input dims {:?}, dataset has {:?}",
            model.config().input_dims,
            data.input_dims
        )));
    }
    if data.classes != model.config().classes {
        return Err(Error::Load(format!(
            "model has {} classes, dataset has {}",
            model.config().classes,
            data.classes
        )));
    }
    data.sequences
        .par_iter()
        .map(|s| {
            let streams: Vec<_> = s.streams.iter().map(|t| t.cast::<S>()).collect();
            match mode {
                EvalMode::Full => Ok(model.predict(&streams)?.labels),
                EvalMode::Window { length, stride } => {
                    Ok(sliding_window_predict(model, &streams, length, stride)?.0)
                }
            }
        })
        .collect()
}

pub fn evaluate<S: Scalar>(
    model: &TmmfModel<S>,
    data: &Dataset,
    mode: EvalMode,
) -> Result<MetricReport> {
    let pred = predict_dataset(model, data, mode)?;
    let gt: Vec<Vec<usize>> = data.sequences.iter().map(|s| s.labels.clone()).collect();
    mean_jaccard_index(&gt, &pred, false)
}
