//! Command-line driver: `generate`, `train`, `eval` and `timeline`.
//!
//! Every subcommand resolves its settings as defaults, then the `--config`
//! file (`key = value` lines, `#` comments), then `TMMF_SEED`, then flags
//! given on the command line, and writes the result next to its outputs.

mod timeline;

pub use timeline::{class_color, frame_x, render_csv, render_svg, runs, LABEL_WIDTH, STRIP_WIDTH};

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::parser::ValueSource;
use clap::{ArgMatches, Args, CommandFactory, FromArgMatches, Parser, Subcommand};

use crate::data::{read_dataset, read_labels, write_dataset, write_labels, SyntheticSpec};
use crate::error::{Error, Result};
use crate::model::load;
use crate::training::{
    append_log, parse_key_values, predict_dataset, train_with, EvalMode, TrainConfig,
};

pub const SEED_ENV: &str = "TMMF_SEED";

#[derive(Parser, Debug)]
#[command(
    name = "tmmf",
    version,
    about = "Temporal multi-modal fusion for continuous gesture recognition"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write a synthetic multi-modal dataset (feature files, labels, manifests).
    Generate(GenerateArgs),
    /// Train a model and keep the best checkpoint by validation MJI.
    Train(TrainArgs),
    /// Score a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Render ground-truth and predicted label strips.
    Timeline(TimelineArgs),
}

#[derive(Args, Debug)]
pub struct GenerateArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, default_value = "data")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 2)]
    pub modes: usize,
    /// Gesture classes, background excluded.
    #[arg(long, default_value_t = 5)]
    pub classes: usize,
    /// Feature dimension per mode: one value for all modes or a comma list.
    #[arg(long, default_value = "32")]
    pub dims: String,
    #[arg(long, default_value_t = 200)]
    pub train: usize,
    #[arg(long, default_value_t = 40)]
    pub val: usize,
    #[arg(long, default_value_t = 80)]
    pub min_frames: usize,
    #[arg(long, default_value_t = 160)]
    pub max_frames: usize,
    #[arg(long, default_value_t = 1.0)]
    pub noise: f64,
    #[arg(long, default_value_t = 1.0)]
    pub signal: f64,
    #[arg(long, default_value_t = 3)]
    pub ramp: usize,
    #[arg(long, default_value_t = 12)]
    pub gesture_min: usize,
    #[arg(long, default_value_t = 24)]
    pub gesture_max: usize,
    #[arg(long, default_value_t = 6)]
    pub gap_min: usize,
    #[arg(long, default_value_t = 14)]
    pub gap_max: usize,
    /// Informative classes per mode, e.g. "1,2,3;3,4,5"; "all" marks every class in every mode.
    #[arg(long, default_value = "all")]
    pub informative: String,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Training manifest.
    #[arg(long = "train")]
    pub train_manifest: Option<PathBuf>,
    /// Validation manifest.
    #[arg(long = "val")]
    pub val_manifest: Option<PathBuf>,
    /// Output directory for checkpoint, log and resolved config.
    #[arg(long, default_value = "run")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 20)]
    pub epochs: usize,
    /// Sequences per epoch; 0 uses the whole training set.
    #[arg(long, default_value_t = 0)]
    pub sequences_per_epoch: usize,
    #[arg(long, default_value_t = 0.0005)]
    pub lr: f64,
    #[arg(long, default_value_t = 10.0)]
    pub clip_norm: f64,
    /// Smoothing loss weight.
    #[arg(long, default_value_t = 0.15)]
    pub lambda1: f64,
    /// Mid-point loss weight.
    #[arg(long, default_value_t = 0.25)]
    pub lambda2: f64,
    /// Smoothing truncation threshold.
    #[arg(long, default_value_t = 4.0)]
    pub tau: f64,
    #[arg(long, default_value_t = 16)]
    pub mid_window: usize,
    #[arg(long, default_value_t = 8)]
    pub mid_stride: usize,
    #[arg(long, default_value_t = 64)]
    pub channels: usize,
    /// Residual layers per mode encoder.
    #[arg(long, default_value_t = 12)]
    pub ufm_layers: usize,
    /// Residual layers after fusion.
    #[arg(long, default_value_t = 10)]
    pub mfm_layers: usize,
    /// Attention level.
    #[arg(long, default_value_t = 8)]
    pub attention: usize,
    /// Gate reduction ratio.
    #[arg(long, default_value_t = 4)]
    pub reduction: usize,
    #[arg(long, default_value_t = 3)]
    pub kernel_width: usize,
    /// Fusion variant: attention or simple.
    #[arg(long, default_value = "attention")]
    pub fusion: String,
    /// Drop the channel gate [default: gate on].
    #[arg(long)]
    pub no_fe: bool,
    /// Feed features straight into fusion [default: encoders on].
    #[arg(long)]
    pub no_ufm: bool,
    /// Classify fused frames without the fused encoder [default: encoder on].
    #[arg(long)]
    pub no_mfm: bool,
    #[arg(long, default_value_t = 1)]
    pub eval_every: usize,
    /// Validation window length.
    #[arg(long, default_value_t = 16)]
    pub eval_window: usize,
    /// Validation window stride.
    #[arg(long, default_value_t = 8)]
    pub eval_stride: usize,
    /// Validate on whole sequences instead of windows [default: off].
    #[arg(long)]
    pub full_sequence: bool,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Key-value config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset manifest.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory for the report and predictions.
    #[arg(long, default_value = "eval")]
    pub out: PathBuf,
    /// Window length.
    #[arg(long = "l", default_value_t = 16)]
    pub window: usize,
    /// Window stride.
    #[arg(long = "s", default_value_t = 8)]
    pub stride: usize,
    /// Score whole sequences in one pass [default: off].
    #[arg(long)]
    pub full_sequence: bool,
    /// Count the background class in the Jaccard index [default: off].
    #[arg(long)]
    pub include_bg: bool,
}

#[derive(Args, Debug)]
pub struct TimelineArgs {
    /// Prediction CSV (frame_index,label); pairs with the matching --gt.
    #[arg(long)]
    pub pred: Vec<PathBuf>,
    /// Ground-truth CSV (frame_index,label).
    #[arg(long)]
    pub gt: Vec<PathBuf>,
    /// Directory of `<id>.csv` predictions, as written by `eval`.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Directory of `<id>.labels.csv` ground truth, as written by `generate`.
    #[arg(long)]
    pub gt_dir: Option<PathBuf>,
    #[arg(long, default_value = "timeline")]
    pub out: PathBuf,
}

fn given(m: &ArgMatches, id: &str) -> bool {
    m.value_source(id) == Some(ValueSource::CommandLine)
}

fn read_config(path: &Option<PathBuf>) -> Result<Vec<(String, String)>> {
    match path {
        Some(p) => parse_key_values(&fs::read_to_string(p).map_err(|e| Error::io(p, e))?),
        None => Ok(Vec::new()),
    }
}

fn env_seed() -> Result<Option<String>> {
    match std::env::var(SEED_ENV) {
        Ok(v) => {
            v.trim().parse::<u64>().map_err(|_| {
                Error::Config(format!("{SEED_ENV} must be an unsigned integer, got {v:?}"))
            })?;
            Ok(Some(v.trim().to_string()))
        }
        Err(_) => Ok(None),
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Settings of `generate` after resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct GenerateConfig {
    pub out: PathBuf,
    pub train: usize,
    pub val: usize,
    pub frames: (usize, usize),
    pub dims: String,
    pub informative: String,
    pub spec: SyntheticSpec,
}

impl GenerateConfig {
    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let num = |v: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        };
        let real = |v: &str| -> Result<f64> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        };
        let s = &mut self.spec;
        match key {
            "out" => self.out = PathBuf::from(value),
            "seed" => {
                s.seed = value
                    .parse()
                    .map_err(|_| Error::Config(format!("invalid value {value:?} for seed")))?
            }
            "modes" => s.input_dims = vec![0; num(value)?],
            "classes" => s.num_classes = num(value)?,
            "dims" => self.dims = value.to_string(),
            "train" => self.train = num(value)?,
            "val" => self.val = num(value)?,
            "min_frames" => self.frames.0 = num(value)?,
            "max_frames" => self.frames.1 = num(value)?,
            "noise" => s.noise = real(value)?,
            "signal" => s.signal = vec![real(value)?],
            "ramp" => s.ramp = num(value)?,
            "gesture_min" => s.gesture_len.0 = num(value)?,
            "gesture_max" => s.gesture_len.1 = num(value)?,
            "gap_min" => s.gap_len.0 = num(value)?,
            "gap_max" => s.gap_len.1 = num(value)?,
            "informative" => self.informative = value.to_string(),
            _ => return Err(Error::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Expands `dims`, `signal` and `informative` to one entry per mode.
    fn finish(&mut self) -> Result<()> {
        let modes = self.spec.input_dims.len();
        if modes == 0 {
            return Err(Error::Config("modes must be at least 1".into()));
        }
        let dims = self
            .dims
            .split(',')
            .map(|d| {
                d.trim()
                    .parse::<usize>()
                    .map_err(|_| Error::Config(format!("invalid dims {:?}", self.dims)))
            })
            .collect::<Result<Vec<_>>>()?;
        self.spec.input_dims = match dims.len() {
            1 => vec![dims[0]; modes],
            n if n == modes => dims,
            n => return Err(Error::Config(format!("{n} dims given for {modes} modes"))),
        };
        let signal = self.spec.signal.first().copied().unwrap_or(1.0);
        self.spec.signal = vec![signal; modes];
        let classes = self.spec.num_classes;
        self.spec.informative = if self.informative.trim() == "all" {
            vec![vec![true; classes]; modes]
        } else {
            let rows: Vec<&str> = self.informative.split(';').collect();
            if rows.len() != modes {
                return Err(Error::Config(format!(
                    "informative lists {} modes, dataset has {modes}",
                    rows.len()
                )));
            }
            rows.iter()
                .map(|row| {
                    let mut mask = vec![false; classes];
                    for c in row.split(',').map(str::trim).filter(|c| !c.is_empty()) {
                        let c: usize = c.parse().map_err(|_| {
                            Error::Config(format!("invalid class {c:?} in informative"))
                        })?;
                        if c == 0 || c > classes {
                            return Err(Error::Config(format!(
                                "informative class {c} outside 1..={classes}"
                            )));
                        }
                        mask[c - 1] = true;
                    }
                    Ok(mask)
                })
                .collect::<Result<_>>()?
        };
        self.spec.validate()
    }

    pub fn to_text(&self) -> String {
        let s = &self.spec;
        let dims: Vec<String> = s.input_dims.iter().map(|d| d.to_string()).collect();
        let mut out = String::new();
        for (k, v) in [
            ("out", self.out.display().to_string()),
            ("seed", s.seed.to_string()),
            ("modes", s.input_dims.len().to_string()),
            ("classes", s.num_classes.to_string()),
            ("dims", dims.join(",")),
            ("train", self.train.to_string()),
            ("val", self.val.to_string()),
            ("min_frames", self.frames.0.to_string()),
            ("max_frames", self.frames.1.to_string()),
            ("noise", s.noise.to_string()),
            (
                "signal",
                s.signal.first().copied().unwrap_or(1.0).to_string(),
            ),
            ("ramp", s.ramp.to_string()),
            ("gesture_min", s.gesture_len.0.to_string()),
            ("gesture_max", s.gesture_len.1.to_string()),
            ("gap_min", s.gap_len.0.to_string()),
            ("gap_max", s.gap_len.1.to_string()),
            ("informative", self.informative.clone()),
        ] {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}

impl GenerateArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<GenerateConfig> {
        let mut cfg = GenerateConfig {
            out: PathBuf::new(),
            train: 0,
            val: 0,
            frames: (0, 0),
            dims: String::new(),
            informative: String::new(),
            spec: SyntheticSpec::new(1, vec![1], 0),
        };
        let flags = [
            ("out", self.out.display().to_string()),
            ("seed", self.seed.to_string()),
            ("modes", self.modes.to_string()),
            ("classes", self.classes.to_string()),
            ("dims", self.dims.clone()),
            ("train", self.train.to_string()),
            ("val", self.val.to_string()),
            ("min_frames", self.min_frames.to_string()),
            ("max_frames", self.max_frames.to_string()),
            ("noise", self.noise.to_string()),
            ("signal", self.signal.to_string()),
            ("ramp", self.ramp.to_string()),
            ("gesture_min", self.gesture_min.to_string()),
            ("gesture_max", self.gesture_max.to_string()),
            ("gap_min", self.gap_min.to_string()),
            ("gap_max", self.gap_max.to_string()),
            ("informative", self.informative.clone()),
        ];
        for (k, v) in &flags {
            cfg.set(k, v)?;
        }
        for (k, v) in read_config(&self.config)? {
            cfg.set(&k, &v)?;
        }
        if let Some(seed) = env_seed()? {
            cfg.set("seed", &seed)?;
        }
        for (k, v) in flags.iter().filter(|(k, _)| given(m, k)) {
            cfg.set(k, v)?;
        }
        cfg.finish()?;
        Ok(cfg)
    }
}

impl TrainArgs {
    pub fn resolve(
        &self,
        m: &ArgMatches,
    ) -> Result<(TrainConfig, PathBuf, PathBuf, Option<PathBuf>)> {
        let mut cfg = TrainConfig::default();
        let mut out = self.out.clone();
        let mut train = self.train_manifest.clone();
        let mut val = self.val_manifest.clone();
        for (k, v) in read_config(&self.config)? {
            match k.as_str() {
                "out" => out = PathBuf::from(v),
                "train" => train = Some(PathBuf::from(v)),
                "val" => val = Some(PathBuf::from(v)),
                _ => cfg.set(&k, &v)?,
            }
        }
        if let Some(seed) = env_seed()? {
            cfg.set("seed", &seed)?;
        }
        let flags = [
            ("seed", self.seed.to_string()),
            ("epochs", self.epochs.to_string()),
            ("sequences_per_epoch", self.sequences_per_epoch.to_string()),
            ("lr", self.lr.to_string()),
            ("clip_norm", self.clip_norm.to_string()),
            ("lambda1", self.lambda1.to_string()),
            ("lambda2", self.lambda2.to_string()),
            ("tau", self.tau.to_string()),
            ("mid_window", self.mid_window.to_string()),
            ("mid_stride", self.mid_stride.to_string()),
            ("channels", self.channels.to_string()),
            ("ufm_layers", self.ufm_layers.to_string()),
            ("mfm_layers", self.mfm_layers.to_string()),
            ("attention", self.attention.to_string()),
            ("reduction", self.reduction.to_string()),
            ("kernel_width", self.kernel_width.to_string()),
            ("fusion", self.fusion.clone()),
            ("eval_every", self.eval_every.to_string()),
            ("eval_window", self.eval_window.to_string()),
            ("eval_stride", self.eval_stride.to_string()),
        ];
        for (k, v) in flags.iter().filter(|(k, _)| given(m, k)) {
            cfg.set(k, v)?;
        }
        for (id, key) in [
            ("no_fe", "use_fe"),
            ("no_ufm", "use_ufm"),
            ("no_mfm", "use_mfm"),
        ] {
            if given(m, id) {
                cfg.set(key, "false")?;
            }
        }
        if given(m, "full_sequence") {
            cfg.set("full_sequence", "true")?;
        }
        if given(m, "out") {
            out = self.out.clone();
        }
        cfg.checkpoint = Some(out.join("model.tmmf"));
        cfg.log = Some(out.join("train_log.csv"));
        cfg.validate()?;
        let train = train.ok_or_else(|| {
            Error::Config("no training manifest: pass --train or set train".into())
        })?;
        Ok((cfg, out, train, val))
    }
}

/// Settings of `eval` after resolution.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalConfig {
    pub checkpoint: PathBuf,
    pub data: PathBuf,
    pub out: PathBuf,
    pub mode: EvalMode,
    pub include_bg: bool,
}

impl EvalConfig {
    pub fn to_text(&self) -> String {
        let (window, stride, full) = match self.mode {
            EvalMode::Window { length, stride } => (length, stride, false),
            EvalMode::Full => (0, 0, true),
        };
        format!(
            "checkpoint = {}\ndata = {}\nout = {}\nl = {window}\ns = {stride}\nfull_sequence = {full}\ninclude_bg = {}\n",
            self.checkpoint.display(),
            self.data.display(),
            self.out.display(),
            self.include_bg
        )
    }
}

impl EvalArgs {
    pub fn resolve(&self, m: &ArgMatches) -> Result<EvalConfig> {
        let mut checkpoint = self.checkpoint.clone();
        let mut data = self.data.clone();
        let mut out = self.out.clone();
        let (mut window, mut stride) = (self.window, self.stride);
        let (mut full, mut include_bg) = (self.full_sequence, self.include_bg);
        let flag = |v: &str, key: &str| -> Result<bool> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        };
        let count = |v: &str, key: &str| -> Result<usize> {
            v.parse()
                .map_err(|_| Error::Config(format!("invalid value {v:?} for {key}")))
        };
        for (k, v) in read_config(&self.config)? {
            match k.as_str() {
                "checkpoint" if !given(m, "checkpoint") => checkpoint = Some(PathBuf::from(v)),
                "data" if !given(m, "data") => data = Some(PathBuf::from(v)),
                "out" if !given(m, "out") => out = PathBuf::from(v),
                "l" if !given(m, "window") => window = count(&v, &k)?,
                "s" if !given(m, "stride") => stride = count(&v, &k)?,
                "full_sequence" if !given(m, "full_sequence") => full = flag(&v, &k)?,
                "include_bg" if !given(m, "include_bg") => include_bg = flag(&v, &k)?,
                "checkpoint" | "data" | "out" | "l" | "s" | "full_sequence" | "include_bg" => {}
                _ => return Err(Error::Config(format!("unknown key {k:?}"))),
            }
        }
        let mode = if full {
            EvalMode::Full
        } else {
            if window == 0 || stride == 0 || stride > window {
                return Err(Error::Config(format!(
                    "need 0 < s <= l, got l = {window}, s = {stride}"
                )));
            }
            EvalMode::Window {
                length: window,
                stride,
            }
        };
        Ok(EvalConfig {
            checkpoint: checkpoint
                .ok_or_else(|| Error::Config("no checkpoint: pass --checkpoint".into()))?,
            data: data.ok_or_else(|| Error::Config("no dataset: pass --data".into()))?,
            out,
            mode,
            include_bg,
        })
    }
}

fn cmd_generate(args: &GenerateArgs, m: &ArgMatches) -> Result<()> {
    let cfg = args.resolve(m)?;
    create_dir(&cfg.out)?;
    let train = cfg.spec.generate(cfg.train, cfg.frames, 0)?;
    let train_path = write_dataset(&cfg.out, &train, "train")?;
    println!("{}", train_path.display());
    if cfg.val > 0 {
        let val = cfg.spec.generate(cfg.val, cfg.frames, 1)?;
        println!("{}", write_dataset(&cfg.out, &val, "val")?.display());
    }
    write_text(&cfg.out.join("generate.conf"), &cfg.to_text())
}

fn cmd_train(args: &TrainArgs, m: &ArgMatches) -> Result<()> {
    let (cfg, out, train_path, val_path) = args.resolve(m)?;
    let train = read_dataset(&train_path)?;
    let val = val_path.as_ref().map(read_dataset).transpose()?;
    create_dir(&out)?;
    let mut text = cfg.to_text();
    let _ = writeln!(text, "train = {}", train_path.display());
    if let Some(v) = &val_path {
        let _ = writeln!(text, "val = {}", v.display());
    }
    let _ = writeln!(text, "out = {}", out.display());
    write_text(&out.join("train.conf"), &text)?;
    if let Some(log) = &cfg.log {
        if log.exists() {
            fs::remove_file(log).map_err(|e| Error::io(log, e))?;
        }
        append_log(log, &[])?;
    }
    let outcome = train_with(&cfg, &train, val.as_ref(), |r| {
        let opt = |v: Option<f64>| v.map_or("-".to_string(), |v| format!("{v:.4}"));
        eprintln!(
            "epoch {:>3}  loss {:.4} (ce {:.4}, sm {:.4}, mid {:.4})  val acc {}  val mji {}",
            r.epoch,
            r.terms.total,
            r.terms.ce,
            r.terms.smoothing,
            r.terms.midpoint,
            opt(r.val_frame_accuracy),
            opt(r.val_mji)
        );
    })?;
    println!(
        "{}",
        cfg.checkpoint.as_ref().expect("set by resolve").display()
    );
    eprintln!("best epoch {}", outcome.best_epoch);
    Ok(())
}

fn cmd_eval(args: &EvalArgs, m: &ArgMatches) -> Result<()> {
    let cfg = args.resolve(m)?;
    let (model, _) = load::<f64>(&cfg.checkpoint)?;
    let data = read_dataset(&cfg.data)?;
    let pred = predict_dataset(&model, &data, cfg.mode)?;
    let gt: Vec<Vec<usize>> = data.sequences.iter().map(|s| s.labels.clone()).collect();
    let report = crate::metrics::mean_jaccard_index(&gt, &pred, cfg.include_bg)?;
    let pred_dir = cfg.out.join("predictions");
    create_dir(&pred_dir)?;
    for (s, p) in data.sequences.iter().zip(&pred) {
        write_labels(pred_dir.join(format!("{}.csv", s.id)), p)?;
    }
    write_text(&cfg.out.join("report.txt"), &report.to_key_values())?;
    write_text(&cfg.out.join("report.csv"), &report.to_csv()?)?;
    write_text(&cfg.out.join("eval.conf"), &cfg.to_text())?;
    print!("{}", report.to_key_values());
    Ok(())
}

fn timeline_pairs(args: &TimelineArgs) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    if args.pred.len() != args.gt.len() {
        return Err(Error::Config(format!(
            "{} --pred files but {} --gt files",
            args.pred.len(),
            args.gt.len()
        )));
    }
    let mut pairs: Vec<(String, PathBuf, PathBuf)> = args
        .pred
        .iter()
        .zip(&args.gt)
        .map(|(p, g)| {
            let name = p
                .file_stem()
                .map_or("sequence".into(), |s| s.to_string_lossy().into_owned());
            (name, p.clone(), g.clone())
        })
        .collect();
    match (&args.pred_dir, &args.gt_dir) {
        (Some(pd), Some(gd)) => {
            let mut found: Vec<_> = fs::read_dir(pd)
                .map_err(|e| Error::io(pd, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| p.extension().is_some_and(|x| x == "csv"))
                .collect();
            found.sort();
            for p in found {
                let id = p
                    .file_stem()
                    .expect("has extension")
                    .to_string_lossy()
                    .into_owned();
                pairs.push((id.clone(), p, gd.join(format!("{id}.labels.csv"))));
            }
        }
        (None, None) => {}
        _ => return Err(Error::Config("--pred-dir and --gt-dir go together".into())),
    }
    if pairs.is_empty() {
        return Err(Error::Config(
            "nothing to render: pass --pred/--gt or --pred-dir/--gt-dir".into(),
        ));
    }
    Ok(pairs)
}

fn cmd_timeline(args: &TimelineArgs) -> Result<()> {
    let pairs = timeline_pairs(args)?;
    create_dir(&args.out)?;
    let mut conf = format!("out = {}\n", args.out.display());
    for (name, pred_path, gt_path) in &pairs {
        let pred = read_labels(pred_path)?;
        let gt = read_labels(gt_path)?;
        let svg = render_svg(name, &gt, &pred).map_err(|e| Error::Data(format!("{name}: {e}")))?;
        write_text(&args.out.join(format!("{name}.svg")), &svg)?;
        write_text(
            &args.out.join(format!("{name}.timeline.csv")),
            &render_csv(&gt, &pred)?,
        )?;
        let _ = writeln!(conf, "pair = {} {}", pred_path.display(), gt_path.display());
    }
    write_text(&args.out.join("timeline.conf"), &conf)?;
    println!("{}", args.out.display());
    Ok(())
}

/// Parses `args` (program name first) and runs the subcommand.
///
/// `Ok(Some(text))` carries help or version output.
pub fn run_from<I, T>(args: I) -> Result<Option<String>>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let matches = match Cli::command().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            return match e.kind() {
                ErrorKind::DisplayHelp
                | ErrorKind::DisplayVersion
                | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand => {
                    Ok(Some(e.render().to_string()))
                }
                _ => {
                    let text = e.render().to_string();
                    let line = text
                        .lines()
                        .find(|l| !l.trim().is_empty())
                        .unwrap_or("invalid arguments")
                        .trim_start_matches("error: ")
                        .to_string();
                    Err(Error::Usage(line))
                }
            };
        }
    };
    let cli = Cli::from_arg_matches(&matches).map_err(|e| Error::Usage(e.to_string()))?;
    let (_, sub) = matches.subcommand().expect("subcommand is required");
    match &cli.command {
        Command::Generate(a) => cmd_generate(a, sub)?,
        Command::Train(a) => cmd_train(a, sub)?,
        Command::Eval(a) => cmd_eval(a, sub)?,
        Command::Timeline(a) => cmd_timeline(a)?,
    }
    Ok(None)
}

/// Entry point for the binary; returns the process exit code.
pub fn main_with<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run_from(args) {
        Ok(Some(text)) => {
            print!("{text}");
            0
        }
        Ok(None) => 0,
        Err(e) => {
            let message = e.to_string().replace('\n', " ");
            eprintln!("error[{}]: {message}", e.class());
            match e {
                Error::Usage(_) => 2,
                _ => 1,
            }
        }
    }
}
