//! Synthetic multi-modal gesture streams and on-disk dataset IO.
//!
//! Each mode gets one prototype vector per class. A class that is not
//! informative in a mode shares a single "some gesture" prototype there, so
//! only the modes that know a class can tell it apart. Frames are the
//! prototype of their segment plus Gaussian noise, with a linear cross-fade
//! over the first `ramp` frames after each boundary.

mod io;

pub use io::{
    decode_features, encode_features, read_dataset, read_feature_file, read_labels, write_dataset,
    write_feature_file, write_labels, FEATURE_HEADER_LEN, FEATURE_MAGIC, FEATURE_VERSION,
};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::metrics::BACKGROUND;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    pub id: String,
    /// One `[T, d_in]` stream per mode.
    pub streams: Vec<Tensor<f64>>,
    pub labels: Vec<usize>,
}

impl Sequence {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Same frames restricted to the listed modes.
    pub fn select_modes(&self, modes: &[usize]) -> Result<Sequence> {
        let streams = modes
            .iter()
            .map(|&m| {
                self.streams
                    .get(m)
                    .cloned()
                    .ok_or_else(|| Error::Parameter(format!("no mode {m} in sequence {}", self.id)))
            })
            .collect::<Result<_>>()?;
        Ok(Sequence {
            id: self.id.clone(),
            streams,
            labels: self.labels.clone(),
        })
    }

    pub fn check(&self, input_dims: &[usize], classes: usize) -> Result<()> {
        if self.streams.len() != input_dims.len() {
            return Err(Error::Data(format!(
                "sequence {} has {} modes, expected {}",
                self.id,
                self.streams.len(),
                input_dims.len()
            )));
        }
        for (m, (s, &d)) in self.streams.iter().zip(input_dims).enumerate() {
            if s.shape() != [self.labels.len(), d] {
                return Err(Error::Sync(format!(
                    "sequence {} mode {m} has shape {:?}, expected [{}, {d}]",
                    self.id,
                    s.shape(),
                    self.labels.len()
                )));
            }
        }
        if let Some(&bad) = self.labels.iter().find(|&&y| y >= classes) {
            return Err(Error::Data(format!(
                "sequence {} has label {bad} outside 0..{classes}",
                self.id
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// Class count including background.
    pub classes: usize,
    pub input_dims: Vec<usize>,
    pub sequences: Vec<Sequence>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    pub fn modes(&self) -> usize {
        self.input_dims.len()
    }

    pub fn validate(&self) -> Result<()> {
        self.sequences
            .iter()
            .try_for_each(|s| s.check(&self.input_dims, self.classes))
    }

    pub fn select_modes(&self, modes: &[usize]) -> Result<Dataset> {
        Ok(Dataset {
            classes: self.classes,
            input_dims: modes.iter().map(|&m| self.input_dims[m]).collect(),
            sequences: self
                .sequences
                .iter()
                .map(|s| s.select_modes(modes))
                .collect::<Result<_>>()?,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticSpec {
    /// Gesture classes, background excluded.
    pub num_classes: usize,
    pub input_dims: Vec<usize>,
    /// Per-mode standard deviation of prototype entries.
    pub signal: Vec<f64>,
    pub noise: f64,
    pub gesture_len: (usize, usize),
    pub gap_len: (usize, usize),
    pub ramp: usize,
    /// `informative[m][c - 1]`: gesture class `c` is distinguishable in mode `m`.
    pub informative: Vec<Vec<bool>>,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Every class informative in every mode.
    pub fn new(num_classes: usize, input_dims: Vec<usize>, seed: u64) -> Self {
        let modes = input_dims.len();
        SyntheticSpec {
            num_classes,
            signal: vec![1.0; modes],
            informative: vec![vec![true; num_classes]; modes],
            input_dims,
            noise: 1.0,
            gesture_len: (12, 24),
            gap_len: (6, 14),
            ramp: 3,
            seed,
        }
    }

    /// Marks exactly the listed gesture classes (1-based) informative in `mode`.
    pub fn with_informative(mut self, mode: usize, classes: &[usize]) -> Self {
        if let Some(row) = self.informative.get_mut(mode) {
            for (i, v) in row.iter_mut().enumerate() {
                *v = classes.contains(&(i + 1));
            }
        }
        self
    }

    /// Class count including background.
    pub fn classes(&self) -> usize {
        self.num_classes + 1
    }

    pub fn validate(&self) -> Result<()> {
        let modes = self.input_dims.len();
        if modes == 0 || self.input_dims.contains(&0) {
            return Err(Error::Config(
                "need at least one mode with a positive feature dimension".into(),
            ));
        }
        if self.num_classes == 0 {
            return Err(Error::Config("need at least one gesture class".into()));
        }
        if self.signal.len() != modes || self.informative.len() != modes {
            return Err(Error::Config(format!(
                "{modes} modes but {} signal scales and {} mask rows",
                self.signal.len(),
                self.informative.len()
            )));
        }
        if let Some(row) = self
            .informative
            .iter()
            .find(|r| r.len() != self.num_classes)
        {
            return Err(Error::Config(format!(
                "mask row has {} entries for {} gesture classes",
                row.len(),
                self.num_classes
            )));
        }
        if !(self.noise >= 0.0) || self.signal.iter().any(|s| !(*s >= 0.0)) {
            return Err(Error::Config(
                "signal and noise scales must be non-negative".into(),
            ));
        }
        let (a, b) = self.gesture_len;
        let (c, d) = self.gap_len;
        if a == 0 || a > b || c == 0 || c > d {
            return Err(Error::Config(
                "segment length ranges must satisfy 1 <= min <= max".into(),
            ));
        }
        Ok(())
    }

    /// Prototype table `[mode][class]`, background at class 0.
    pub fn prototypes(&self) -> Result<Vec<Vec<Vec<f64>>>> {
        self.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let unit = Normal::new(0.0, 1.0).expect("unit normal");
        let mut table = Vec::with_capacity(self.input_dims.len());
        for (m, &d) in self.input_dims.iter().enumerate() {
            let scale = self.signal[m];
            let mut draw = || {
                (0..d)
                    .map(|_| scale * unit.sample(&mut rng))
                    .collect::<Vec<f64>>()
            };
            let background = draw();
            let shared = draw();
            let mut row = vec![background];
            for c in 0..self.num_classes {
                let own = draw();
                row.push(if self.informative[m][c] {
                    own
                } else {
                    shared.clone()
                });
            }
            table.push(row);
        }
        Ok(table)
    }

    fn layout(&self, frames: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut labels = Vec::with_capacity(frames);
        let mut gesture = false;
        while labels.len() < frames {
            let (lo, hi) = if gesture {
                self.gesture_len
            } else {
                self.gap_len
            };
            let len = rng.random_range(lo..=hi);
            let class = if gesture {
                rng.random_range(1..=self.num_classes)
            } else {
                BACKGROUND
            };
            labels.extend(std::iter::repeat_n(class, len));
            gesture = !gesture;
        }
        labels.truncate(frames);
        if labels.iter().all(|&y| y == BACKGROUND) {
            // too short for the drawn gap: put one gesture in the middle
            let class = rng.random_range(1..=self.num_classes);
            let len = self.gesture_len.0.min(frames);
            let start = (frames - len) / 2;
            labels[start..start + len]
                .iter_mut()
                .for_each(|y| *y = class);
        }
        labels
    }

    /// Generates `count` sequences with lengths drawn from `frames`.
    ///
    /// Prototypes depend only on the seed; `split` selects an independent
    /// stream of layouts and noise so train and validation sets share classes.
    pub fn generate(&self, count: usize, frames: (usize, usize), split: u64) -> Result<Dataset> {
        let prototypes = self.prototypes()?;
        if frames.0 == 0 || frames.0 > frames.1 {
            return Err(Error::Config(
                "sequence length range must satisfy 1 <= min <= max".into(),
            ));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(split + 1);
        let noise = Normal::new(0.0, self.noise).map_err(|e| Error::Config(e.to_string()))?;
        let mut sequences = Vec::with_capacity(count);
        for i in 0..count {
            let t = rng.random_range(frames.0..=frames.1);
            let labels = self.layout(t, &mut rng);
            let mut streams = Vec::with_capacity(self.input_dims.len());
            for (m, &d) in self.input_dims.iter().enumerate() {
                let mut data = Vec::with_capacity(t * d);
                let mut since = usize::MAX;
                for f in 0..t {
                    since = if f > 0 && labels[f] != labels[f - 1] {
                        0
                    } else {
                        since.saturating_add(1)
                    };
                    let cur = &prototypes[m][labels[f]];
                    let alpha = if since < self.ramp {
                        (since + 1) as f64 / (self.ramp + 1) as f64
                    } else {
                        1.0
                    };
                    let boundary = f - since.min(f);
                    let prev = &prototypes[m][labels[boundary.saturating_sub(1)]];
                    for k in 0..d {
                        let clean = alpha * cur[k] + (1.0 - alpha) * prev[k];
                        data.push(clean + noise.sample(&mut rng));
                    }
                }
                streams.push(Tensor::new(vec![t, d], data)?);
            }
            sequences.push(Sequence {
                id: format!("s{split}_{i:04}"),
                streams,
                labels,
            });
        }
        Ok(Dataset {
            classes: self.classes(),
            input_dims: self.input_dims.clone(),
            sequences,
        })
    }
}
