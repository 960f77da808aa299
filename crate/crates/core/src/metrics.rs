//! Evaluation: mean Jaccard index, Levenshtein accuracy, frame accuracy and
//! overlapped sliding-window inference.
//!
//! Class 0 is the background label throughout.

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::model::{argmax_rows, TmmfModel};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const BACKGROUND: usize = 0;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Segment {
    pub class: usize,
    /// First frame, 1-based.
    pub start: usize,
    /// Last frame, 1-based and inclusive.
    pub end: usize,
}

impl Segment {
    pub fn len(&self) -> usize {
        self.end + 1 - self.start
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

/// Merges runs of equal labels, drops background runs and runs shorter than
/// `min_len` frames.
pub fn collapse_to_segments(labels: &[usize], min_len: usize) -> Vec<Segment> {
    let mut out = Vec::new();
    let mut start = 0;
    for t in 1..=labels.len() {
        if t == labels.len() || labels[t] != labels[start] {
            let seg = Segment {
                class: labels[start],
                start: start + 1,
                end: t,
            };
            if seg.class != BACKGROUND && seg.len() >= min_len {
                out.push(seg);
            }
            start = t;
        }
    }
    out
}

/// Unit-cost edit distance between two symbol strings.
pub fn levenshtein<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, x) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, y) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(x != y);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// `(1 - d / T_p) * 100` over segment class strings, clamped below at 0.
pub fn levenshtein_accuracy(gt: &[Segment], pred: &[Segment]) -> Result<f64> {
    if gt.is_empty() {
        return Err(Error::Data(
            "Levenshtein accuracy is undefined without ground-truth gestures".into(),
        ));
    }
    let a: Vec<usize> = gt.iter().map(|s| s.class).collect();
    let b: Vec<usize> = pred.iter().map(|s| s.class).collect();
    let d = levenshtein(&a, &b) as f64;
    Ok(((1.0 - d / gt.len() as f64) * 100.0).max(0.0))
}

fn check_pair(gt: &[usize], pred: &[usize]) -> Result<()> {
    if gt.len() != pred.len() {
        return Err(Error::Data(format!(
            "ground truth has {} frames, prediction has {}",
            gt.len(),
            pred.len()
        )));
    }
    Ok(())
}

/// Per-sequence Jaccard index.
///
/// Sums the per-class IoU over every class present in either sequence and
/// divides by the number of distinct true classes. A sequence whose ground
/// truth has no class in scope scores 1 when the prediction has none either
/// and 0 otherwise.
pub fn sequence_jaccard(gt: &[usize], pred: &[usize], include_bg: bool) -> Result<f64> {
    check_pair(gt, pred)?;
    let classes = gt.iter().chain(pred).copied().max().map_or(0, |m| m + 1);
    let mut inter = vec![0usize; classes];
    let mut union = vec![0usize; classes];
    let mut in_gt = vec![false; classes];
    for (&g, &p) in gt.iter().zip(pred) {
        in_gt[g] = true;
        if g == p {
            inter[g] += 1;
            union[g] += 1;
        } else {
            union[g] += 1;
            union[p] += 1;
        }
    }
    let in_scope = |c: usize| include_bg || c != BACKGROUND;
    let true_classes = (0..classes).filter(|&c| in_gt[c] && in_scope(c)).count();
    if true_classes == 0 {
        let predicted = (0..classes).any(|c| union[c] > 0 && in_scope(c));
        return Ok(if predicted { 0.0 } else { 1.0 });
    }
    let sum: f64 = (0..classes)
        .filter(|&c| in_scope(c) && union[c] > 0)
        .map(|c| inter[c] as f64 / union[c] as f64)
        .sum();
    Ok(sum / true_classes as f64)
}

pub fn frame_accuracy(gt: &[usize], pred: &[usize]) -> Result<f64> {
    check_pair(gt, pred)?;
    if gt.is_empty() {
        return Ok(0.0);
    }
    Ok(gt.iter().zip(pred).filter(|(g, p)| g == p).count() as f64 / gt.len() as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct SequenceScore {
    pub jaccard: f64,
    /// `None` when the ground truth has no gesture.
    pub levenshtein_accuracy: Option<f64>,
    pub frame_accuracy: f64,
    pub frames: usize,
    /// Distinct true classes in scope.
    pub true_classes: usize,
    pub gt_instances: usize,
    pub pred_instances: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub sequences: Vec<SequenceScore>,
    pub mean_jaccard: f64,
    /// Mean over sequences with at least one true gesture.
    pub levenshtein_accuracy: f64,
    /// Pooled over all frames.
    pub frame_accuracy: f64,
}

impl MetricReport {
    pub fn len(&self) -> usize {
        self.sequences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sequences.is_empty()
    }

    /// Flat `key = value` summary.
    pub fn to_key_values(&self) -> String {
        format!(
            "sequences = {}\nmean_jaccard = {}\nlevenshtein_accuracy = {}\nframe_accuracy = {}\n",
            self.len(),
            self.mean_jaccard,
            self.levenshtein_accuracy,
            self.frame_accuracy
        )
    }

    /// One CSV row per sequence.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "sequence",
            "frames",
            "jaccard",
            "levenshtein_accuracy",
            "frame_accuracy",
            "true_classes",
            "gt_instances",
            "pred_instances",
        ])?;
        for (i, s) in self.sequences.iter().enumerate() {
            w.write_record([
                i.to_string(),
                s.frames.to_string(),
                s.jaccard.to_string(),
                s.levenshtein_accuracy
                    .map_or(String::new(), |v| v.to_string()),
                s.frame_accuracy.to_string(),
                s.true_classes.to_string(),
                s.gt_instances.to_string(),
                s.pred_instances.to_string(),
            ])?;
        }
        let bytes = w.into_inner().map_err(|e| Error::Data(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
    }
}

pub fn score_sequence(gt: &[usize], pred: &[usize], include_bg: bool) -> Result<SequenceScore> {
    let jaccard = sequence_jaccard(gt, pred, include_bg)?;
    let gs = collapse_to_segments(gt, 1);
    let ps = collapse_to_segments(pred, 1);
    let mut true_classes: Vec<usize> = gt
        .iter()
        .copied()
        .filter(|&c| include_bg || c != BACKGROUND)
        .collect();
    true_classes.sort_unstable();
    true_classes.dedup();
    Ok(SequenceScore {
        jaccard,
        levenshtein_accuracy: if gs.is_empty() {
            None
        } else {
            Some(levenshtein_accuracy(&gs, &ps)?)
        },
        frame_accuracy: frame_accuracy(gt, pred)?,
        frames: gt.len(),
        true_classes: true_classes.len(),
        gt_instances: gs.len(),
        pred_instances: ps.len(),
    })
}

/// Scores paired sequences and aggregates them.
pub fn mean_jaccard_index(
    gt: &[Vec<usize>],
    pred: &[Vec<usize>],
    include_bg: bool,
) -> Result<MetricReport> {
    if gt.len() != pred.len() {
        return Err(Error::Data(format!(
            "{} ground-truth sequences, {} predictions",
            gt.len(),
            pred.len()
        )));
    }
    let sequences = gt
        .par_iter()
        .zip(pred)
        .map(|(g, p)| score_sequence(g, p, include_bg))
        .collect::<Result<Vec<_>>>()?;
    let q = sequences.len().max(1) as f64;
    let mean_jaccard = sequences.iter().map(|s| s.jaccard).sum::<f64>() / q;
    let la: Vec<f64> = sequences
        .iter()
        .filter_map(|s| s.levenshtein_accuracy)
        .collect();
    let levenshtein_accuracy = if la.is_empty() {
        0.0
    } else {
        la.iter().sum::<f64>() / la.len() as f64
    };
    let frames: usize = sequences.iter().map(|s| s.frames).sum();
    let correct: f64 = sequences
        .iter()
        .map(|s| s.frame_accuracy * s.frames as f64)
        .sum();
    Ok(MetricReport {
        sequences,
        mean_jaccard,
        levenshtein_accuracy,
        frame_accuracy: if frames == 0 {
            0.0
        } else {
            correct / frames as f64
        },
    })
}

/// Window starts `0, s, 2s, ...`, plus a final window ending at `T` when the
/// stride does not land on it.
pub fn window_starts(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if window >= frames {
        return vec![0];
    }
    let mut starts: Vec<usize> = (0..)
        .map(|i| i * stride)
        .take_while(|&s| s + window <= frames)
        .collect();
    if starts.last().map_or(true, |&s| s + window < frames) {
        starts.push(frames - window);
    }
    starts
}

/// Runs the model on overlapping windows, sums per-frame probabilities and
/// takes the per-frame argmax. Returns the labels and the summed scores.
pub fn sliding_window_predict<S: Scalar>(
    model: &TmmfModel<S>,
    streams: &[Tensor<S>],
    window: usize,
    stride: usize,
) -> Result<(Vec<usize>, Tensor<S>)> {
    if window == 0 || stride == 0 || stride > window {
        return Err(Error::Parameter(format!(
            "need 0 < stride <= window, got window {window}, stride {stride}"
        )));
    }
    let frames = streams.first().map_or(0, |s| s.shape()[0]);
    if frames <= window {
        let scores = model.predict(streams)?.probs();
        return Ok((argmax_rows(&scores), scores));
    }
    let classes = model.config().classes;
    let mut acc = Tensor::zeros(&[frames, classes]);
    for start in window_starts(frames, window, stride) {
        let part: Vec<Tensor<S>> = streams
            .iter()
            .map(|s| s.slice_rows(start, start + window))
            .collect::<Result<_>>()?;
        let probs = model.predict(&part)?.probs();
        let dst = &mut acc.data_mut()[start * classes..(start + window) * classes];
        dst.iter_mut().zip(probs.data()).for_each(|(a, &p)| *a += p);
    }
    Ok((argmax_rows(&acc), acc))
}
