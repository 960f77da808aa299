//! Training objective: frame-wise cross-entropy, truncated smoothing of
//! log-probabilities across adjacent frames, and the mid-point loss that
//! compares one-hot ground truth with predicted probabilities at the centre
//! of sliding windows.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{kernels, Graph, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights<S> {
    /// Weight of the smoothing term.
    pub smoothing: S,
    /// Weight of the mid-point term.
    pub midpoint: S,
    /// Truncation threshold of the smoothing term.
    pub tau: S,
    /// Mid-point window length `N`.
    pub window: usize,
    /// Mid-point window stride.
    pub stride: usize,
    /// Stop the smoothing gradient through the earlier frame of each pair.
    pub detach_previous: bool,
}

impl<S: Scalar> Default for LossWeights<S> {
    fn default() -> Self {
        LossWeights {
            smoothing: S::of(0.15),
            midpoint: S::of(0.25),
            tau: S::of(4.0),
            window: 16,
            stride: 8,
            detach_previous: true,
        }
    }
}

impl<S: Scalar> LossWeights<S> {
    pub fn validate(&self) -> Result<()> {
        if self.smoothing < S::zero() || self.midpoint < S::zero() {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.tau > S::zero()) {
            return Err(Error::Config(
                "truncation threshold must be positive".into(),
            ));
        }
        if self.window < 1 || self.stride < 1 {
            return Err(Error::Config(
                "mid-point window and stride must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Loss components and their weighted sum.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossTerms<S> {
    pub ce: S,
    pub smoothing: S,
    pub midpoint: S,
    pub total: S,
}

fn check_labels(log_probs: &Tensor<impl Scalar>, labels: &[usize]) -> Result<(usize, usize)> {
    if log_probs.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [T, C], got {:?}",
            log_probs.shape()
        )));
    }
    let (frames, classes) = (log_probs.shape()[0], log_probs.shape()[1]);
    if labels.len() != frames {
        return Err(Error::Data(format!(
            "{} labels for {frames} frames",
            labels.len()
        )));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
        return Err(Error::Data(format!("label {bad} outside 0..{classes}")));
    }
    Ok((frames, classes))
}

/// Mean over frames of `-log p(true class)`.
pub fn cross_entropy<S: Scalar>(g: &mut Graph<S>, log_probs: Var, labels: &[usize]) -> Result<Var> {
    let (frames, _) = check_labels(g.value(log_probs)?, labels)?;
    let picked = g.pick(log_probs, labels)?;
    let mean = g.mean_axes(picked, &[0])?;
    let _ = frames;
    g.scale(mean, -S::one())
}

/// Truncated smoothing term; zero for sequences shorter than two frames.
pub fn smoothing_loss<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: Var,
    tau: S,
    detach_previous: bool,
) -> Result<Var> {
    let frames = g.value(log_probs)?.shape()[0];
    if frames < 2 {
        return Ok(g.input(Tensor::scalar(S::zero())));
    }
    g.truncated_smoothing(log_probs, tau, detach_previous)
}

/// Centre frames of the windows `[s, s + N)` for `s = 0, stride, 2 stride, ...`
/// that fit inside the sequence; a single centre `T / 2` when `N > T`.
pub fn midpoint_rows(frames: usize, window: usize, stride: usize) -> Vec<usize> {
    if frames == 0 {
        return Vec::new();
    }
    if window > frames {
        return vec![frames / 2];
    }
    (0..)
        .map(|i| i * stride.max(1))
        .take_while(|&s| s + window <= frames)
        .map(|s| s + window / 2)
        .collect()
}

pub fn midpoint_loss<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: Var,
    labels: &[usize],
    window: usize,
    stride: usize,
) -> Result<Var> {
    let (frames, _) = check_labels(g.value(log_probs)?, labels)?;
    if window < 1 || stride < 1 {
        return Err(Error::Parameter(
            "mid-point window and stride must be at least 1".into(),
        ));
    }
    let rows = midpoint_rows(frames, window, stride);
    let targets: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    g.midpoint_error(log_probs, &rows, &targets)
}

/// `ce + smoothing_weight * smoothing + midpoint_weight * midpoint`.
///
/// A term whose weight is zero adds no nodes to the graph; its value is
/// still computed for reporting.
pub fn total_loss<S: Scalar>(
    g: &mut Graph<S>,
    log_probs: Var,
    labels: &[usize],
    w: &LossWeights<S>,
) -> Result<(Var, LossTerms<S>)> {
    w.validate()?;
    let ce = cross_entropy(g, log_probs, labels)?;
    let mut terms = LossTerms {
        ce: g.value(ce)?.item()?,
        ..LossTerms::default()
    };
    let mut total = ce;

    if w.smoothing > S::zero() {
        let sm = smoothing_loss(g, log_probs, w.tau, w.detach_previous)?;
        terms.smoothing = g.value(sm)?.item()?;
        let scaled = g.scale(sm, w.smoothing)?;
        total = g.add(total, scaled)?;
    } else {
        terms.smoothing = smoothing_value(g.value(log_probs)?, w.tau)?;
    }

    if w.midpoint > S::zero() {
        let mid = midpoint_loss(g, log_probs, labels, w.window, w.stride)?;
        terms.midpoint = g.value(mid)?.item()?;
        let scaled = g.scale(mid, w.midpoint)?;
        total = g.add(total, scaled)?;
    } else {
        terms.midpoint = midpoint_value(g.value(log_probs)?, labels, w.window, w.stride)?;
    }

    terms.total = g.value(total)?.item()?;
    Ok((total, terms))
}

/// Smoothing term of a `[T, C]` log-probability tensor without a graph.
pub fn smoothing_value<S: Scalar>(log_probs: &Tensor<S>, tau: S) -> Result<S> {
    if log_probs.rank() != 2 {
        return Err(Error::Dimension(format!(
            "expected [T, C], got {:?}",
            log_probs.shape()
        )));
    }
    Ok(kernels::truncated_smoothing(
        log_probs.data(),
        log_probs.shape()[1],
        tau,
    ))
}

/// Mid-point term of a `[T, C]` log-probability tensor without a graph.
pub fn midpoint_value<S: Scalar>(
    log_probs: &Tensor<S>,
    labels: &[usize],
    window: usize,
    stride: usize,
) -> Result<S> {
    let (frames, classes) = check_labels(log_probs, labels)?;
    let rows = midpoint_rows(frames, window, stride);
    let targets: Vec<usize> = rows.iter().map(|&r| labels[r]).collect();
    Ok(kernels::midpoint_sq_error(
        log_probs.data(),
        classes,
        &rows,
        &targets,
    ))
}
