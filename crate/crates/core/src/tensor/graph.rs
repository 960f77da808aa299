use std::sync::atomic::{AtomicU64, Ordering};

use super::kernels::{self, ConvDims, NormCache};
use super::{ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

static NEXT_GRAPH: AtomicU64 = AtomicU64::new(1);

/// Handle to a node of one particular [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var {
    graph: u64,
    index: usize,
}

impl Var {
    /// Position of the node in the graph's insertion order.
    pub fn index(self) -> usize {
        self.index
    }
}

/// Discriminant of a recorded operation, for structural inspection.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum OpKind {
    Leaf,
    Conv1d,
    Relu,
    Sigmoid,
    Add,
    Mul,
    Scale,
    MatMul,
    Transpose,
    MeanAxes,
    Sum,
    LogSoftmaxRows,
    ChannelNorm,
    WindowStack,
    ConcatLast,
    Reshape,
    Pick,
    TruncatedSmoothing,
    MidpointError,
}

#[derive(Clone, Copy, Debug)]
enum Broadcast {
    Same,
    /// The smaller operand covers the leading axes; each of its elements
    /// repeats over `inner` consecutive elements of the larger one.
    Leading {
        inner: usize,
    },
    /// The smaller operand covers the trailing axes and repeats cyclically.
    Trailing {
        len: usize,
    },
}

impl Broadcast {
    #[inline]
    fn map(self, i: usize) -> usize {
        match self {
            Broadcast::Same => i,
            Broadcast::Leading { inner } => i / inner,
            Broadcast::Trailing { len } => i % len,
        }
    }

    fn resolve(big: &[usize], small: &[usize]) -> Option<Broadcast> {
        if big == small {
            return Some(Broadcast::Same);
        }
        if small.len() < big.len() {
            if big.starts_with(small) {
                let inner = big[small.len()..].iter().product();
                return Some(Broadcast::Leading { inner });
            }
            if big.ends_with(small) {
                return Some(Broadcast::Trailing {
                    len: small.iter().product(),
                });
            }
        }
        None
    }
}

enum Op<S> {
    Leaf,
    Conv1d {
        input: usize,
        kernel: usize,
        bias: Option<usize>,
        dims: ConvDims,
    },
    Relu(usize),
    Sigmoid(usize),
    Add {
        big: usize,
        small: usize,
        bcast: Broadcast,
    },
    Mul {
        big: usize,
        small: usize,
        bcast: Broadcast,
    },
    Scale(usize, S),
    MatMul {
        a: usize,
        b: usize,
        m: usize,
        n: usize,
        p: usize,
    },
    Transpose(usize),
    MeanAxes {
        input: usize,
        out_index: Vec<usize>,
        count: usize,
    },
    Sum(usize),
    LogSoftmaxRows(usize),
    ChannelNorm {
        input: usize,
        gain: usize,
        bias: usize,
        cache: NormCache<S>,
    },
    WindowStack {
        input: usize,
        behind: usize,
        ahead: usize,
    },
    ConcatLast(Vec<usize>),
    Reshape(usize),
    Pick {
        input: usize,
        columns: Vec<usize>,
    },
    TruncatedSmoothing {
        input: usize,
        tau: S,
        detach_previous: bool,
    },
    MidpointError {
        input: usize,
        rows: Vec<usize>,
        targets: Vec<usize>,
    },
}

impl<S> Op<S> {
    fn kind(&self) -> OpKind {
        match self {
            Op::Leaf => OpKind::Leaf,
            Op::Conv1d { .. } => OpKind::Conv1d,
            Op::Relu(_) => OpKind::Relu,
            Op::Sigmoid(_) => OpKind::Sigmoid,
            Op::Add { .. } => OpKind::Add,
            Op::Mul { .. } => OpKind::Mul,
            Op::Scale(..) => OpKind::Scale,
            Op::MatMul { .. } => OpKind::MatMul,
            Op::Transpose(_) => OpKind::Transpose,
            Op::MeanAxes { .. } => OpKind::MeanAxes,
            Op::Sum(_) => OpKind::Sum,
            Op::LogSoftmaxRows(_) => OpKind::LogSoftmaxRows,
            Op::ChannelNorm { .. } => OpKind::ChannelNorm,
            Op::WindowStack { .. } => OpKind::WindowStack,
            Op::ConcatLast(_) => OpKind::ConcatLast,
            Op::Reshape(_) => OpKind::Reshape,
            Op::Pick { .. } => OpKind::Pick,
            Op::TruncatedSmoothing { .. } => OpKind::TruncatedSmoothing,
            Op::MidpointError { .. } => OpKind::MidpointError,
        }
    }
}

struct Node<S> {
    value: Tensor<S>,
    op: Op<S>,
    requires_grad: bool,
    param: Option<ParamId>,
}

/// Append-only record of tensor operations supporting one backward pass.
///
/// A graph is single-owner; independent graphs may live on different threads.
pub struct Graph<S> {
    id: u64,
    nodes: Vec<Node<S>>,
    backpropagated: bool,
}

impl<S: Scalar> Default for Graph<S> {
    fn default() -> Self {
        Self::new()
    }
}

impl<S: Scalar> Graph<S> {
    pub fn new() -> Self {
        Graph {
            id: NEXT_GRAPH.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            backpropagated: false,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Number of recorded operations of the given kind.
    pub fn count(&self, kind: OpKind) -> usize {
        self.nodes.iter().filter(|n| n.op.kind() == kind).count()
    }

    pub fn kind(&self, v: Var) -> Result<OpKind> {
        Ok(self.node(v)?.op.kind())
    }

    fn check(&self, v: Var) -> Result<usize> {
        if v.graph != self.id || v.index >= self.nodes.len() {
            return Err(Error::Contract(format!(
                "variable {v:?} does not belong to graph {}",
                self.id
            )));
        }
        Ok(v.index)
    }

    fn node(&self, v: Var) -> Result<&Node<S>> {
        let i = self.check(v)?;
        Ok(&self.nodes[i])
    }

    pub fn value(&self, v: Var) -> Result<&Tensor<S>> {
        Ok(&self.node(v)?.value)
    }

    /// Gradient of the last backward pass, if this node received one.
    pub fn grad(&self, v: Var) -> Result<Option<&[S]>> {
        Ok(self.node(v)?.value.grad())
    }

    fn push(&mut self, value: Tensor<S>, op: Op<S>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
            param: None,
        });
        Var {
            graph: self.id,
            index: self.nodes.len() - 1,
        }
    }

    fn any_grad(&self, inputs: &[usize]) -> bool {
        inputs.iter().any(|&i| self.nodes[i].requires_grad)
    }

    /// Constant leaf.
    pub fn input(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// Leaf that receives a gradient.
    pub fn variable(&mut self, value: Tensor<S>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Copies every parameter of `store` into the graph as a gradient leaf.
    /// The returned handles are indexed by [`ParamId::index`].
    pub fn bind(&mut self, store: &ParamStore<S>) -> Vec<Var> {
        store
            .ids()
            .map(|id| {
                let v = self.variable(store.get(id).clone());
                self.nodes[v.index].param = Some(id);
                v
            })
            .collect()
    }

    /// Dilated "same" convolution over time.
    ///
    /// `input` is `[T, C_in]`, `kernel` is `[C_out, C_in, K]` with odd `K`,
    /// `bias` is `[C_out]`. The output is `[T, C_out]` with
    /// `out[t, o] = bias[o] + sum_{c,k} input[t + (k - K/2) * dilation, c] * kernel[o, c, k]`
    /// and zeros outside the sequence.
    pub fn conv1d(
        &mut self,
        input: Var,
        kernel: Var,
        bias: Option<Var>,
        dilation: usize,
    ) -> Result<Var> {
        if dilation < 1 {
            return Err(Error::Parameter("dilation must be at least 1".into()));
        }
        let (xi, ki) = (self.check(input)?, self.check(kernel)?);
        let bi = bias.map(|b| self.check(b)).transpose()?;
        let xs = self.nodes[xi].value.shape();
        let ks = self.nodes[ki].value.shape();
        if xs.len() != 2 || ks.len() != 3 || ks[1] != xs[1] {
            return Err(Error::Dimension(format!(
                "conv1d input {xs:?} incompatible with kernel {ks:?}"
            )));
        }
        if ks[2] % 2 == 0 {
            return Err(Error::Parameter(format!(
                "conv1d kernel width {} must be odd",
                ks[2]
            )));
        }
        if let Some(bi) = bi {
            if self.nodes[bi].value.shape() != [ks[0]] {
                return Err(Error::Dimension(format!(
                    "conv1d bias {:?} for {} output channels",
                    self.nodes[bi].value.shape(),
                    ks[0]
                )));
            }
        }
        let dims = ConvDims {
            frames: xs[0],
            c_in: xs[1],
            c_out: ks[0],
            width: ks[2],
            dilation,
        };
        let out = kernels::conv1d_forward(
            self.nodes[xi].value.data(),
            self.nodes[ki].value.data(),
            bi.map(|b| self.nodes[b].value.data()),
            &dims,
        );
        let mut inputs = vec![xi, ki];
        inputs.extend(bi);
        let rg = self.any_grad(&inputs);
        let value = Tensor::new(vec![dims.frames, dims.c_out], out)?;
        Ok(self.push(
            value,
            Op::Conv1d {
                input: xi,
                kernel: ki,
                bias: bi,
                dims,
            },
            rg,
        ))
    }

    pub fn relu(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let value = self.nodes[xi].value.map(|v| v.max(S::zero()));
        let rg = self.any_grad(&[xi]);
        Ok(self.push(value, Op::Relu(xi), rg))
    }

    pub fn sigmoid(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let value = self.nodes[xi].value.map(kernels::sigmoid);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(value, Op::Sigmoid(xi), rg))
    }

    fn broadcast_pair(&self, a: Var, b: Var) -> Result<(usize, usize, Broadcast)> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if let Some(bc) = Broadcast::resolve(sa, sb) {
            return Ok((ai, bi, bc));
        }
        if let Some(bc) = Broadcast::resolve(sb, sa) {
            return Ok((bi, ai, bc));
        }
        Err(Error::Dimension(format!(
            "shapes {sa:?} and {sb:?} are not broadcast-compatible"
        )))
    }

    /// Elementwise sum. The smaller operand may match the leading or the
    /// trailing axes of the larger one.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small, bcast) = self.broadcast_pair(a, b)?;
        let s = self.nodes[small].value.data();
        let mut value = self.nodes[big].value.clone();
        value.grad = None;
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v += s[bcast.map(i)];
        }
        let rg = self.any_grad(&[big, small]);
        Ok(self.push(value, Op::Add { big, small, bcast }, rg))
    }

    /// Elementwise product with the same broadcasting rules as [`Graph::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (big, small, bcast) = self.broadcast_pair(a, b)?;
        let s = self.nodes[small].value.data();
        let mut value = self.nodes[big].value.clone();
        value.grad = None;
        for (i, v) in value.data_mut().iter_mut().enumerate() {
            *v *= s[bcast.map(i)];
        }
        let rg = self.any_grad(&[big, small]);
        Ok(self.push(value, Op::Mul { big, small, bcast }, rg))
    }

    pub fn scale(&mut self, x: Var, factor: S) -> Result<Var> {
        let xi = self.check(x)?;
        let value = self.nodes[xi].value.map(|v| v * factor);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(value, Op::Scale(xi, factor), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (sa, sb) = (self.nodes[ai].value.shape(), self.nodes[bi].value.shape());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::Dimension(format!("matmul {sa:?} x {sb:?}")));
        }
        let (m, n, p) = (sa[0], sa[1], sb[1]);
        let out = kernels::matmul(
            self.nodes[ai].value.data(),
            self.nodes[bi].value.data(),
            m,
            n,
            p,
        );
        let rg = self.any_grad(&[ai, bi]);
        Ok(self.push(
            Tensor::new(vec![m, p], out)?,
            Op::MatMul {
                a: ai,
                b: bi,
                m,
                n,
                p,
            },
            rg,
        ))
    }

    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("transpose of {s:?}")));
        }
        let (r, c) = (s[0], s[1]);
        let out = kernels::transpose(self.nodes[xi].value.data(), r, c);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(Tensor::new(vec![c, r], out)?, Op::Transpose(xi), rg))
    }

    /// Mean over the listed axes; those axes are removed from the shape.
    /// Reducing every axis yields a one-element tensor of shape `[1]`.
    pub fn mean_axes(&mut self, x: Var, axes: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let shape = self.nodes[xi].value.shape().to_vec();
        if axes.is_empty() {
            return Err(Error::Parameter("mean over an empty axis list".into()));
        }
        let mut reduce = vec![false; shape.len()];
        for &a in axes {
            if a >= shape.len() || reduce[a] {
                return Err(Error::Parameter(format!(
                    "invalid reduction axes {axes:?} for shape {shape:?}"
                )));
            }
            reduce[a] = true;
        }
        let kept: Vec<usize> = (0..shape.len()).filter(|&a| !reduce[a]).collect();
        let out_shape: Vec<usize> = if kept.is_empty() {
            vec![1]
        } else {
            kept.iter().map(|&a| shape[a]).collect()
        };
        let count: usize = (0..shape.len())
            .filter(|&a| reduce[a])
            .map(|a| shape[a])
            .product();
        let numel = self.nodes[xi].value.numel();
        let mut out_index = vec![0usize; numel];
        let mut idx = vec![0usize; shape.len()];
        for slot in out_index.iter_mut() {
            let mut o = 0;
            for &a in &kept {
                o = o * shape[a] + idx[a];
            }
            *slot = o;
            for a in (0..shape.len()).rev() {
                idx[a] += 1;
                if idx[a] < shape[a] {
                    break;
                }
                idx[a] = 0;
            }
        }
        let mut out = vec![S::zero(); out_shape.iter().product()];
        for (&o, &v) in out_index.iter().zip(self.nodes[xi].value.data()) {
            out[o] += v;
        }
        let inv = S::of(count as f64).recip();
        out.iter_mut().for_each(|v| *v *= inv);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(
            Tensor::new(out_shape, out)?,
            Op::MeanAxes {
                input: xi,
                out_index,
                count,
            },
            rg,
        ))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let total = self.nodes[xi].value.data().iter().copied().sum();
        let rg = self.any_grad(&[xi]);
        Ok(self.push(Tensor::scalar(total), Op::Sum(xi), rg))
    }

    /// Log-softmax along the last axis of a 2-D tensor.
    pub fn log_softmax_rows(&mut self, x: Var) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("log_softmax_rows of {s:?}")));
        }
        let out = kernels::log_softmax_rows(self.nodes[xi].value.data(), s[1]);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(Tensor::new(s, out)?, Op::LogSoftmaxRows(xi), rg))
    }

    /// Per-channel normalisation of a `[T, C]` sequence using its own
    /// mean and variance, followed by an affine `gain`/`bias`.
    pub fn channel_norm(&mut self, x: Var, gain: Var, bias: Var, eps: S) -> Result<Var> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gain)?, self.check(bias)?);
        let s = self.nodes[xi].value.shape().to_vec();
        if s.len() != 2
            || self.nodes[gi].value.shape() != [s[1]]
            || self.nodes[bi].value.shape() != [s[1]]
        {
            return Err(Error::Dimension(format!(
                "channel_norm of {s:?} with gain {:?} and bias {:?}",
                self.nodes[gi].value.shape(),
                self.nodes[bi].value.shape()
            )));
        }
        let (out, cache) = kernels::channel_norm_forward(
            self.nodes[xi].value.data(),
            s[1],
            self.nodes[gi].value.data(),
            self.nodes[bi].value.data(),
            eps,
        );
        let rg = self.any_grad(&[xi, gi, bi]);
        Ok(self.push(
            Tensor::new(s, out)?,
            Op::ChannelNorm {
                input: xi,
                gain: gi,
                bias: bi,
                cache,
            },
            rg,
        ))
    }

    /// `[T, C]` to `[T, C, behind + 1 + ahead]`: slot `j` of frame `t`
    /// holds frame `t - behind + j`, or zero outside the sequence.
    pub fn window_stack(&mut self, x: Var, behind: usize, ahead: usize) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape().to_vec();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("window_stack of {s:?}")));
        }
        let out = kernels::window_stack(self.nodes[xi].value.data(), s[1], behind, ahead);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(
            Tensor::new(vec![s[0], s[1], behind + 1 + ahead], out)?,
            Op::WindowStack {
                input: xi,
                behind,
                ahead,
            },
            rg,
        ))
    }

    /// Concatenation along the last axis; all other axes must agree.
    pub fn concat_last(&mut self, parts: &[Var]) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Parameter("concat of zero tensors".into()));
        }
        let idx: Vec<usize> = parts
            .iter()
            .map(|&p| self.check(p))
            .collect::<Result<_>>()?;
        let first = self.nodes[idx[0]].value.shape().to_vec();
        let lead = &first[..first.len() - 1];
        let mut widths = Vec::with_capacity(idx.len());
        for &i in &idx {
            let s = self.nodes[i].value.shape();
            if s.len() != first.len() || &s[..s.len() - 1] != lead {
                return Err(Error::Dimension(format!(
                    "cannot concatenate {s:?} with {first:?} along the last axis"
                )));
            }
            widths.push(s[s.len() - 1]);
        }
        let total: usize = widths.iter().sum();
        let outer: usize = lead.iter().product();
        let mut out = Vec::with_capacity(outer * total);
        for o in 0..outer {
            for (&i, &w) in idx.iter().zip(&widths) {
                out.extend_from_slice(&self.nodes[i].value.data()[o * w..(o + 1) * w]);
            }
        }
        let mut shape = lead.to_vec();
        shape.push(total);
        let rg = self.any_grad(&idx);
        Ok(self.push(Tensor::new(shape, out)?, Op::ConcatLast(idx), rg))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let value = self.nodes[xi].value.clone().reshape(shape.to_vec())?;
        let rg = self.any_grad(&[xi]);
        Ok(self.push(value, Op::Reshape(xi), rg))
    }

    /// `out[t] = x[t, columns[t]]` for a 2-D `x`.
    pub fn pick(&mut self, x: Var, columns: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape();
        if s.len() != 2 || s[0] != columns.len() {
            return Err(Error::Dimension(format!(
                "pick of {} columns from {s:?}",
                columns.len()
            )));
        }
        let width = s[1];
        if let Some(&bad) = columns.iter().find(|&&c| c >= width) {
            return Err(Error::Data(format!("column {bad} out of range 0..{width}")));
        }
        let data = self.nodes[xi].value.data();
        let out: Vec<S> = columns
            .iter()
            .enumerate()
            .map(|(t, &c)| data[t * width + c])
            .collect();
        let rg = self.any_grad(&[xi]);
        Ok(self.push(
            Tensor::new(vec![columns.len()], out)?,
            Op::Pick {
                input: xi,
                columns: columns.to_vec(),
            },
            rg,
        ))
    }

    /// Truncated frame-to-frame change of `[T, C]` log-probabilities,
    /// normalised by `T * C`. With `detach_previous`, no gradient flows
    /// through the `t - 1` operand.
    pub fn truncated_smoothing(&mut self, x: Var, tau: S, detach_previous: bool) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape();
        if s.len() != 2 {
            return Err(Error::Dimension(format!("smoothing of {s:?}")));
        }
        if !(tau > S::zero()) {
            return Err(Error::Parameter(
                "truncation threshold must be positive".into(),
            ));
        }
        let v = kernels::truncated_smoothing(self.nodes[xi].value.data(), s[1], tau);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::TruncatedSmoothing {
                input: xi,
                tau,
                detach_previous,
            },
            rg,
        ))
    }

    /// Sum over `rows` of the squared distance between the one-hot `targets`
    /// and the probabilities `exp(x[row])` of a `[T, C]` log-probability tensor.
    pub fn midpoint_error(&mut self, x: Var, rows: &[usize], targets: &[usize]) -> Result<Var> {
        let xi = self.check(x)?;
        let s = self.nodes[xi].value.shape();
        if s.len() != 2 || rows.len() != targets.len() {
            return Err(Error::Dimension(format!(
                "midpoint error of {s:?} with {} rows and {} targets",
                rows.len(),
                targets.len()
            )));
        }
        if rows.iter().any(|&r| r >= s[0]) || targets.iter().any(|&c| c >= s[1]) {
            return Err(Error::Data("midpoint row or target out of range".into()));
        }
        let v = kernels::midpoint_sq_error(self.nodes[xi].value.data(), s[1], rows, targets);
        let rg = self.any_grad(&[xi]);
        Ok(self.push(
            Tensor::scalar(v),
            Op::MidpointError {
                input: xi,
                rows: rows.to_vec(),
                targets: targets.to_vec(),
            },
            rg,
        ))
    }

    /// Clears every gradient so that [`Graph::backward`] may run again.
    pub fn reset_grads(&mut self) {
        for n in &mut self.nodes {
            n.value.grad = None;
        }
        self.backpropagated = false;
    }

    /// Reverse-mode sweep from a one-element `loss`.
    ///
    /// A second call without [`Graph::reset_grads`] is rejected rather than
    /// accumulating twice.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let li = self.check(loss)?;
        if self.nodes[li].value.numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.nodes[li].value.shape()
            )));
        }
        if self.backpropagated {
            return Err(Error::Contract(
                "backward already ran on this graph; reset gradients first".into(),
            ));
        }
        self.backpropagated = true;
        let mut grads: Vec<Option<Vec<S>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[li] = Some(vec![S::one()]);
        for i in (0..=li).rev() {
            let Some(g) = grads[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            self.propagate(i, &g, &mut grads);
            self.nodes[i].value.grad = Some(g);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[S], grads: &mut [Option<Vec<S>>]) {
        let nodes = &self.nodes;
        let mut send = |target: usize, delta: Vec<S>| {
            if !nodes[target].requires_grad {
                return;
            }
            match &mut grads[target] {
                Some(acc) => acc.iter_mut().zip(&delta).for_each(|(a, &d)| *a += d),
                slot => *slot = Some(delta),
            }
        };
        let val = |j: usize| nodes[j].value.data();
        match &nodes[i].op {
            Op::Leaf => {}
            Op::Conv1d {
                input,
                kernel,
                bias,
                dims,
            } => {
                let cg = kernels::conv1d_backward(g, val(*input), val(*kernel), dims);
                send(*input, cg.input);
                send(*kernel, cg.kernel);
                if let Some(b) = bias {
                    send(*b, cg.bias);
                }
            }
            Op::Relu(x) => {
                let d = g
                    .iter()
                    .zip(val(*x))
                    .map(|(&g, &x)| if x > S::zero() { g } else { S::zero() })
                    .collect();
                send(*x, d);
            }
            Op::Sigmoid(x) => {
                let d = g
                    .iter()
                    .zip(nodes[i].value.data())
                    .map(|(&g, &y)| g * y * (S::one() - y))
                    .collect();
                send(*x, d);
            }
            Op::Add { big, small, bcast } => {
                let mut ds = vec![S::zero(); nodes[*small].value.numel()];
                for (k, &gv) in g.iter().enumerate() {
                    ds[bcast.map(k)] += gv;
                }
                send(*big, g.to_vec());
                send(*small, ds);
            }
            Op::Mul { big, small, bcast } => {
                let (b, s) = (val(*big), val(*small));
                let mut db = vec![S::zero(); b.len()];
                let mut ds = vec![S::zero(); s.len()];
                for (k, &gv) in g.iter().enumerate() {
                    let j = bcast.map(k);
                    db[k] = gv * s[j];
                    ds[j] += gv * b[k];
                }
                send(*big, db);
                send(*small, ds);
            }
            Op::Scale(x, f) => send(*x, g.iter().map(|&v| v * *f).collect()),
            Op::MatMul { a, b, m, n, p } => {
                let bt = kernels::transpose(val(*b), *n, *p);
                send(*a, kernels::matmul(g, &bt, *m, *p, *n));
                let at = kernels::transpose(val(*a), *m, *n);
                send(*b, kernels::matmul(&at, g, *n, *m, *p));
            }
            Op::Transpose(x) => {
                let s = nodes[*x].value.shape();
                send(*x, kernels::transpose(g, s[1], s[0]));
            }
            Op::MeanAxes {
                input,
                out_index,
                count,
            } => {
                let inv = S::of(*count as f64).recip();
                send(*input, out_index.iter().map(|&o| g[o] * inv).collect());
            }
            Op::Sum(x) => send(*x, vec![g[0]; nodes[*x].value.numel()]),
            Op::LogSoftmaxRows(x) => {
                let cols = nodes[i].value.shape()[1];
                let mut d = Vec::with_capacity(g.len());
                for (grow, yrow) in g
                    .chunks_exact(cols)
                    .zip(nodes[i].value.data().chunks_exact(cols))
                {
                    let total: S = grow.iter().copied().sum();
                    d.extend(grow.iter().zip(yrow).map(|(&gv, &y)| gv - y.exp() * total));
                }
                send(*x, d);
            }
            Op::ChannelNorm {
                input,
                gain,
                bias,
                cache,
            } => {
                let c = nodes[*gain].value.numel();
                let (dx, dg, db) = kernels::channel_norm_backward(g, cache, val(*gain), c);
                send(*input, dx);
                send(*gain, dg);
                send(*bias, db);
            }
            Op::WindowStack {
                input,
                behind,
                ahead,
            } => {
                let s = nodes[*input].value.shape();
                send(
                    *input,
                    kernels::window_stack_backward(g, s[0], s[1], *behind, *ahead),
                );
            }
            Op::ConcatLast(parts) => {
                let total = *nodes[i].value.shape().last().expect("rank >= 1");
                let outer = g.len() / total;
                let mut offset = 0;
                for &p in parts {
                    let w = *nodes[p].value.shape().last().expect("rank >= 1");
                    let mut d = Vec::with_capacity(outer * w);
                    for o in 0..outer {
                        d.extend_from_slice(&g[o * total + offset..o * total + offset + w]);
                    }
                    offset += w;
                    send(p, d);
                }
            }
            Op::Reshape(x) => send(*x, g.to_vec()),
            Op::Pick { input, columns } => {
                let width = nodes[*input].value.shape()[1];
                let mut d = vec![S::zero(); nodes[*input].value.numel()];
                for (t, (&c, &gv)) in columns.iter().zip(g).enumerate() {
                    d[t * width + c] += gv;
                }
                send(*input, d);
            }
            Op::TruncatedSmoothing {
                input,
                tau,
                detach_previous,
            } => {
                let s = nodes[*input].value.shape();
                let (frames, classes) = (s[0], s[1]);
                let lp = val(*input);
                let mut d = vec![S::zero(); lp.len()];
                let scale = g[0] / S::of((frames * classes) as f64);
                for t in 1..frames {
                    for c in 0..classes {
                        let diff = lp[t * classes + c] - lp[(t - 1) * classes + c];
                        if diff.abs() > *tau || diff == S::zero() {
                            continue;
                        }
                        let step = scale * diff.signum();
                        d[t * classes + c] += step;
                        if !detach_previous {
                            d[(t - 1) * classes + c] -= step;
                        }
                    }
                }
                send(*input, d);
            }
            Op::MidpointError {
                input,
                rows,
                targets,
            } => {
                let classes = nodes[*input].value.shape()[1];
                let lp = val(*input);
                let mut d = vec![S::zero(); lp.len()];
                for (&r, &y) in rows.iter().zip(targets) {
                    for c in 0..classes {
                        let p = lp[r * classes + c].exp();
                        let target = if c == y { S::one() } else { S::zero() };
                        d[r * classes + c] += g[0] * S::of(2.0) * (p - target) * p;
                    }
                }
                send(*input, d);
            }
        }
    }

    /// Adds the gradients of bound parameter leaves into `store`.
    pub fn accumulate_param_grads(&self, store: &mut ParamStore<S>) -> Result<()> {
        if !self.backpropagated {
            return Err(Error::Contract("no backward pass has run".into()));
        }
        for n in &self.nodes {
            if let (Some(id), Some(g)) = (n.param, n.value.grad()) {
                store.accumulate_grad(id, g)?;
            }
        }
        Ok(())
    }
}
