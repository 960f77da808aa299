//! Central finite-difference verification of reverse-mode gradients.
//!
//! The numeric side only ever evaluates forward passes, so it shares no
//! code with the backward kernels it checks.

use super::{Graph, ParamStore, Tensor, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Denominator floor of [`relative_error`], so that gradients that are
/// zero on both sides compare as equal.
pub const RELATIVE_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, RELATIVE_FLOOR)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_FLOOR)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mismatch {
    /// Which input tensor (or parameter index).
    pub tensor: usize,
    pub element: usize,
    pub analytic: f64,
    pub numeric: f64,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GradCheckReport {
    pub checked: usize,
    pub max_relative_error: f64,
    pub worst: Option<Mismatch>,
}

impl GradCheckReport {
    fn record(&mut self, tensor: usize, element: usize, analytic: f64, numeric: f64) {
        self.checked += 1;
        let err = relative_error(analytic, numeric);
        if err > self.max_relative_error || self.worst.is_none() {
            self.max_relative_error = err;
            self.worst = Some(Mismatch {
                tensor,
                element,
                analytic,
                numeric,
            });
        }
    }

    pub fn passes(&self, tolerance: f64) -> bool {
        self.max_relative_error < tolerance
    }
}

fn scalar_of<S: Scalar>(graph: &Graph<S>, v: Var) -> Result<f64> {
    Ok(graph.value(v)?.item()?.to_f64_lossy())
}

/// Checks `d f / d inputs` where `f` builds a scalar from gradient leaves.
pub fn check_gradients<S, F>(inputs: &[Tensor<S>], step: f64, f: F) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<S>]| -> Result<f64> {
        let mut g = Graph::new();
        let vars: Vec<Var> = values.iter().map(|t| g.variable(t.clone())).collect();
        let out = f(&mut g, &vars)?;
        scalar_of(&g, out)
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t.clone())).collect();
    let out = f(&mut g, &vars)?;
    g.backward(out)?;

    let mut report = GradCheckReport::default();
    let mut work = inputs.to_vec();
    for (ti, v) in vars.iter().enumerate() {
        let analytic: Vec<f64> = match g.grad(*v)? {
            Some(gr) => gr.iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; inputs[ti].numel()],
        };
        for (e, &a) in analytic.iter().enumerate() {
            let numeric = perturb(&mut work, ti, e, step, &eval)?;
            report.record(ti, e, a, numeric);
        }
    }
    Ok(report)
}

fn perturb<S: Scalar>(
    work: &mut [Tensor<S>],
    ti: usize,
    e: usize,
    step: f64,
    eval: &impl Fn(&[Tensor<S>]) -> Result<f64>,
) -> Result<f64> {
    let orig = work[ti].data()[e];
    work[ti].data_mut()[e] = orig + S::of(step);
    let plus = eval(work)?;
    work[ti].data_mut()[e] = orig - S::of(step);
    let minus = eval(work)?;
    work[ti].data_mut()[e] = orig;
    Ok((plus - minus) / (2.0 * step))
}

/// Checks the gradient of every parameter of `store`, where `f` builds the
/// scalar objective from a graph and a parameter store.
pub fn check_param_gradients<S, F>(
    store: &ParamStore<S>,
    step: f64,
    f: F,
) -> Result<GradCheckReport>
where
    S: Scalar,
    F: Fn(&mut Graph<S>, &ParamStore<S>) -> Result<Var>,
{
    let mut g = Graph::new();
    let out = f(&mut g, store)?;
    g.backward(out)?;
    let mut grads = store.clone();
    grads.zero_grads();
    g.accumulate_param_grads(&mut grads)?;

    let eval = |s: &ParamStore<S>| -> Result<f64> {
        let mut g = Graph::new();
        let out = f(&mut g, s)?;
        scalar_of(&g, out)
    };

    let mut report = GradCheckReport::default();
    let mut work = store.clone();
    for id in store.ids() {
        let n = store.get(id).numel();
        let analytic: Vec<f64> = match grads.get(id).grad() {
            Some(gr) => gr.iter().map(|x| x.to_f64_lossy()).collect(),
            None => vec![0.0; n],
        };
        for (e, &a) in analytic.iter().enumerate() {
            let orig = work.get(id).data()[e];
            work.get_mut(id).data_mut()[e] = orig + S::of(step);
            let plus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig - S::of(step);
            let minus = eval(&work)?;
            work.get_mut(id).data_mut()[e] = orig;
            report.record(id.index(), e, a, (plus - minus) / (2.0 * step));
        }
    }
    if report.checked == 0 {
        return Err(Error::Contract("no parameters to check".into()));
    }
    Ok(report)
}
