use rand::Rng;
use rand_distr::{Distribution, Uniform};

use super::Tensor;
use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Initialisation scheme for a freshly declared parameter.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    FanIn(usize),
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
struct Param<S> {
    name: String,
    value: Tensor<S>,
}

/// Trainable parameters in fixed declaration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore { params: Vec::new() }
    }

    pub fn declare(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut impl Rng,
    ) -> ParamId {
        let value = match init {
            Init::Constant(c) => Tensor::full(shape, S::of(c)),
            Init::FanIn(fan_in) => {
                let bound = 1.0 / (fan_in.max(1) as f64).sqrt();
                let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                Tensor::from_fn(shape, |_| S::of(dist.sample(rng)))
            }
        };
        self.push(name.into(), value)
    }

    pub(crate) fn push(&mut self, name: String, value: Tensor<S>) -> ParamId {
        self.params.push(Param { name, value });
        ParamId(self.params.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.params[id.0].name
    }

    pub fn get(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<S> {
        &mut self.params[id.0].value
    }

    /// Replaces the value of a parameter, keeping its shape.
    pub fn assign(&mut self, id: ParamId, value: Tensor<S>) -> Result<()> {
        let slot = &mut self.params[id.0];
        if slot.value.shape() != value.shape() {
            return Err(Error::Dimension(format!(
                "parameter {} has shape {:?}, got {:?}",
                slot.name,
                slot.value.shape(),
                value.shape()
            )));
        }
        slot.value = value;
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.value.grad = None;
        }
    }

    /// Adds `grad` into the accumulated gradient of `id`.
    pub fn accumulate_grad(&mut self, id: ParamId, grad: &[S]) -> Result<()> {
        let Param { name, value } = &mut self.params[id.0];
        if grad.len() != value.numel() {
            return Err(Error::Dimension(format!(
                "gradient of length {} for parameter {name}",
                grad.len()
            )));
        }
        match value.grad_mut() {
            Some(acc) => acc.iter_mut().zip(grad).for_each(|(a, &g)| *a += g),
            None => value.grad = Some(grad.to_vec()),
        }
        Ok(())
    }

    /// Euclidean norm over all accumulated gradients.
    pub fn grad_norm(&self) -> S {
        self.params
            .iter()
            .filter_map(|p| p.value.grad())
            .flat_map(|g| g.iter())
            .map(|&g| g * g)
            .sum::<S>()
            .sqrt()
    }

    pub fn scale_grads(&mut self, factor: S) {
        for p in &mut self.params {
            if let Some(g) = p.value.grad_mut() {
                g.iter_mut().for_each(|x| *x *= factor);
            }
        }
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }
}
