//! Named parameter storage and initialisation.

use std::ops::Index;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Tape, Var};
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// All learnable tensors of a model, in registration order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Register every parameter on `tape` as a borrowed differentiable leaf.
    pub fn bind<'p>(&'p self, tape: &mut Tape<'p, T>) -> Bound {
        Bound(self.tensors.iter().map(|t| tape.param(t)).collect())
    }
}

/// Tape handles of a bound [`ParamStore`], indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound(Vec<Var>);

impl Index<ParamId> for Bound {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Per-parameter gradients collected from a tape after `backward`.
/// Parameters the loss does not depend on carry zeros.
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients<T>(Vec<Vec<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn collect(tape: &Tape<'_, T>, bound: &Bound, store: &ParamStore<T>) -> Self {
        Gradients(
            store
                .ids()
                .map(|id| match tape.grad(bound[id]) {
                    Some(g) => g.to_vec(),
                    None => vec![T::zero(); store.get(id).numel()],
                })
                .collect(),
        )
    }

    pub fn get(&self, id: ParamId) -> &[T] {
        &self.0[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut [T] {
        &mut self.0[id.0]
    }

    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flatten()
            .map(|g| {
                let v = g.to_f64().unwrap_or(f64::NAN);
                v * v
            })
            .sum::<f64>()
            .sqrt()
    }

    pub fn scale(&mut self, factor: T) {
        self.0.iter_mut().flatten().for_each(|g| *g = *g * factor);
    }
}

/// Seeded initialiser.
pub struct Init {
    rng: ChaCha8Rng,
}

impl Init {
    pub fn new(seed: u64) -> Self {
        Init {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn from_rng(rng: ChaCha8Rng) -> Self {
        Init { rng }
    }

    pub fn normal<T: Scalar>(&mut self, shape: Vec<usize>, std: f64) -> Tensor<T> {
        let dist = Normal::new(0.0, std).expect("std is finite and non-negative");
        let n = shape.iter().product();
        let data = (0..n).map(|_| T::c(dist.sample(&mut self.rng))).collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    pub fn uniform<T: Scalar>(&mut self, shape: Vec<usize>, bound: f64) -> Tensor<T> {
        let n = shape.iter().product();
        let data = (0..n)
            .map(|_| T::c(self.rng.gen_range(-bound..=bound)))
            .collect();
        Tensor::new(shape, data).expect("length matches shape")
    }

    pub fn sample_range(&mut self, lo: f64, hi: f64) -> f64 {
        self.rng.gen_range(lo..hi)
    }
}
