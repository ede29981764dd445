//! Named parameter collections, binding onto a tape, and initializers.

use std::collections::BTreeMap;

use rand::Rng;

use crate::autodiff::{Tape, Var};
use crate::error::{contract, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// A structure owning named, shaped parameter tensors.
///
/// Names are dot-separated paths and must be unique within one structure.
pub trait Parameterized<T: Scalar> {
    fn visit(&self, prefix: &str, f: &mut dyn FnMut(&str, &Tensor<T>));
    fn visit_mut(&mut self, prefix: &str, f: &mut dyn FnMut(&str, &mut Tensor<T>));

    fn named_params(&self) -> Vec<(String, Tensor<T>)> {
        let mut out = Vec::new();
        self.visit("", &mut |n, t| out.push((n.to_string(), t.clone())));
        out
    }

    fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit("", &mut |_, t| n += t.len());
        n
    }
}

pub(crate) fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Records parameter tensors onto a tape as leaves, remembering their names.
pub struct Binder<'t, T: Scalar> {
    tape: &'t mut Tape<T>,
    trainable: bool,
    bound: Vec<(String, Var)>,
}

impl<'t, T: Scalar> Binder<'t, T> {
    /// `trainable` leaves receive gradients; frozen ones are constants.
    pub fn new(tape: &'t mut Tape<T>, trainable: bool) -> Self {
        Self { tape, trainable, bound: Vec::new() }
    }

    pub fn bind(&mut self, name: String, value: &Tensor<T>) -> Var {
        let v = self.tape.leaf(value.clone(), self.trainable);
        self.bound.push((name, v));
        v
    }

    pub fn finish(self) -> Bound {
        Bound { vars: self.bound }
    }
}

/// Parameter names and the tape leaves they were bound to.
#[derive(Debug, Clone, Default)]
pub struct Bound {
    vars: Vec<(String, Var)>,
}

impl Bound {
    pub fn vars(&self) -> &[(String, Var)] {
        &self.vars
    }

    /// Collects the gradient of every bound leaf after a backward pass.
    /// Leaves the loss did not reach get a zero gradient.
    pub fn gradients<T: Scalar>(&self, tape: &Tape<T>) -> Gradients<T> {
        let mut g = Gradients::default();
        for (name, v) in &self.vars {
            let grad = match tape.grad(*v) {
                Some(t) => t.clone(),
                None => Tensor::zeros(tape.shape(*v).to_vec()),
            };
            g.0.insert(name.clone(), grad);
        }
        g
    }
}

/// Gradients keyed by parameter name.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Gradients<T>(pub BTreeMap<String, Tensor<T>>);

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.0.get(name)
    }

    /// Adds `other` into `self`, inserting names not yet present.
    pub fn accumulate(&mut self, other: &Gradients<T>) -> Result<()> {
        for (name, g) in &other.0 {
            match self.0.get_mut(name) {
                Some(mine) => {
                    if mine.shape() != g.shape() {
                        return Err(contract!("gradient {name}: shape {:?} vs {:?}", mine.shape(), g.shape()));
                    }
                    for (a, &b) in mine.data_mut().iter_mut().zip(g.data()) {
                        *a += b;
                    }
                }
                None => {
                    self.0.insert(name.clone(), g.clone());
                }
            }
        }
        Ok(())
    }

    pub fn scale(&mut self, s: T) {
        for g in self.0.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
}

/// Uniform initialization in `[-bound, bound]`.
pub fn uniform<T: Scalar>(shape: impl Into<Vec<usize>>, bound: f64, rng: &mut impl Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| T::of(rng.gen_range(-bound..=bound)))
}

/// He-uniform: bound `sqrt(6 / fan_in)`.
pub fn he_uniform<T: Scalar>(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, (6.0 / fan_in as f64).sqrt(), rng)
}

/// Projection-matrix initialization: bound `1 / sqrt(fan_in)`.
pub fn fan_in_uniform<T: Scalar>(shape: impl Into<Vec<usize>>, fan_in: usize, rng: &mut impl Rng) -> Tensor<T> {
    uniform(shape, 1.0 / (fan_in as f64).sqrt(), rng)
}
