//! Named parameter registry and storage.
//!
//! Building a model only records names, shapes and initialisers in a
//! [`ParamRegistry`]; values are materialised separately into a
//! [`ParamStore`] so that parameter accounting never allocates weights.

use std::ops::Index;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autodiff::{Gradients, Tape, Var};
use crate::tensor::{Float, Tensor, TensorError};

/// Standard deviation of the truncated-normal initialiser.
pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Init {
    /// Normal with the given std, resampled outside ±2 std.
    TruncNormal(f64),
    Zeros,
    Ones,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub init: Init,
}

impl ParamSpec {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamRegistry {
    specs: Vec<ParamSpec>,
}

impl ParamRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: &[usize], init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        self.specs.push(ParamSpec {
            name,
            shape: shape.to_vec(),
            init,
        });
        ParamId(self.specs.len() - 1)
    }

    pub fn specs(&self) -> &[ParamSpec] {
        &self.specs
    }

    pub fn len(&self) -> usize {
        self.specs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.specs.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &ParamSpec {
        &self.specs[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Total scalar parameter count.
    pub fn numel(&self) -> usize {
        self.specs.iter().map(ParamSpec::numel).sum()
    }
}

/// Materialised parameter values, indexed by [`ParamId`].
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    names: Arc<[String]>,
    tensors: Vec<Arc<Tensor<T>>>,
}

impl<T: Float> ParamStore<T> {
    /// Draws every parameter from its initialiser with one seeded stream,
    /// in registration order.
    pub fn init(registry: &ParamRegistry, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let tensors = registry
            .specs()
            .iter()
            .map(|spec| {
                let t = match spec.init {
                    Init::Zeros => Tensor::zeros(&spec.shape),
                    Init::Ones => Tensor::ones(&spec.shape),
                    Init::TruncNormal(std) => {
                        let normal = Normal::new(0.0, std).expect("finite std");
                        Tensor::from_fn(&spec.shape, |_| loop {
                            let v: f64 = normal.sample(&mut rng);
                            if v.abs() <= 2.0 * std {
                                break T::from_f64(v);
                            }
                        })
                    }
                };
                Arc::new(t)
            })
            .collect();
        ParamStore {
            names: registry.specs().iter().map(|s| s.name.clone()).collect(),
            tensors,
        }
    }

    /// Wraps existing tensors, checking them against the registry.
    pub fn from_tensors(registry: &ParamRegistry, tensors: Vec<Tensor<T>>) -> Result<Self, TensorError> {
        if tensors.len() != registry.len() {
            return Err(TensorError::contract(
                "param_store",
                format!("{} tensors for {} parameters", tensors.len(), registry.len()),
            ));
        }
        for (spec, t) in registry.specs().iter().zip(&tensors) {
            if t.shape() != spec.shape.as_slice() {
                return Err(TensorError::shape("param_store", &spec.shape, t.shape()));
            }
        }
        Ok(ParamStore {
            names: registry.specs().iter().map(|s| s.name.clone()).collect(),
            tensors: tensors.into_iter().map(Arc::new).collect(),
        })
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    /// Mutable access; copies only if a tape still shares the tensor.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.tensors[id.0])
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<(), TensorError> {
        if value.shape() != self.get(id).shape() {
            return Err(TensorError::shape("param_set", self.get(id).shape(), value.shape()));
        }
        self.tensors[id.0] = Arc::new(value);
        Ok(())
    }

    pub fn fill(&mut self, id: ParamId, value: T) {
        for v in self.get_mut(id).data_mut() {
            *v = value;
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.tensors
            .iter()
            .enumerate()
            .map(move |(i, t)| (ParamId(i), self.names[i].as_str(), t.as_ref()))
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.len()).sum()
    }

    pub fn cast<U: Float>(&self) -> ParamStore<U> {
        ParamStore {
            names: Arc::clone(&self.names),
            tensors: self.tensors.iter().map(|t| Arc::new(t.cast())).collect(),
        }
    }

    /// Registers every parameter as a differentiable leaf on `tape`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.leaf_shared(Arc::clone(t)))
                .collect(),
        }
    }
}

/// Parameters bound to one tape.
pub struct Bound<'t, T: Float> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Float> Bound<'t, T> {
    /// Wraps variables already on a tape, in registry order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> &Var<'t, T> {
        &self.vars[id.0]
    }

    /// Gradient per parameter, zeros where the loss does not depend on it.
    pub fn collect_grads(&self, grads: &Gradients<T>) -> Vec<Tensor<T>> {
        self.vars.iter().map(|v| grads.get_or_zeros(v)).collect()
    }
}

impl<'t, T: Float> Index<ParamId> for Bound<'t, T> {
    type Output = Var<'t, T>;

    fn index(&self, id: ParamId) -> &Self::Output {
        &self.vars[id.0]
    }
}
