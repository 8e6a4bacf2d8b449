//! Named parameter storage and its binding onto a [`Graph`].
//!
//! A [`Layout`] lists every trainable tensor once. Network stages hold
//! [`ParamId`]s into it, so a stage that runs several times (the shared
//! encoder) refers to the same tensors each time.

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{CheckpointError, Error, Result};
use crate::graph::{Graph, Var};
use crate::tensor::{Real, Shape, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }

    pub(crate) fn from_index(i: usize) -> Self {
        ParamId(i)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in `±sqrt(6 / fan_in)`.
    HeUniform {
        fan_in: usize,
    },
    Zeros,
    Constant(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Shape,
    pub init: Init,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Layout {
    specs: Vec<ParamSpec>,
}

impl Layout {
    pub fn new() -> Self {
        Layout::default()
    }

    pub fn add(&mut self, name: impl Into<String>, shape: Shape, init: Init) -> ParamId {
        let name = name.into();
        debug_assert!(
            self.specs.iter().all(|s| s.name != name),
            "duplicate parameter {name}"
        );
        self.specs.push(ParamSpec { name, shape, init });
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

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.specs.len()).map(ParamId)
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.specs.iter().position(|s| s.name == name).map(ParamId)
    }

    /// Total number of scalars.
    pub fn numel(&self) -> usize {
        self.specs.iter().map(|s| s.shape.numel()).sum()
    }

    pub fn zeros<T: Real>(&self) -> ParamStore<T> {
        ParamStore {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors: self.specs.iter().map(|s| Tensor::zeros(s.shape)).collect(),
        }
    }

    /// Seeded initialization following each tensor's [`Init`].
    pub fn init<T: Real>(&self, seed: u64) -> ParamStore<T> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = self.zeros::<T>();
        for (spec, t) in self.specs.iter().zip(&mut store.tensors) {
            match spec.init {
                Init::HeUniform { fan_in } => {
                    let bound = (6.0 / fan_in as f64).sqrt();
                    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
                    for v in t.data_mut() {
                        *v = T::lit(dist.sample(&mut rng));
                    }
                }
                Init::Constant(c) => t.data_mut().fill(T::lit(c)),
                Init::Zeros => {}
            }
        }
        store
    }

    /// Checks that `names`/`shapes` describe exactly this layout, in any order,
    /// and returns the tensors reordered to match it.
    pub fn arrange<T: Real>(
        &self,
        mut entries: Vec<(String, Tensor<T>)>,
    ) -> std::result::Result<ParamStore<T>, CheckpointError> {
        let mut tensors = Vec::with_capacity(self.specs.len());
        for spec in &self.specs {
            let pos = entries
                .iter()
                .position(|(n, _)| *n == spec.name)
                .ok_or_else(|| CheckpointError::MissingTensor(spec.name.clone()))?;
            let (name, t) = entries.swap_remove(pos);
            if t.shape() != spec.shape {
                return Err(CheckpointError::ShapeMismatch {
                    name,
                    expected: spec.shape,
                    found: t.shape(),
                });
            }
            tensors.push(t);
        }
        if let Some((name, _)) = entries.into_iter().next() {
            return Err(CheckpointError::UnexpectedTensor(name));
        }
        Ok(ParamStore {
            names: self.specs.iter().map(|s| s.name.clone()).collect(),
            tensors,
        })
    }
}

/// Parameter values in [`Layout`] order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
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

    pub fn by_name(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.tensors[i])
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Tensor::all_finite)
    }

    pub fn check_finite(&self) -> Result<()> {
        match self.iter().find(|(_, t)| !t.all_finite()) {
            Some((name, _)) => Err(Error::NonFinite(format!("parameter {name}"))),
            None => Ok(()),
        }
    }
}

/// Parameters recorded on one graph, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    /// Records every parameter; those for which `trainable` returns false are
    /// recorded as constants.
    pub fn new<T: Real>(
        g: &mut Graph<T>,
        store: &ParamStore<T>,
        trainable: impl Fn(ParamId) -> bool,
    ) -> Self {
        let vars = store
            .tensors
            .iter()
            .enumerate()
            .map(|(i, t)| {
                if trainable(ParamId(i)) {
                    g.param(t.clone())
                } else {
                    g.constant(t.clone())
                }
            })
            .collect();
        Bound { vars }
    }

    /// Binds every parameter as trainable.
    pub fn all<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>) -> Self {
        Self::new(g, store, |_| true)
    }

    /// Binds every parameter as a constant (inference).
    pub fn frozen<T: Real>(g: &mut Graph<T>, store: &ParamStore<T>) -> Self {
        Self::new(g, store, |_| false)
    }

    /// Uses existing graph values as the parameters, in layout order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }
}
