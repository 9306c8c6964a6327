use std::collections::BTreeMap;
use std::fmt;
use std::ops::Index;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::scalar::Scalar;
use super::tape::{Tape, Var};
use super::tensor::Tensor;

/// Learning-rate group a parameter is scheduled under.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum LrGroup {
    Vision,
    Graph,
    Other,
}

impl LrGroup {
    pub const ALL: [LrGroup; 3] = [LrGroup::Vision, LrGroup::Graph, LrGroup::Other];

    pub fn tag(self) -> u8 {
        match self {
            LrGroup::Vision => 0,
            LrGroup::Graph => 1,
            LrGroup::Other => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|g| g.tag() == tag)
    }

    pub fn name(self) -> &'static str {
        match self {
            LrGroup::Vision => "vision",
            LrGroup::Graph => "graph",
            LrGroup::Other => "other",
        }
    }
}

impl fmt::Display for LrGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter<T> {
    /// Dot-separated path, e.g. `han.l0.Artwork-Author-Artwork.h1.w`.
    pub name: String,
    pub tensor: Tensor<T>,
    pub lr_group: LrGroup,
}

/// Index of a parameter in its [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ParamError {
    #[error("parameter {0} registered twice")]
    Duplicate(String),
    #[error("unknown parameter {0}")]
    Unknown(String),
}

/// Registry of every trainable tensor of a model.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    by_name: BTreeMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        Self {
            params: Vec::new(),
            by_name: BTreeMap::new(),
        }
    }

    pub fn register(
        &mut self,
        name: impl Into<String>,
        tensor: Tensor<T>,
        lr_group: LrGroup,
    ) -> Result<ParamId, ParamError> {
        let name = name.into();
        if self.by_name.contains_key(&name) {
            return Err(ParamError::Duplicate(name));
        }
        self.by_name.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            tensor,
            lr_group,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Parameter<T> {
        &mut self.params[id.0]
    }

    pub fn id(&self, name: &str) -> Result<ParamId, ParamError> {
        self.by_name
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| ParamError::Unknown(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Parameter<T>)> {
        self.params.iter().enumerate().map(|(i, p)| (ParamId(i), p))
    }

    pub fn ids_with_prefix<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = ParamId> + 'a {
        self.iter()
            .filter(move |(_, p)| p.name.starts_with(prefix))
            .map(|(id, _)| id)
    }

    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| p.tensor.clone()).collect()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.tensor.len()).sum()
    }

    /// Records every parameter as a trainable leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| tape.leaf(p.tensor.clone()))
                .collect(),
        )
    }

    /// Records every parameter as a constant (inference).
    pub fn bind_frozen(&self, tape: &mut Tape<T>) -> BoundParams {
        BoundParams(
            self.params
                .iter()
                .map(|p| tape.constant(p.tensor.clone()))
                .collect(),
        )
    }
}

/// Tape handles of a [`ParamStore`], indexed by [`ParamId`].
#[derive(Debug, Clone)]
pub struct BoundParams(Vec<Var>);

impl BoundParams {
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Self(vars)
    }

    pub fn vars(&self) -> &[Var] {
        &self.0
    }
}

impl Index<ParamId> for BoundParams {
    type Output = Var;

    fn index(&self, id: ParamId) -> &Var {
        &self.0[id.0]
    }
}

/// Seeded initializer for parameter tensors.
#[derive(Debug, Clone)]
pub struct Initializer {
    rng: ChaCha8Rng,
}

impl Initializer {
    pub fn new(seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// Normal with std `1/sqrt(fan_in)` scaled by `gain`.
    pub fn matrix<T: Scalar>(&mut self, fan_in: usize, fan_out: usize, gain: f64) -> Tensor<T> {
        let std = gain / (fan_in.max(1) as f64).sqrt();
        Tensor::randn(&[fan_in, fan_out], std, &mut self.rng)
    }

    pub fn normal<T: Scalar>(&mut self, shape: &[usize], std: f64) -> Tensor<T> {
        Tensor::randn(shape, std, &mut self.rng)
    }
}
