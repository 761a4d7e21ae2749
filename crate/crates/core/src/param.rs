//! Named parameter storage shared by the model, the optimizer, momentum
//! encoders and checkpoints.

use crate::error::{contract_err, shape_err, Result};
use crate::tensor::{Gradients, Real, Tape, Tensor, Var};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::HashMap;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// How a freshly registered parameter is filled.
#[derive(Clone, Copy, Debug)]
pub enum Init {
    Zeros,
    Ones,
    /// Uniform in `±√(6 / (fan_in + fan_out))`.
    XavierUniform {
        fan_in: usize,
        fan_out: usize,
    },
}

/// Ordered collection of named tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<F> {
    names: Vec<String>,
    tensors: Vec<Tensor<F>>,
    lookup: HashMap<String, usize>,
}

impl<F: Real> Default for ParamStore<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Real> ParamStore<F> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
            lookup: HashMap::new(),
        }
    }

    pub fn add(
        &mut self,
        name: impl Into<String>,
        shape: &[usize],
        init: Init,
        rng: &mut ChaCha8Rng,
    ) -> ParamId {
        let name = name.into();
        assert!(
            !self.lookup.contains_key(&name),
            "parameter {name} registered twice"
        );
        let numel: usize = shape.iter().product();
        let data = match init {
            Init::Zeros => vec![F::zero(); numel],
            Init::Ones => vec![F::one(); numel],
            Init::XavierUniform { fan_in, fan_out } => {
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                (0..numel)
                    .map(|_| F::of(rng.gen_range(-bound..bound)))
                    .collect()
            }
        };
        let tensor = Tensor::new(shape, data).expect("registered shape must be valid");
        self.lookup.insert(name.clone(), self.names.len());
        self.names.push(name);
        self.tensors.push(tensor);
        ParamId(self.names.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total scalar count.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.lookup.get(name).map(|&i| ParamId(i))
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<F> {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor<F>> {
        self.id(name).map(|id| self.get(id))
    }

    /// Replaces a tensor's values; shapes must agree.
    pub fn set(&mut self, id: ParamId, value: Tensor<F>) -> Result<()> {
        if value.shape() != self.tensors[id.0].shape() {
            return Err(shape_err!(
                "{} expects shape {:?}, got {:?}",
                self.names[id.0],
                self.tensors[id.0].shape(),
                value.shape()
            ));
        }
        self.tensors[id.0] = value;
        Ok(())
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<F>)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn cast<G: Real>(&self) -> ParamStore<G> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            lookup: self.lookup.clone(),
        }
    }

    /// Puts every parameter on `tape` as a leaf.
    pub fn bind(&self, tape: &mut Tape<F>) -> Bound {
        Bound {
            vars: self.tensors.iter().map(|t| tape.leaf(t.clone())).collect(),
        }
    }

    /// Same as [`bind`](Self::bind) but every leaf is a constant.
    pub fn bind_frozen(&self, tape: &mut Tape<F>) -> Bound {
        Bound {
            vars: self
                .tensors
                .iter()
                .map(|t| tape.constant(t.clone()))
                .collect(),
        }
    }

    /// Gradients for every parameter, in store order.
    pub fn collect_grads(
        &self,
        tape: &Tape<F>,
        bound: &Bound,
        grads: &Gradients<F>,
    ) -> Vec<Tensor<F>> {
        bound.vars.iter().map(|&v| grads.wrt(tape, v)).collect()
    }

    /// Checks that two stores hold the same names with the same shapes.
    pub fn check_compatible(&self, other: &ParamStore<F>) -> Result<()> {
        if self.names != other.names {
            return Err(contract_err!("parameter name lists differ"));
        }
        for (i, (a, b)) in self.tensors.iter().zip(&other.tensors).enumerate() {
            if a.shape() != b.shape() {
                return Err(shape_err!(
                    "{}: {:?} vs {:?}",
                    self.names[i],
                    a.shape(),
                    b.shape()
                ));
            }
        }
        Ok(())
    }
}

/// Parameters bound as leaves on one tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Bound {
    vars: Vec<Var>,
}

impl Bound {
    #[inline]
    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    /// Swaps in a different node for one parameter.
    pub fn with_override(&self, id: ParamId, var: Var) -> Bound {
        let mut vars = self.vars.clone();
        vars[id.0] = var;
        Bound { vars }
    }
}
