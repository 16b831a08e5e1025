//! Named trainable parameters and their binding onto a tape.

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;

use crate::autodiff::{Grads, Tape, Var};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Index of a parameter inside its [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug)]
pub struct Parameter<T> {
    pub name: String,
    pub value: Rc<Tensor<T>>,
    pub grad: Option<Tensor<T>>,
}

/// Ordered collection of uniquely named parameters.
#[derive(Clone, Debug, Default)]
pub struct ParamStore<T> {
    params: Vec<Parameter<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            params: Vec::new(),
            index: HashMap::new(),
        }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor<T>) -> Result<ParamId> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::invalid("param_store", format!("duplicate parameter name {name:?}")));
        }
        value.ensure_finite("param_store")?;
        self.index.insert(name.clone(), self.params.len());
        self.params.push(Parameter {
            name,
            value: Rc::new(value),
            grad: None,
        });
        Ok(ParamId(self.params.len() - 1))
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter<T>> {
        self.params.iter()
    }

    pub fn get(&self, id: ParamId) -> &Parameter<T> {
        &self.params[id.0]
    }

    pub fn id_of(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn value(&self, id: ParamId) -> &Tensor<T> {
        &self.params[id.0].value
    }

    pub fn set_value(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let p = &mut self.params[id.0];
        if p.value.shape() != value.shape() {
            return Err(Error::invalid(
                "param_store",
                format!("{}: shape {:?} does not match {:?}", p.name, value.shape(), p.value.shape()),
            ));
        }
        value.ensure_finite("param_store")?;
        p.value = Rc::new(value);
        Ok(())
    }

    /// Mutable access for optimizers; clones the buffer only if a tape still holds it.
    pub(crate) fn value_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Rc::make_mut(&mut self.params[id.0].value)
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    /// Records every parameter as a gradient-carrying leaf.
    pub fn bind<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf_shared(p.value.clone(), true)).collect(),
        }
    }

    /// Records every parameter as a constant.
    pub fn bind_frozen<'t>(&self, tape: &'t Tape<T>) -> Bound<'t, T> {
        Bound {
            vars: self.params.iter().map(|p| tape.leaf_shared(p.value.clone(), false)).collect(),
        }
    }

    /// Adds the gradients of a backward pass into the parameter accumulators.
    pub fn accumulate(&mut self, bound: &Bound<'_, T>, grads: &Grads<T>) {
        for (p, &var) in self.params.iter_mut().zip(&bound.vars) {
            let Some(g) = grads.raw(var) else { continue };
            match p.grad.as_mut() {
                Some(acc) => acc.data_mut().iter_mut().zip(g).for_each(|(a, &b)| *a += b),
                None => p.grad = Some(Tensor::from_parts(p.value.shape().to_vec(), g.to_vec())),
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad = None;
        }
    }

    /// Overwrites the gradient accumulator. Values are not checked here; the optimizer rejects non-finite ones.
    pub fn set_grad(&mut self, id: ParamId, grad: Tensor<T>) {
        self.params[id.0].grad = Some(grad);
    }

    pub fn grad(&self, id: ParamId) -> Option<&Tensor<T>> {
        self.params[id.0].grad.as_ref()
    }

    /// Copies all values into a store of another scalar type.
    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Parameter {
                    name: p.name.clone(),
                    value: Rc::new(p.value.cast()),
                    grad: None,
                })
                .collect(),
            index: self.index.clone(),
        }
    }

    pub fn values(&self) -> Vec<Tensor<T>> {
        self.params.iter().map(|p| (*p.value).clone()).collect()
    }
}

/// Parameters recorded on one tape.
pub struct Bound<'t, T> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Scalar> Bound<'t, T> {
    /// Wraps externally created vars, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn get(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id.0]
    }

    pub fn opt(&self, id: Option<ParamId>) -> Option<Var<'t, T>> {
        id.map(|id| self.vars[id.0])
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Kaiming-uniform samples with bound `sqrt(6 / fan_in)`.
pub fn kaiming_uniform<T: Scalar, R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Tensor<T> {
    let bound = (6.0 / fan_in.max(1) as f64).sqrt();
    Tensor::uniform(shape.to_vec(), -bound, bound, rng)
}
