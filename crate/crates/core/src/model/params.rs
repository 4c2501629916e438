//! Named parameter storage and per-forward graph binding.

use rcft_tensor::{BnMode, BnState, Graph, Scalar, Tensor, Var};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// Partition label of a stored tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    /// Updated by the optimizer.
    Trainable,
    /// Never updated and never tracked (scorer internals).
    Frozen,
    /// Non-learned state such as batch-norm running statistics.
    Buffer,
}

impl Role {
    pub fn code(self) -> u8 {
        match self {
            Role::Trainable => 0,
            Role::Frozen => 1,
            Role::Buffer => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Role> {
        match c {
            0 => Some(Role::Trainable),
            1 => Some(Role::Frozen),
            2 => Some(Role::Buffer),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry<T: Scalar> {
    pub name: String,
    pub role: Role,
    pub tensor: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T: Scalar> {
    entries: Vec<Entry<T>>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore { entries: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, role: Role, tensor: Tensor<T>) -> ParamId {
        let name = name.into();
        debug_assert!(self.find(&name).is_none(), "duplicate parameter {name}");
        let tensor = tensor.with_requires_grad(role == Role::Trainable);
        self.entries.push(Entry { name, role, tensor });
        ParamId(self.entries.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[Entry<T>] {
        &self.entries
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id.0].tensor
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.entries[id.0].tensor
    }

    pub fn role(&self, id: ParamId) -> Role {
        self.entries[id.0].role
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn count_role(&self, role: Role) -> usize {
        self.entries
            .iter()
            .filter(|e| e.role == role)
            .map(|e| e.tensor.numel())
            .sum()
    }

    /// Replaces the values of an entry, keeping its role and shape.
    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let e = &mut self.entries[id.0];
        if e.tensor.numel() != values.len() {
            return Err(Error::State(format!(
                "parameter {} expects {} values, got {}",
                e.name,
                e.tensor.numel(),
                values.len()
            )));
        }
        e.tensor.data_mut().copy_from_slice(values);
        Ok(())
    }
}

/// He-style fan-in normal initialization, `N(0, 2 / fan_in)`.
pub fn he_normal<T: Scalar, R: Rng>(rng: &mut R, shape: &[usize], fan_in: usize) -> Tensor<T> {
    let std = (2.0 / fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let data = (0..n)
        .map(|_| T::of_f64(std * rng.sample::<f64, _>(StandardNormal)))
        .collect();
    Tensor::new(shape, data).expect("shape is non-empty")
}

enum Access<'s, T: Scalar> {
    Shared(&'s ParamStore<T>),
    Exclusive(&'s mut ParamStore<T>),
}

/// One forward pass: a fresh graph plus lazily bound parameters.
///
/// Trainable parameters are recorded as tracked leaves; frozen ones as
/// untracked leaves. Batch-norm running statistics are read from the store
/// and, in train mode, written back to it. Eval sessions only borrow the
/// store, so several may run concurrently over one model.
pub struct Session<'s, T: Scalar> {
    pub graph: Graph<T>,
    store: Access<'s, T>,
    bound: Vec<Option<Var>>,
    mode: BnMode,
}

impl<'s, T: Scalar> Session<'s, T> {
    pub fn train(store: &'s mut ParamStore<T>) -> Self {
        let n = store.len();
        Session {
            graph: Graph::new(),
            store: Access::Exclusive(store),
            bound: vec![None; n],
            mode: BnMode::Train,
        }
    }

    pub fn eval(store: &'s ParamStore<T>) -> Self {
        Session {
            graph: Graph::new(),
            bound: vec![None; store.len()],
            store: Access::Shared(store),
            mode: BnMode::Eval,
        }
    }

    pub fn mode(&self) -> BnMode {
        self.mode
    }

    pub fn store(&self) -> &ParamStore<T> {
        match &self.store {
            Access::Shared(s) => s,
            Access::Exclusive(s) => s,
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.bound[id.0] {
            return v;
        }
        let e = match &self.store {
            Access::Shared(s) => &s.entries[id.0],
            Access::Exclusive(s) => &s.entries[id.0],
        };
        let v = match e.role {
            Role::Trainable => self.graph.param(&e.tensor),
            Role::Frozen | Role::Buffer => self.graph.constant(e.tensor.clone()),
        };
        self.bound[id.0] = Some(v);
        v
    }

    /// Batch normalization using the `[2, C]` (mean row, var row) buffer `stats`.
    pub fn batch_norm(&mut self, x: Var, gamma: ParamId, beta: ParamId, stats: ParamId) -> Result<Var> {
        let g = self.param(gamma);
        let b = self.param(beta);
        let t = self.store().get(stats);
        let c = t.shape()[1];
        let mut state = BnState::from_parts(t.data()[..c].to_vec(), t.data()[c..].to_vec())?;
        let y = self.graph.batch_norm(x, g, b, &mut state, self.mode)?;
        if let Access::Exclusive(store) = &mut self.store {
            let t = store.get_mut(stats);
            t.data_mut()[..c].copy_from_slice(&state.mean);
            t.data_mut()[c..].copy_from_slice(&state.var);
        }
        Ok(y)
    }

    /// Gradients per parameter id after `graph.backward`; `None` for
    /// parameters that were not bound or not tracked.
    pub fn grads(&self) -> Vec<Option<Vec<T>>> {
        self.bound
            .iter()
            .map(|b| b.and_then(|v| self.graph.grad(v).map(|g| g.to_vec())))
            .collect()
    }
}
