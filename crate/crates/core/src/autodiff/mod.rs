//! Reverse-mode differentiation over dense row-major arrays.
//!
//! A [`Tape`] records every operation as it is evaluated. Values are kept
//! on the tape; [`Tape::backward`] walks the records in reverse once and
//! returns a [`Gradients`] table.

mod backward;
mod gradcheck;
mod ops;
mod optim;
mod params;

use std::collections::BTreeMap;
use std::sync::Arc;

pub use ops::{wigner_table_width, SparseMix};
pub use gradcheck::{check_gradients, GradCheck};
pub use optim::{Adam, Sgd};
pub use params::{ParamBlock, ParamStore};

use crate::error::contract;
use crate::tensor::IrrepsSpec;
use crate::{Real, Result};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn id(self) -> usize {
        self.0
    }
}

pub(crate) enum Op<T> {
    Leaf,
    Param,
    MatMul(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulCol(Var, Var),
    Scale(Var, T),
    Silu(Var),
    Sigmoid(Var),
    SumAll(Var),
    Concat(Vec<Var>),
    Slice(Var, usize),
    Gather(Var, Arc<Vec<usize>>),
    ScatterAdd(Var, Arc<Vec<usize>>),
    SegmentSoftmax(Var, Arc<Vec<usize>>, usize),
    ChannelScale(IrrepsSpec, Var, Var),
    Linear(IrrepsSpec, IrrepsSpec, Var, Vec<Var>),
    ShEdge(IrrepsSpec, Var, Arc<Vec<T>>),
    ShProject(IrrepsSpec, Var, Arc<Vec<T>>),
    Invariants(IrrepsSpec, Var, T),
    LayerNorm(IrrepsSpec, Var, T),
    Gate(IrrepsSpec, Var, Var),
    Route(Var, Arc<Vec<usize>>),
    Mix(Var, Arc<SparseMix<T>>),
    Film { spec: IrrepsSpec, x: Var, scale: Var, shift: Var, shift_all: bool },
    CrossEntropy(Var, usize),
    So3Conv(usize, Var, Var, Arc<Vec<T>>),
}

pub(crate) struct Node<T> {
    pub(crate) rows: usize,
    pub(crate) cols: usize,
    pub(crate) value: Vec<T>,
    pub(crate) op: Op<T>,
}

/// Append-only record of evaluated operations.
pub struct Tape<T: Real = f64> {
    pub(crate) nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new(), params: BTreeMap::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub(crate) fn push(&mut self, rows: usize, cols: usize, value: Vec<T>, op: Op<T>) -> Var {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { rows, cols, value, op });
        Var(self.nodes.len() - 1)
    }

    /// A constant input. Gradients are still computed for it.
    pub fn constant(&mut self, rows: usize, cols: usize, value: Vec<T>) -> Result<Var> {
        contract!(value.len() == rows * cols, "constant of shape {rows}x{cols} given {} values", value.len());
        Ok(self.push(rows, cols, value, Op::Leaf))
    }

    /// The parameter `name` from `store`, cast to `T`. Repeated requests
    /// return the same node.
    pub fn param(&mut self, store: &ParamStore, name: &str) -> Result<Var> {
        if let Some(&v) = self.params.get(name) {
            return Ok(v);
        }
        let block = store.get(name)?;
        let value = block.data.iter().map(|v| T::c(*v)).collect();
        let v = self.push(block.rows, block.cols, value, Op::Param);
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn value(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        let n = &self.nodes[v.0];
        (n.rows, n.cols)
    }

    pub fn scalar(&self, v: Var) -> T {
        self.nodes[v.0].value[0]
    }

    /// Parameters fetched onto this tape, by name.
    pub fn params(&self) -> &BTreeMap<String, Var> {
        &self.params
    }
}

/// Gradient buffers indexed by node.
pub struct Gradients<T: Real = f64> {
    pub(crate) grads: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient of `v`, or `None` if the loss does not depend on it.
    pub fn get(&self, v: Var) -> Option<&[T]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradient for every parameter in `store`, zero where unreachable.
    pub fn param_grads(&self, tape: &Tape<T>, store: &ParamStore) -> BTreeMap<String, Vec<f64>> {
        store
            .iter()
            .map(|(name, block)| {
                let g = tape
                    .params
                    .get(name)
                    .and_then(|v| self.get(*v))
                    .map(|g| g.iter().map(|x| x.as_f64()).collect())
                    .unwrap_or_else(|| vec![0.0; block.data.len()]);
                (name.clone(), g)
            })
            .collect()
    }
}

#[cfg(test)]
mod tests;
